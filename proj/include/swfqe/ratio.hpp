#pragma once

#include "swfqe/environments.hpp"
#include "swfqe/mdp.hpp"
#include "swfqe/sampling.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace swfqe {

enum class RatioMethod { dice, resolvent, exact };

std::string to_string(RatioMethod method);
RatioMethod parse_ratio_method(const std::string& name);

struct RatioEstimate {
  RatioTable values;
  RatioMethod method = RatioMethod::exact;
  std::optional<double> gamma_prime;
  /// DICE: mass removed by clipping negative values. Resolvent: a-posteriori bound on
  /// the distance to the fixed point in L1(nu_b) at exit.
  double normalization_residual = 0.0;
  /// Some next states were never observed; their rows of K are zero.
  bool restricted_support = false;
  int iterations = 0;
  /// Resolvent Picard step sizes in L1(nu_b), one per iteration.
  std::vector<double> residuals;
};

// ---------------------------------------------------------------------------
// DICE saddle point with linear classes g = Phi_g c, h = Phi_h beta.

/**
 * Moments of the min-max objective
 *   c^T A beta - 1/2 beta^T B beta + penalty * (m^T c - 1)^2
 * with A = E[phi_g(s,a) (phi_h(s,a) - phi_h(s',a'))^T], B = E[phi_h phi_h^T],
 * m = E[phi_g(s,a)]. `nu` is the distribution the expectations are taken
 * under, used to renormalize the final estimate.
 */
struct DiceMoments {
  Matrix cross;
  Matrix critic_gram;
  Vector g_mean;
  StateActionDist nu;
};

DiceMoments dice_moments(const TransitionDataset& data, const FeatureMap& g_features, const FeatureMap& h_features,
                         Index n_actions);

/// Same moments with exact expectations under nu_b, P and the target policy.
DiceMoments dice_population_moments(const TabularMdp& mdp, const Policy& target, const StateActionDist& nu_b,
                                    const FeatureMap& g_features, const FeatureMap& h_features);

/**
 * Closed-form saddle point: beta*(c) = (B + reg I)^{-1} A^T c, then the
 * outer quadratic (A (B + reg I)^{-1} A^T + 2 penalty m m^T) c = 2 penalty m
 * is solved in the minimum-norm sense. Negative values are clipped and the
 * table renormalized to mean 1 under nu.
 */
RatioEstimate dice_solve(const DiceMoments& moments, const FeatureMap& g_features, double reg = 1e-8,
                         double penalty = 1.0);

RatioEstimate dice_estimate(const TransitionDataset& data, const FeatureMap& g_features, const FeatureMap& h_features,
                            Index n_actions, double reg = 1e-8, double penalty = 1.0);

/// Optimal value of the inner supremum over beta for a fixed c.
double dice_inner_value(const DiceMoments& moments, const Vector& c, double reg = 1e-8);

// ---------------------------------------------------------------------------
// Discounted resolvent w = (1 - g') pi/b + g' K w

struct ResolventOptions {
  int max_iters = 1000000;
  double tol = 1e-10;
  double agreement_tol = 1e-8;
};

/// Exact K from the MDP and nu_b; cross-checked against a direct solve.
RatioEstimate resolvent_ratio_exact(const TabularMdp& mdp, const Policy& behavior, const Policy& target,
                                    const StateActionDist& nu_b, double gamma_prime,
                                    const ResolventOptions& options = {});

/// Count-based plug-in K from a dataset.
RatioEstimate resolvent_ratio_empirical(const TransitionDataset& data, Index n_states, const Policy& behavior,
                                        const Policy& target, double gamma_prime,
                                        const ResolventOptions& options = {});

// ---------------------------------------------------------------------------
// Quality metrics

/// max_j |E_nu[w (f_j - pi P f_j)]| over one-hot test functions, exact.
double variational_residual(const RatioTable& w, const StateActionDist& nu_b, const TabularMdp& mdp,
                            const Policy& target);

/// Sample version using (s, a, s', a') tuples.
double variational_residual(const RatioTable& w, const TransitionDataset& data, Index n_states, Index n_actions);

/// sqrt(sum_{mu > 0} mu (w_hat / w - 1)^2)
double ratio_error(const RatioTable& w_hat, const RatioTable& w, const StateActionDist& mu);

/// CSV with header s,a,w.
void write_ratio_csv(std::ostream& out, const RatioTable& table, Index n_actions);

}  // namespace swfqe
