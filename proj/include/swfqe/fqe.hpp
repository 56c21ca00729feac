#pragma once

#include "swfqe/mdp.hpp"
#include "swfqe/sampling.hpp"

#include <optional>
#include <string>
#include <vector>

namespace swfqe {

/**
 * Weighted ridge regression: argmin_theta sum_i w_i (y_i - x_i^T theta)^2 + lambda |theta|^2.
 *
 * The normal equations are factored once, so the same design can be solved
 * against many target vectors.
 */
class WeightedRidge {
public:
  WeightedRidge(const Matrix& design, const Vector& weights, double lambda);

  Vector solve(const Vector& targets) const;
  /// Solve against a precomputed X^T W y.
  Vector solve_moment(const Vector& moment) const { return factor_.solve(moment); }
  /// X^T W
  const Matrix& weighted_design_t() const { return xtw_; }

private:
  Matrix xtw_;
  Eigen::LDLT<Matrix> factor_;
};

Vector weighted_ridge(const Matrix& design, const Vector& targets, const Vector& weights, double lambda);

enum class Weighting { unweighted, exact_ratio, estimated_ratio, custom };

std::string to_string(Weighting weighting);
Weighting parse_weighting(const std::string& name);

struct FqeConfig {
  Discount gamma{0.9};
  int iterations = 200;
  /// Ridge on the per-sample objective (1/n) sum_i w_i (..)^2 + ridge |theta|^2.
  double ridge = 1e-6;
  Weighting weighting = Weighting::unweighted;
  std::optional<Vector> theta0;  ///< zero when unset
  /// Targets use phi(s', a'_i) instead of sum_a' pi(a'|s') phi(s', a').
  bool sampled_next_action = false;
  double divergence_threshold = 1e12;
};

/// Ground truth available in simulation; enables the trace error columns.
struct FqeOracles {
  TabularMdp mdp;
  QTable q_star;
  LinearQ q_star_F;  ///< fixed point of Pi_F T in L2(mu) with the run's ridge
  StateActionDist mu;
  std::optional<StateActionDist> behavior;  ///< behavior-norm weights; empirical when unset
};

struct FqeIterate {
  Vector theta;
  double err_mu = 0.0;
  double err_behavior = 0.0;
  double eta = 0.0;
  double err_fixed_point = 0.0;
  bool diverged = false;
};

struct FqeTrace {
  std::vector<FqeIterate> iterates;  ///< K + 1 entries, iterate 0 included
  bool diverged = false;
  int diverged_at = -1;
  bool has_metrics = false;
};

/**
 * Fitted Q-evaluation with per-sample weights (Weighting::unweighted forces
 * w = 1). Bellman targets are R_i + gamma (pi Q_k)(S_i'). A run whose
 * coefficients leave the divergence threshold, or become non-finite, is
 * flagged and its iterates frozen from then on.
 */
FqeTrace fqe_run(const TransitionDataset& data, const FeatureMap& features, const Policy& target,
                 const FqeConfig& config, const std::optional<FqeOracles>& oracles = std::nullopt);

/// One exact-expectation step: Pi_F T applied to q_init, in L2(mu).
LinearQ population_step_oracle(const LinearQ& q_init, const TabularMdp& mdp, const Policy& target, Discount gamma,
                               const FeatureMap& features, const StateActionDist& mu, double ridge = 0.0);

/// Iterates population_step_oracle; eta_k is measured, not assumed zero.
FqeTrace fqe_population_run(const FeatureMap& features, const FqeConfig& config, const FqeOracles& oracles,
                            const Policy& target);

struct PicardReport {
  double min_slack = 0.0;
  double max_slack = 0.0;
  int checked = 0;
};

/**
 * Checks err_fp[k] <= gamma^k err_fp[0] + sum_{j<=k} gamma^{k-j} eta_j for
 * every k. The bound is the triangle inequality for a gamma-contraction and
 * holds for any iterate sequence, so a violation is a bug. Tolerance is
 * `tol` plus 1e-12 of the bound to absorb rounding at large magnitudes.
 */
PicardReport picard_diagnostics(const FqeTrace& trace, Discount gamma, double tol = 1e-8);

/// CSV export: k,err_mu,err_behavior,eta_k,err_fixed_point,diverged with '#' metadata lines.
void write_trace_csv(std::ostream& out, const FqeTrace& trace, const std::vector<std::string>& metadata = {});

}  // namespace swfqe
