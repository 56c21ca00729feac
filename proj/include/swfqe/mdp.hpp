#pragma once

#include "swfqe/core.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <optional>

namespace swfqe {

/// Discount factor in [0, 1).
class Discount {
public:
  explicit Discount(double gamma) : gamma_(gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw PreconditionError("discount must lie in [0, 1)");
  }
  double value() const { return gamma_; }
  operator double() const { return gamma_; }

private:
  double gamma_;
};

/**
 * Finite MDP. State-action pairs are flattened row-major by state then
 * action: pair(s, a) = s * n_actions + a. The transition matrix has one row
 * per pair and one column per next state.
 */
class TabularMdp {
public:
  TabularMdp(Index n_states, Index n_actions, Matrix transition, Vector reward);

  Index n_states() const { return n_states_; }
  Index n_actions() const { return n_actions_; }
  Index n_pairs() const { return n_states_ * n_actions_; }
  Index pair(Index s, Index a) const { return s * n_actions_ + a; }

  const Matrix& transition() const { return transition_; }
  const Vector& reward() const { return reward_; }

  /// Same dynamics with a replaced reward table.
  TabularMdp with_reward(Vector reward) const;

private:
  Index n_states_;
  Index n_actions_;
  Matrix transition_;
  Vector reward_;
};

/// Stochastic policy, one row of action probabilities per state.
class Policy {
public:
  explicit Policy(Matrix probs);

  Index n_states() const { return probs_.rows(); }
  Index n_actions() const { return probs_.cols(); }
  const Matrix& probs() const { return probs_; }
  double operator()(Index s, Index a) const { return probs_(s, a); }

private:
  Matrix probs_;
};

/// Probability vector over flattened state-action pairs.
class StateActionDist {
public:
  explicit StateActionDist(Vector mass);

  const Vector& mass() const { return mass_; }
  Index size() const { return mass_.size(); }
  double operator[](Index i) const { return mass_[i]; }

  /// Marginal over states.
  Vector state_marginal(Index n_actions) const;

  static StateActionDist uniform(Index n_pairs);

private:
  Vector mass_;
};

/// Q-functions are plain vectors over flattened pairs.
using QTable = Vector;

/// Linear function class {phi * theta}; one row per state-action pair.
class FeatureMap {
public:
  explicit FeatureMap(Matrix phi);

  Index n_pairs() const { return phi_.rows(); }
  Index dim() const { return phi_.cols(); }
  const Matrix& phi() const { return phi_; }

  QTable values(const Vector& theta) const {
    require_dims(theta.size() == dim(), "coefficient length does not match feature dimension");
    return phi_ * theta;
  }

  /// One-hot features spanning all functions of (s, a).
  static FeatureMap one_hot(Index n_pairs) { return FeatureMap(Matrix::Identity(n_pairs, n_pairs)); }

private:
  Matrix phi_;
};

/// Member of a linear function class.
struct LinearQ {
  Vector theta;

  QTable values(const FeatureMap& features) const { return features.values(theta); }
};

// ---------------------------------------------------------------------------
// Markov operators

/// (pi f)(s) = sum_a pi(a|s) f(s, a).
Vector policy_average(const Policy& pi, const QTable& q);

/// Row s is sum_a pi(a|s) phi(s, a).
Matrix policy_average_features(const Policy& pi, const Matrix& phi);

/// Column j is pi P phi_j.
Matrix expected_next_features(const TabularMdp& mdp, const Policy& pi, const Matrix& phi);

/// (pi P q)(s, a) = E[q(S', A') | s, a] with A' ~ pi(.|S').
QTable expected_next(const TabularMdp& mdp, const Policy& pi, const QTable& q);

/// Left action of the state-action chain: (m pi P)(s', a').
Vector push_forward(const TabularMdp& mdp, const Policy& pi, const Vector& m);

/// Dense state-action transition matrix of the chain (s,a) -> (s',a').
Matrix state_action_transition(const TabularMdp& mdp, const Policy& pi);

/// T q = r + gamma * pi P q.
QTable bellman_apply(const QTable& q, const TabularMdp& mdp, const Policy& pi, Discount gamma);

/// Unique fixed point of the Bellman operator by direct linear solve.
QTable solve_q_star(const TabularMdp& mdp, const Policy& pi, Discount gamma);

// ---------------------------------------------------------------------------
// Stationary distributions

struct StationaryOptions {
  double tol = 1e-12;
  int max_iters = 200000;
  /// Lazy chain m <- (m + m pi P) / 2; same fixed points, no periodicity.
  bool damping = false;
};

/**
 * Power iteration on the state-action chain. Pairs outside every closed
 * communicating class carry no stationary mass and are fixed at zero before
 * iterating; the iterate starts uniform over the remaining pairs.
 */
StateActionDist stationary_distribution(const TabularMdp& mdp, const Policy& pi,
                                        const StationaryOptions& options = {});

/// || m - m pi P ||_1
double stationarity_residual(const TabularMdp& mdp, const Policy& pi, const StateActionDist& dist);

// ---------------------------------------------------------------------------
// Weighted geometry

/// sqrt(sum_i dist_i * f_i^2)
template <typename DerivedF, typename DerivedW>
double weighted_norm(const Eigen::MatrixBase<DerivedF>& f, const Eigen::MatrixBase<DerivedW>& weights) {
  require_dims(f.size() == weights.size(), "weighted_norm: size mismatch");
  return std::sqrt((weights.array() * f.array().square()).sum());
}

template <typename DerivedF>
double weighted_norm(const Eigen::MatrixBase<DerivedF>& f, const StateActionDist& dist) {
  return weighted_norm(f, dist.mass());
}

/**
 * Least-squares projection onto span(phi) in L2(dist) with optional ridge.
 * Factors the weighted Gram matrix once so repeated projections are cheap.
 */
class WeightedProjector {
public:
  WeightedProjector(const FeatureMap& features, const StateActionDist& dist, double ridge);

  Vector coefficients(const QTable& target) const;
  QTable project(const QTable& target) const { return phi_ * coefficients(target); }

  /// phi^T D phi + ridge * I
  const Matrix& gram() const { return gram_; }
  /// phi^T D
  const Matrix& weighted_features_t() const { return phi_t_d_; }

private:
  Matrix phi_;
  Matrix phi_t_d_;
  Matrix gram_;
  Eigen::LDLT<Matrix> factor_;
};

LinearQ weighted_projection(const QTable& target, const FeatureMap& features, const StateActionDist& dist,
                            double ridge);

struct FixedPointOptions {
  double ridge = 0.0;
  double stationarity_tol = 1e-8;
  bool cross_check = true;
  double agreement_tol = 1e-8;
  int max_picard_iters = 2000000;
};

/**
 * Fixed point of Pi_F T in L2(dist), optionally with a replacement reward
 * table. Returned value comes from a direct linear solve; when
 * `cross_check` is on, Picard iteration of the projected operator must land
 * on the same point.
 */
LinearQ projected_fixed_point(const TabularMdp& mdp, const Policy& pi, Discount gamma, const FeatureMap& features,
                              const StateActionDist& dist, const std::optional<QTable>& reward_override = std::nullopt,
                              const FixedPointOptions& options = {});

struct ContractionEstimate {
  double factor = 0.0;
  Index support_size = 0;
  bool restricted = false;
};

/// Exact operator norm of q -> gamma * pi P q in L2(dist).
ContractionEstimate contraction_factor_estimate(const TabularMdp& mdp, const Policy& pi, Discount gamma,
                                                const StateActionDist& dist);

}  // namespace swfqe
