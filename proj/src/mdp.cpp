#include "swfqe/mdp.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <sstream>

namespace swfqe {

namespace {

constexpr double kRowSumTol = 1e-12;
constexpr double kDistSumTol = 1e-10;

// Pairs that belong to a closed communicating class of the chain. Every
// stationary distribution is supported on this set.
std::vector<bool> recurrent_pairs(const TabularMdp& mdp, const Policy& pi) {
  const Index n = mdp.n_pairs();
  std::vector<std::vector<Index>> succ(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index s = 0; s < mdp.n_states(); ++s) {
      if (mdp.transition()(i, s) <= 0.0) continue;
      for (Index a = 0; a < mdp.n_actions(); ++a)
        if (pi(s, a) > 0.0) succ[i].push_back(mdp.pair(s, a));
    }

  // Iterative Tarjan.
  std::vector<Index> index(n, -1), low(n, 0), comp(n, -1), stack;
  std::vector<bool> on_stack(n, false);
  Index counter = 0, n_comp = 0;
  struct Frame {
    Index node;
    std::size_t next;
  };
  for (Index root = 0; root < n; ++root) {
    if (index[root] >= 0) continue;
    std::vector<Frame> call{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call.empty()) {
      Frame& f = call.back();
      if (f.next < succ[f.node].size()) {
        const Index w = succ[f.node][f.next++];
        if (index[w] < 0) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          call.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.node] = std::min(low[f.node], index[w]);
        }
        continue;
      }
      const Index v = f.node;
      if (low[v] == index[v]) {
        Index w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp[w] = n_comp;
        } while (w != v);
        ++n_comp;
      }
      call.pop_back();
      if (!call.empty()) low[call.back().node] = std::min(low[call.back().node], low[v]);
    }
  }

  std::vector<bool> closed(static_cast<std::size_t>(n_comp), true);
  for (Index i = 0; i < n; ++i)
    for (Index j : succ[i])
      if (comp[j] != comp[i]) closed[comp[i]] = false;

  std::vector<bool> recurrent(n);
  for (Index i = 0; i < n; ++i) recurrent[i] = closed[comp[i]];
  return recurrent;
}

}  // namespace

// ---------------------------------------------------------------------------

TabularMdp::TabularMdp(Index n_states, Index n_actions, Matrix transition, Vector reward)
    : n_states_(n_states), n_actions_(n_actions), transition_(std::move(transition)), reward_(std::move(reward)) {
  if (n_states < 1 || n_actions < 1) throw PreconditionError("MDP needs at least one state and one action");
  require_dims(transition_.rows() == n_pairs() && transition_.cols() == n_states,
               "transition must have shape (n_states*n_actions) x n_states");
  require_dims(reward_.size() == n_pairs(), "reward must have one entry per state-action pair");
  if ((transition_.array() < 0.0).any()) throw PreconditionError("transition probabilities must be nonnegative");
  for (Index i = 0; i < n_pairs(); ++i)
    if (std::abs(transition_.row(i).sum() - 1.0) > kRowSumTol)
      throw PreconditionError("transition row does not sum to 1");
  if (!reward_.allFinite()) throw PreconditionError("rewards must be finite");
}

TabularMdp TabularMdp::with_reward(Vector reward) const {
  return TabularMdp(n_states_, n_actions_, transition_, std::move(reward));
}

Policy::Policy(Matrix probs) : probs_(std::move(probs)) {
  if (probs_.rows() < 1 || probs_.cols() < 1) throw PreconditionError("empty policy");
  if ((probs_.array() < 0.0).any()) throw PreconditionError("policy probabilities must be nonnegative");
  for (Index s = 0; s < probs_.rows(); ++s)
    if (std::abs(probs_.row(s).sum() - 1.0) > kRowSumTol) throw PreconditionError("policy row does not sum to 1");
}

StateActionDist::StateActionDist(Vector mass) : mass_(std::move(mass)) {
  if (mass_.size() < 1) throw PreconditionError("empty distribution");
  if (!mass_.allFinite() || (mass_.array() < 0.0).any())
    throw PreconditionError("distribution must be finite and nonnegative");
  if (std::abs(mass_.sum() - 1.0) > kDistSumTol) throw PreconditionError("distribution does not sum to 1");
}

Vector StateActionDist::state_marginal(Index n_actions) const {
  require_dims(n_actions > 0 && mass_.size() % n_actions == 0, "state_marginal: bad action count");
  return mass_.reshaped(n_actions, mass_.size() / n_actions).colwise().sum().transpose();
}

StateActionDist StateActionDist::uniform(Index n_pairs) {
  return StateActionDist(Vector::Constant(n_pairs, 1.0 / static_cast<double>(n_pairs)));
}

FeatureMap::FeatureMap(Matrix phi) : phi_(std::move(phi)) {
  if (phi_.cols() < 1) throw PreconditionError("feature map needs d >= 1");
  if (!phi_.allFinite()) throw PreconditionError("features must be finite");
}

// ---------------------------------------------------------------------------

Vector policy_average(const Policy& pi, const QTable& q) {
  require_dims(q.size() == pi.n_states() * pi.n_actions(), "policy_average: size mismatch");
  // q viewed as an n_actions x n_states column-major block is q(s, a) at (a, s).
  return (pi.probs().transpose().array() * q.reshaped(pi.n_actions(), pi.n_states()).array()).colwise().sum().transpose();
}

Matrix policy_average_features(const Policy& pi, const Matrix& phi) {
  require_dims(phi.rows() == pi.n_states() * pi.n_actions(), "policy_average_features: size mismatch");
  Matrix averaged = Matrix::Zero(pi.n_states(), phi.cols());
  for (Index s = 0; s < pi.n_states(); ++s)
    for (Index a = 0; a < pi.n_actions(); ++a) averaged.row(s) += pi(s, a) * phi.row(s * pi.n_actions() + a);
  return averaged;
}

Matrix expected_next_features(const TabularMdp& mdp, const Policy& pi, const Matrix& phi) {
  return mdp.transition() * policy_average_features(pi, phi);
}

static void check_shapes(const TabularMdp& mdp, const Policy& pi) {
  require_dims(pi.n_states() == mdp.n_states() && pi.n_actions() == mdp.n_actions(),
               "policy shape does not match MDP");
}

QTable expected_next(const TabularMdp& mdp, const Policy& pi, const QTable& q) {
  check_shapes(mdp, pi);
  require_dims(q.size() == mdp.n_pairs(), "Q-table size does not match MDP");
  return mdp.transition() * policy_average(pi, q);
}

Vector push_forward(const TabularMdp& mdp, const Policy& pi, const Vector& m) {
  check_shapes(mdp, pi);
  require_dims(m.size() == mdp.n_pairs(), "measure size does not match MDP");
  const Vector next_state = mdp.transition().transpose() * m;
  Vector out(mdp.n_pairs());
  for (Index s = 0; s < mdp.n_states(); ++s)
    for (Index a = 0; a < mdp.n_actions(); ++a) out[mdp.pair(s, a)] = next_state[s] * pi(s, a);
  return out;
}

Matrix state_action_transition(const TabularMdp& mdp, const Policy& pi) {
  check_shapes(mdp, pi);
  Matrix m(mdp.n_pairs(), mdp.n_pairs());
  for (Index s = 0; s < mdp.n_states(); ++s)
    for (Index a = 0; a < mdp.n_actions(); ++a) m.col(mdp.pair(s, a)) = mdp.transition().col(s) * pi(s, a);
  return m;
}

QTable bellman_apply(const QTable& q, const TabularMdp& mdp, const Policy& pi, Discount gamma) {
  return mdp.reward() + gamma.value() * expected_next(mdp, pi, q);
}

QTable solve_q_star(const TabularMdp& mdp, const Policy& pi, Discount gamma) {
  const Matrix lhs = Matrix::Identity(mdp.n_pairs(), mdp.n_pairs()) - gamma.value() * state_action_transition(mdp, pi);
  const Eigen::PartialPivLU<Matrix> lu(lhs);
  QTable q = lu.solve(mdp.reward());
  const double residual = (q - bellman_apply(q, mdp, pi, gamma)).lpNorm<Eigen::Infinity>();
  if (!q.allFinite() || residual > 1e-9 * std::max(1.0, q.lpNorm<Eigen::Infinity>()))
    throw SingularityError("Bellman linear solve failed numerically");
  return q;
}

// ---------------------------------------------------------------------------

StateActionDist stationary_distribution(const TabularMdp& mdp, const Policy& pi, const StationaryOptions& options) {
  check_shapes(mdp, pi);
  if (!(options.tol > 0.0)) throw PreconditionError("stationary_distribution: tol must be positive");
  const std::vector<bool> recurrent = recurrent_pairs(mdp, pi);
  Vector m = Vector::Zero(mdp.n_pairs());
  for (Index i = 0; i < m.size(); ++i)
    if (recurrent[i]) m[i] = 1.0;
  m /= m.sum();

  double residual = 0.0;
  for (int it = 0; it < options.max_iters; ++it) {
    const Vector next = push_forward(mdp, pi, m);
    residual = (next - m).lpNorm<1>();
    if (residual <= options.tol) return StateActionDist(m / m.sum());
    m = options.damping ? Vector(0.5 * (m + next)) : next;
    m /= m.sum();
  }
  throw ConvergenceError("power iteration did not converge (periodic chain? try damping)", residual);
}

double stationarity_residual(const TabularMdp& mdp, const Policy& pi, const StateActionDist& dist) {
  return (push_forward(mdp, pi, dist.mass()) - dist.mass()).lpNorm<1>();
}

// ---------------------------------------------------------------------------

WeightedProjector::WeightedProjector(const FeatureMap& features, const StateActionDist& dist, double ridge)
    : phi_(features.phi()) {
  require_dims(features.n_pairs() == dist.size(), "feature rows do not match distribution size");
  if (!(ridge >= 0.0)) throw PreconditionError("ridge must be nonnegative");
  phi_t_d_ = phi_.transpose() * dist.mass().asDiagonal();
  gram_ = phi_t_d_ * phi_;
  gram_.diagonal().array() += ridge;
  factor_.compute(gram_);
  if (ridge == 0.0 && near_singular(factor_))
    throw SingularityError("weighted Gram matrix is singular; use ridge > 0");
}

Vector WeightedProjector::coefficients(const QTable& target) const {
  require_dims(target.size() == phi_.rows(), "projection target size mismatch");
  return factor_.solve(phi_t_d_ * target);
}

LinearQ weighted_projection(const QTable& target, const FeatureMap& features, const StateActionDist& dist,
                            double ridge) {
  return LinearQ{WeightedProjector(features, dist, ridge).coefficients(target)};
}

LinearQ projected_fixed_point(const TabularMdp& mdp, const Policy& pi, Discount gamma, const FeatureMap& features,
                              const StateActionDist& dist, const std::optional<QTable>& reward_override,
                              const FixedPointOptions& options) {
  check_shapes(mdp, pi);
  require_dims(features.n_pairs() == mdp.n_pairs() && dist.size() == mdp.n_pairs(),
               "features/distribution do not match MDP");
  const double drift = stationarity_residual(mdp, pi, dist);
  if (drift > options.stationarity_tol) {
    std::ostringstream msg;
    msg << "distribution is not stationary (l1 residual " << drift << "); projected operator may not contract";
    throw PreconditionError(msg.str());
  }
  const QTable& reward = reward_override ? *reward_override : mdp.reward();
  require_dims(reward.size() == mdp.n_pairs(), "reward override size mismatch");

  const double g = gamma.value();
  const WeightedProjector projector(features, dist, options.ridge);
  const Matrix next_phi = expected_next_features(mdp, pi, features.phi());
  const Matrix coupling = projector.weighted_features_t() * next_phi;
  const Vector rhs = projector.weighted_features_t() * reward;

  const Matrix lhs = projector.gram() - g * coupling;
  const Vector theta = lhs.partialPivLu().solve(rhs);
  if (!theta.allFinite()) throw SingularityError("projected fixed-point system is singular");

  if (options.cross_check) {
    // Picard iteration theta <- G^{-1}(b + gamma * coupling * theta).
    const Eigen::LDLT<Matrix> gram(projector.gram());
    const Matrix step_map = g * gram.solve(coupling);
    const Vector offset = gram.solve(rhs);
    const Matrix norm_gram = features.phi().transpose() * dist.mass().asDiagonal() * features.phi();
    auto mu_norm = [&](const Vector& c) { return std::sqrt(std::max(0.0, c.dot(norm_gram * c))); };
    const double scale = std::max(1.0, mu_norm(theta));
    Vector picard = Vector::Zero(theta.size());
    bool converged = false;
    for (int it = 0; it < options.max_picard_iters; ++it) {
      Vector next = step_map * picard + offset;
      const double step = mu_norm(next - picard);
      picard = std::move(next);
      if (g == 0.0 || g / (1.0 - g) * step <= 1e-12 * scale) {
        converged = true;
        break;
      }
    }
    if (!converged) throw ConvergenceError("Picard cross-check did not converge", mu_norm(picard - theta));
    const double gap = mu_norm(picard - theta);
    if (gap > options.agreement_tol * scale)
      throw ConvergenceError("Picard and direct projected fixed points disagree", gap);
  }
  return LinearQ{theta};
}

ContractionEstimate contraction_factor_estimate(const TabularMdp& mdp, const Policy& pi, Discount gamma,
                                                const StateActionDist& dist) {
  require_dims(dist.size() == mdp.n_pairs(), "distribution size does not match MDP");
  const Matrix chain = state_action_transition(mdp, pi);
  std::vector<Index> support;
  for (Index i = 0; i < dist.size(); ++i)
    if (dist[i] > 0.0) support.push_back(i);

  std::vector<bool> in_support(dist.size(), false);
  for (Index i : support) in_support[i] = true;
  for (Index i : support)
    for (Index j = 0; j < chain.cols(); ++j)
      if (chain(i, j) > 0.0 && !in_support[j])
        throw PreconditionError("distribution is zero on a pair reachable from its support");

  const Index k = static_cast<Index>(support.size());
  Matrix scaled(k, k);
  for (Index r = 0; r < k; ++r)
    for (Index c = 0; c < k; ++c)
      scaled(r, c) = std::sqrt(dist[support[r]]) * chain(support[r], support[c]) / std::sqrt(dist[support[c]]);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(scaled.transpose() * scaled, Eigen::EigenvaluesOnly);
  const double top = std::max(0.0, eig.eigenvalues().maxCoeff());

  ContractionEstimate out;
  out.factor = gamma.value() * std::sqrt(top);
  out.support_size = k;
  out.restricted = k < dist.size();
  return out;
}

}  // namespace swfqe
