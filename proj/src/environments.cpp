#include "swfqe/environments.hpp"

#include <numeric>

namespace swfqe {

Vector baird_state_features(Index s) {
  if (s < 0 || s >= baird::kStates) throw PreconditionError("Baird state out of range");
  Vector x = Vector::Zero(baird::kStateFeatures);
  if (s == baird::kHub) {
    x.head(6).setOnes();
    x[6] = 1.0;
  } else {
    x[s - 1] = 1.0;
  }
  return x;
}

BairdInstance build_baird(double kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) throw PreconditionError("kappa must lie in (0, 1]");
  using namespace baird;
  const Index n_pairs = kStates * kActions;
  Matrix transition = Matrix::Zero(n_pairs, kStates);
  for (Index s = 0; s < kStates; ++s) {
    transition(s * kActions + kSolid, kHub) = 1.0;
    for (Index spoke = 1; spoke < kStates; ++spoke) transition(s * kActions + kDashed, spoke) = 1.0 / 6.0;
  }

  Matrix target = Matrix::Zero(kStates, kActions);
  target.col(kSolid).setOnes();
  Matrix behavior(kStates, kActions);
  behavior.col(kSolid).setConstant(kappa);
  behavior.col(kDashed).setConstant(1.0 - kappa);

  Matrix phi = Matrix::Zero(n_pairs, kActions * kStateFeatures);
  for (Index s = 0; s < kStates; ++s)
    for (Index a = 0; a < kActions; ++a)
      phi.row(s * kActions + a).segment(a * kStateFeatures, kStateFeatures) = baird_state_features(s).transpose();

  return BairdInstance{TabularMdp(kStates, kActions, std::move(transition), Vector::Zero(n_pairs)),
                       Policy(std::move(target)), Policy(std::move(behavior)), FeatureMap(std::move(phi)), kappa};
}

// ---------------------------------------------------------------------------

Vector sample_dirichlet(std::mt19937_64& rng, Index k, double concentration) {
  std::gamma_distribution<double> draw(concentration, 1.0);
  Vector v(k);
  do {
    for (Index i = 0; i < k; ++i) v[i] = draw(rng);
  } while (!(v.sum() > 0.0));
  return v / v.sum();
}

Policy epsilon_greedy(const QTable& q, Index n_states, Index n_actions, double epsilon) {
  require_dims(q.size() == n_states * n_actions, "epsilon_greedy: size mismatch");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw PreconditionError("epsilon must lie in [0, 1]");
  Matrix probs = Matrix::Constant(n_states, n_actions, epsilon / static_cast<double>(n_actions));
  for (Index s = 0; s < n_states; ++s) {
    Index best = 0;
    for (Index a = 1; a < n_actions; ++a)
      if (q[s * n_actions + a] > q[s * n_actions + best]) best = a;
    probs(s, best) += 1.0 - epsilon;
  }
  return Policy(std::move(probs));
}

FeatureMap random_features(Index n_pairs, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix phi(n_pairs, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < n_pairs; ++i) phi(i, j) = normal(rng);
  return FeatureMap(std::move(phi));
}

FeatureMap embed_qstar_features(const QTable& q_star, Index d, std::uint64_t seed) {
  if (d < 2) throw PreconditionError("embed_qstar_features needs d >= 2");
  Matrix phi(q_star.size(), d);
  phi.col(0) = q_star;
  phi.rightCols(d - 1) = random_features(q_star.size(), d - 1, seed).phi();
  return FeatureMap(std::move(phi));
}

GarnetInstance garnet_generate(std::uint64_t seed, const GarnetParams& p, Discount gamma) {
  if (p.n_states < 1 || p.n_actions < 1) throw PreconditionError("Garnet needs at least one state and action");
  if (p.branching < 1 || p.branching > p.n_states) throw PreconditionError("branching must lie in [1, n_states]");
  if (p.d < 2) throw PreconditionError("Garnet feature dimension must be >= 2");
  if (!(p.transition_concentration > 0.0 && p.policy_concentration > 0.0))
    throw PreconditionError("Dirichlet concentrations must be positive");

  std::mt19937_64 rng(seed);
  const Index n_pairs = p.n_states * p.n_actions;

  Matrix transition = Matrix::Zero(n_pairs, p.n_states);
  std::vector<Index> states(static_cast<std::size_t>(p.n_states));
  for (Index i = 0; i < n_pairs; ++i) {
    std::iota(states.begin(), states.end(), Index{0});
    // Partial Fisher-Yates: the first `branching` slots are a uniform sample.
    for (Index j = 0; j < p.branching; ++j) {
      std::uniform_int_distribution<Index> pick(j, p.n_states - 1);
      std::swap(states[j], states[pick(rng)]);
    }
    const Vector probs = sample_dirichlet(rng, p.branching, p.transition_concentration);
    for (Index j = 0; j < p.branching; ++j) transition(i, states[j]) = probs[j];
    // Exact unit row sum.
    transition(i, states[0]) = 1.0 - (probs.sum() - probs[0]);
  }

  std::normal_distribution<double> normal;
  Vector reward(n_pairs);
  for (Index i = 0; i < n_pairs; ++i) reward[i] = normal(rng);

  Matrix target(p.n_states, p.n_actions);
  for (Index s = 0; s < p.n_states; ++s)
    target.row(s) = sample_dirichlet(rng, p.n_actions, p.policy_concentration).transpose();

  TabularMdp mdp(p.n_states, p.n_actions, std::move(transition), std::move(reward));
  Policy target_policy(std::move(target));
  QTable q_star = solve_q_star(mdp, target_policy, gamma);
  Policy behavior = epsilon_greedy(q_star, p.n_states, p.n_actions, p.epsilon);
  FeatureMap features = embed_qstar_features(q_star, p.d, mix_seed(seed, 0xfea7u));

  return GarnetInstance{std::move(mdp), std::move(target_policy), std::move(behavior), std::move(features),
                        std::move(q_star), seed};
}

// ---------------------------------------------------------------------------

RatioTable exact_stationary_ratio(const StateActionDist& mu, const StateActionDist& nu_b, Index n_actions) {
  require_dims(mu.size() == nu_b.size(), "exact_stationary_ratio: size mismatch");
  std::vector<std::pair<Index, Index>> uncovered;
  Vector w = Vector::Zero(mu.size());
  for (Index i = 0; i < mu.size(); ++i) {
    if (nu_b[i] > 0.0)
      w[i] = mu[i] / nu_b[i];
    else if (mu[i] > 0.0)
      uncovered.emplace_back(i / n_actions, i % n_actions);
  }
  if (!uncovered.empty())
    throw CoverageError("stationary distribution charges pairs the behavior distribution never visits",
                        std::move(uncovered));
  return RatioTable{std::move(w)};
}

}  // namespace swfqe
