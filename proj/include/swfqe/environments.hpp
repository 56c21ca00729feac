#pragma once

#include "swfqe/mdp.hpp"

#include <cstdint>
#include <random>

namespace swfqe {

/// Density ratio table over flattened state-action pairs.
struct RatioTable {
  Vector w;
};

// ---------------------------------------------------------------------------
// Baird hub-and-spokes

namespace baird {
inline constexpr Index kStates = 7;
inline constexpr Index kActions = 2;
inline constexpr Index kHub = 0;
inline constexpr Index kSolid = 0;
inline constexpr Index kDashed = 1;
inline constexpr Index kStateFeatures = 7;
}  // namespace baird

struct BairdInstance {
  TabularMdp mdp;
  Policy target;
  Policy behavior;
  FeatureMap features;
  double kappa;
};

/**
 * Seven-state hub-and-spokes MDP with zero rewards. Solid moves to the hub,
 * dashed moves uniformly to one of the six spokes. The target policy always
 * plays solid; the behavior policy plays solid with probability `kappa`.
 *
 * State features: spoke i has basis coordinate i-1, the hub is the sum of the
 * six spoke coordinates plus a bias coordinate. Pair features are the block
 * lift phi(s, a) = e_a (x) x(s), so d = 14.
 */
BairdInstance build_baird(double kappa);

/// 7-dimensional state feature x(s).
Vector baird_state_features(Index s);

// ---------------------------------------------------------------------------
// Garnet

struct GarnetParams {
  Index n_states = 100;
  Index n_actions = 4;
  Index branching = 5;
  Index d = 5;
  double epsilon = 0.1;
  double transition_concentration = 1.0;
  double policy_concentration = 1.0;
};

struct GarnetInstance {
  TabularMdp mdp;
  Policy target;
  Policy behavior;
  FeatureMap features;
  QTable q_star;
  std::uint64_t seed;
};

/**
 * Random sparse MDP: each pair picks `branching` distinct successors uniformly
 * without replacement with Dirichlet probabilities, rewards are i.i.d.
 * N(0, 1), the target policy is Dirichlet per state, and the behavior policy
 * is epsilon-greedy with respect to Q* (ties to the smallest action). The
 * feature map embeds Q* as column 0. Deterministic in `seed`.
 */
GarnetInstance garnet_generate(std::uint64_t seed, const GarnetParams& params, Discount gamma);

/// Column 0 = q_star, columns 1..d-1 i.i.d. standard normal from `seed`.
FeatureMap embed_qstar_features(const QTable& q_star, Index d, std::uint64_t seed);

/// n_pairs x d matrix of i.i.d. standard normal features.
FeatureMap random_features(Index n_pairs, Index d, std::uint64_t seed);

/// Row s puts 1 - eps + eps/A on argmax_a q(s, a) and eps/A elsewhere.
Policy epsilon_greedy(const QTable& q, Index n_states, Index n_actions, double epsilon);

/// Symmetric Dirichlet sample.
Vector sample_dirichlet(std::mt19937_64& rng, Index k, double concentration);

// ---------------------------------------------------------------------------

/**
 * w(s, a) = mu(s, a) / nu_b(s, a) on the support of nu_b, zero elsewhere.
 * Throws CoverageError when mu charges a pair that nu_b does not.
 */
RatioTable exact_stationary_ratio(const StateActionDist& mu, const StateActionDist& nu_b, Index n_actions);

}  // namespace swfqe
