#pragma once

#include "swfqe/environments.hpp"
#include "swfqe/mdp.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace swfqe {

struct Transition {
  Index s = 0;
  Index a = 0;
  double r = 0.0;
  Index s_next = 0;
  Index a_next = 0;  ///< drawn from the target policy at s_next

  bool operator==(const Transition&) const = default;
};

enum class SamplingScheme { reset, trajectory, stationary };

std::string to_string(SamplingScheme scheme);
SamplingScheme parse_sampling_scheme(const std::string& name);

struct TransitionDataset {
  std::vector<Transition> transitions;
  std::optional<std::vector<double>> weights;
  std::uint64_t seed = 0;
  SamplingScheme scheme = SamplingScheme::reset;

  std::size_t size() const { return transitions.size(); }
};

/**
 * Logged transitions under `behavior`.
 *
 * reset: every record starts from an independent uniform state.
 * trajectory: a single behavior chain of length n from a uniform start.
 *
 * Rewards are r0(s, a) plus optional N(0, reward_noise_sd^2) noise; next
 * actions are drawn from `target`.
 */
TransitionDataset sample_dataset(const TabularMdp& mdp, const Policy& behavior, const Policy& target, std::size_t n,
                                 SamplingScheme scheme, std::uint64_t seed, double reward_noise_sd = 0.0);

/// Independent draws (s, a) ~ dist, s' ~ P(.|s, a), a' ~ target(.|s').
TransitionDataset sample_from_distribution(const TabularMdp& mdp, const StateActionDist& dist, const Policy& target,
                                           std::size_t n, std::uint64_t seed, double reward_noise_sd = 0.0);

/// Frequency histogram of (s, a) over the dataset.
StateActionDist empirical_distribution(const TransitionDataset& data, Index n_states, Index n_actions);

/// Empirical marginal of S over the dataset.
Vector empirical_state_marginal(const TransitionDataset& data, Index n_states);

/**
 * Per-sample weights w_i = d_pi(s_i) pi(a_i|s_i) / (rho_hat(s_i) b(a_i|s_i))
 * with rho_hat the empirical state marginal of the dataset and d_pi the state
 * marginal of `mu`. With `self_normalize` the weights are rescaled to mean 1.
 */
std::vector<double> empirical_weights(const TransitionDataset& data, const StateActionDist& mu, const Policy& target,
                                      const Policy& behavior, bool self_normalize = false);

/// Per-sample lookup of a ratio table.
std::vector<double> weights_from_table(const TransitionDataset& data, const RatioTable& table, Index n_actions);

/// CSV with header s,a,r,s_next,a_next[,weight]; reals at 17 significant digits.
void write_dataset_csv(std::ostream& out, const TransitionDataset& data);
TransitionDataset read_dataset_csv(std::istream& in);

}  // namespace swfqe
