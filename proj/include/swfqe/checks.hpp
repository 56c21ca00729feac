#pragma once

#include "swfqe/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace swfqe {

/// Outcome of one executable property.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Garnet instance size used by the property suite.
struct CheckScale {
  Index n_states = 100;
  Index n_actions = 4;
  Index branching = 5;
  std::uint64_t base_seed = 2024;
};

/// |T Q1 - T Q2| <= gamma |Q1 - Q2| in L2(mu), nonexpansiveness of pi P, and the projected analogue.
CheckResult check_contraction(int instances = 20, int pairs_per_instance = 50, const CheckScale& scale = {});

/// |Q*_F - Q*|_mu <= (1 - gamma)^{-1} inf_f |f - Q*|_mu for random feature classes.
CheckResult check_approximation_bound(int instances = 50, const CheckScale& scale = {});

/// One exact-ratio regression step on an exhaustive probability-weighted dataset equals Pi_F T.
CheckResult check_population_oracle(int instances = 20, const CheckScale& scale = {});

/// E_nu[w_mu f (T Q - Pi_F T Q)] = 0 for every feature column f.
CheckResult check_projection_orthogonality(int instances = 20, const CheckScale& scale = {});

/// Reward-misspecification bounds and the orthogonal-perturbation identity.
CheckResult check_reward_misspecification(int instances = 50, const CheckScale& scale = {});

/// Contraction factor under multiplicative perturbations of mu.
CheckResult check_approximate_weights(int instances = 10, const CheckScale& scale = {});

/// Population DICE recovers w_mu with one-hot classes.
CheckResult check_dice_population(int instances = 10, const CheckScale& scale = {});

/// Resolvent chi-square error to w_mu is non-increasing over gamma' in {0.9, 0.99, 0.999}.
CheckResult check_resolvent_monotone(int instances = 10, const CheckScale& scale = {});

/// Median empirical DICE chi-square error decreases from n = 1e3 to n = 1e4.
CheckResult check_dice_consistency(int seeds = 10, const CheckScale& scale = {});

/// Every check above with its default size.
std::vector<CheckResult> run_invariant_suite(const CheckScale& scale = {});

}  // namespace swfqe
