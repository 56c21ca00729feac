#pragma once

#include "swfqe/environments.hpp"
#include "swfqe/mdp.hpp"

#include <random>

namespace swfqe::test {

inline GarnetParams small_garnet_params(Index n_states = 20, Index n_actions = 3) {
  GarnetParams p;
  p.n_states = n_states;
  p.n_actions = n_actions;
  p.branching = 4;
  p.d = 4;
  return p;
}

inline Vector gaussian_vector(std::mt19937_64& rng, Index n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

/// 1-state, 1-action MDP with reward r.
inline TabularMdp single_state(double r) { return TabularMdp(1, 1, Matrix::Ones(1, 1), Vector::Constant(1, r)); }

inline Policy single_action() { return Policy(Matrix::Ones(1, 1)); }

}  // namespace swfqe::test
