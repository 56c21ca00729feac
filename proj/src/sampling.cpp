#include "swfqe/sampling.hpp"

#include "swfqe/csv.hpp"

#include <istream>
#include <ostream>
#include <random>

namespace swfqe {

namespace {

using Categorical = std::discrete_distribution<Index>;

Categorical categorical(const auto& row) {
  std::vector<double> p(static_cast<std::size_t>(row.size()));
  for (Index i = 0; i < row.size(); ++i) p[i] = row[i];
  return Categorical(p.begin(), p.end());
}

// Precomputed samplers for P(.|s,a) and a policy.
struct Samplers {
  std::vector<Categorical> next_state;
  std::vector<Categorical> behavior;
  std::vector<Categorical> target;

  Samplers(const TabularMdp& mdp, const Policy* behavior_policy, const Policy& target_policy) {
    for (Index i = 0; i < mdp.n_pairs(); ++i) next_state.push_back(categorical(mdp.transition().row(i)));
    for (Index s = 0; s < mdp.n_states(); ++s) {
      if (behavior_policy) behavior.push_back(categorical(behavior_policy->probs().row(s)));
      target.push_back(categorical(target_policy.probs().row(s)));
    }
  }
};

void check_policy(const TabularMdp& mdp, const Policy& pi) {
  require_dims(pi.n_states() == mdp.n_states() && pi.n_actions() == mdp.n_actions(), "policy shape does not match MDP");
}

}  // namespace

std::string to_string(SamplingScheme scheme) {
  switch (scheme) {
    case SamplingScheme::reset: return "reset";
    case SamplingScheme::trajectory: return "trajectory";
    case SamplingScheme::stationary: return "stationary";
  }
  return "?";
}

SamplingScheme parse_sampling_scheme(const std::string& name) {
  if (name == "reset") return SamplingScheme::reset;
  if (name == "trajectory") return SamplingScheme::trajectory;
  if (name == "stationary") return SamplingScheme::stationary;
  throw PreconditionError("unknown sampling scheme '" + name + "'");
}

TransitionDataset sample_dataset(const TabularMdp& mdp, const Policy& behavior, const Policy& target, std::size_t n,
                                 SamplingScheme scheme, std::uint64_t seed, double reward_noise_sd) {
  if (n < 1) throw PreconditionError("dataset size must be >= 1");
  if (scheme == SamplingScheme::stationary)
    throw PreconditionError("stationary sampling needs a distribution; use sample_from_distribution");
  check_policy(mdp, behavior);
  check_policy(mdp, target);

  std::mt19937_64 rng(seed);
  Samplers samplers(mdp, &behavior, target);
  std::uniform_int_distribution<Index> uniform_state(0, mdp.n_states() - 1);
  std::normal_distribution<double> noise(0.0, reward_noise_sd > 0.0 ? reward_noise_sd : 1.0);

  TransitionDataset data;
  data.seed = seed;
  data.scheme = scheme;
  data.transitions.reserve(n);
  Index state = uniform_state(rng);
  for (std::size_t i = 0; i < n; ++i) {
    if (scheme == SamplingScheme::reset) state = uniform_state(rng);
    Transition t;
    t.s = state;
    t.a = samplers.behavior[t.s](rng);
    const Index pair = mdp.pair(t.s, t.a);
    t.s_next = samplers.next_state[pair](rng);
    t.r = mdp.reward()[pair] + (reward_noise_sd > 0.0 ? noise(rng) : 0.0);
    t.a_next = samplers.target[t.s_next](rng);
    data.transitions.push_back(t);
    state = t.s_next;
  }
  return data;
}

TransitionDataset sample_from_distribution(const TabularMdp& mdp, const StateActionDist& dist, const Policy& target,
                                           std::size_t n, std::uint64_t seed, double reward_noise_sd) {
  if (n < 1) throw PreconditionError("dataset size must be >= 1");
  check_policy(mdp, target);
  require_dims(dist.size() == mdp.n_pairs(), "distribution size does not match MDP");

  std::mt19937_64 rng(seed);
  Samplers samplers(mdp, nullptr, target);
  Categorical draw_pair = categorical(dist.mass());
  std::normal_distribution<double> noise(0.0, reward_noise_sd > 0.0 ? reward_noise_sd : 1.0);

  TransitionDataset data;
  data.seed = seed;
  data.scheme = SamplingScheme::stationary;
  data.transitions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Index pair = draw_pair(rng);
    Transition t;
    t.s = pair / mdp.n_actions();
    t.a = pair % mdp.n_actions();
    t.s_next = samplers.next_state[pair](rng);
    t.r = mdp.reward()[pair] + (reward_noise_sd > 0.0 ? noise(rng) : 0.0);
    t.a_next = samplers.target[t.s_next](rng);
    data.transitions.push_back(t);
  }
  return data;
}

StateActionDist empirical_distribution(const TransitionDataset& data, Index n_states, Index n_actions) {
  if (data.transitions.empty()) throw DataError("empty dataset");
  Vector counts = Vector::Zero(n_states * n_actions);
  for (const Transition& t : data.transitions) {
    if (t.s < 0 || t.s >= n_states || t.a < 0 || t.a >= n_actions) throw DataError("transition index out of range");
    counts[t.s * n_actions + t.a] += 1.0;
  }
  return StateActionDist(counts / static_cast<double>(data.transitions.size()));
}

Vector empirical_state_marginal(const TransitionDataset& data, Index n_states) {
  if (data.transitions.empty()) throw DataError("empty dataset");
  Vector counts = Vector::Zero(n_states);
  for (const Transition& t : data.transitions) counts[t.s] += 1.0;
  return counts / static_cast<double>(data.transitions.size());
}

std::vector<double> empirical_weights(const TransitionDataset& data, const StateActionDist& mu, const Policy& target,
                                      const Policy& behavior, bool self_normalize) {
  const Index n_states = target.n_states();
  const Index n_actions = target.n_actions();
  require_dims(mu.size() == n_states * n_actions, "empirical_weights: distribution size mismatch");
  const Vector d_pi = mu.state_marginal(n_actions);
  const Vector rho = empirical_state_marginal(data, n_states);

  std::vector<double> w;
  w.reserve(data.size());
  for (const Transition& t : data.transitions) {
    const double b = behavior(t.s, t.a);
    if (!(b > 0.0)) throw DataError("behavior policy assigns zero probability to an observed action");
    w.push_back(d_pi[t.s] * target(t.s, t.a) / (rho[t.s] * b));
  }
  if (self_normalize) {
    double total = 0.0;
    for (double x : w) total += x;
    if (total > 0.0)
      for (double& x : w) x *= static_cast<double>(w.size()) / total;
  }
  return w;
}

std::vector<double> weights_from_table(const TransitionDataset& data, const RatioTable& table, Index n_actions) {
  std::vector<double> w;
  w.reserve(data.size());
  for (const Transition& t : data.transitions) w.push_back(table.w[t.s * n_actions + t.a]);
  return w;
}

void write_dataset_csv(std::ostream& out, const TransitionDataset& data) {
  const bool weighted = data.weights.has_value();
  if (weighted && data.weights->size() != data.size()) throw DimensionError("weights length does not match dataset");
  out << "s,a,r,s_next,a_next" << (weighted ? ",weight" : "") << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Transition& t = data.transitions[i];
    out << t.s << ',' << t.a << ',' << csv::format_real(t.r) << ',' << t.s_next << ',' << t.a_next;
    if (weighted) out << ',' << csv::format_real((*data.weights)[i]);
    out << '\n';
  }
}

TransitionDataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset CSV is empty");
  const auto header = csv::split(line);
  const bool weighted = header.size() == 6 && header[5] == "weight";
  const std::vector<std::string> expected{"s", "a", "r", "s_next", "a_next"};
  if (!(header.size() == 5 || weighted) || !std::equal(expected.begin(), expected.end(), header.begin()))
    throw DataError("dataset CSV header must be s,a,r,s_next,a_next[,weight]");

  TransitionDataset data;
  if (weighted) data.weights.emplace();
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    if (f.size() != header.size()) throw DataError("dataset CSV row has wrong field count");
    Transition t;
    t.s = static_cast<Index>(csv::parse_real(f[0]));
    t.a = static_cast<Index>(csv::parse_real(f[1]));
    t.r = csv::parse_real(f[2]);
    t.s_next = static_cast<Index>(csv::parse_real(f[3]));
    t.a_next = static_cast<Index>(csv::parse_real(f[4]));
    data.transitions.push_back(t);
    if (weighted) {
      const double w = csv::parse_real(f[5]);
      if (w < 0.0) throw DataError("negative sample weight");
      data.weights->push_back(w);
    }
  }
  return data;
}

}  // namespace swfqe
