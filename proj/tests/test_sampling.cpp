#include "doctest.h"
#include "support.hpp"

#include "swfqe/sampling.hpp"

#include <sstream>

using namespace swfqe;

namespace {

GarnetInstance garnet(std::uint64_t seed) {
  return garnet_generate(seed, test::small_garnet_params(), Discount(0.9));
}

// Uniform(S) x behavior, the law of (s, a) under reset sampling.
Vector reset_law(const Policy& behavior) {
  Vector law(behavior.n_states() * behavior.n_actions());
  for (Index s = 0; s < behavior.n_states(); ++s)
    for (Index a = 0; a < behavior.n_actions(); ++a)
      law[s * behavior.n_actions() + a] = behavior(s, a) / static_cast<double>(behavior.n_states());
  return law;
}

}  // namespace

TEST_CASE("sample_dataset") {
  SUBCASE("deterministic single-state MDP") {
    const TransitionDataset d =
        sample_dataset(test::single_state(2.5), test::single_action(), test::single_action(), 50,
                       SamplingScheme::reset, 1);
    REQUIRE(d.size() == 50);
    for (const Transition& t : d.transitions) CHECK(t == Transition{0, 0, 2.5, 0, 0});
  }
  SUBCASE("reset marginal converges to uniform x behavior") {
    const GarnetInstance g = garnet(2);
    const TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, 100000, SamplingScheme::reset, 7);
    const StateActionDist emp = empirical_distribution(d, g.mdp.n_states(), g.mdp.n_actions());
    CHECK((emp.mass() - reset_law(g.behavior)).lpNorm<1>() <= 0.02);
  }
  SUBCASE("total variation shrinks with n") {
    const GarnetInstance g = garnet(3);
    const Vector law = reset_law(g.behavior);
    auto tv = [&](std::size_t n) {
      const TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, n, SamplingScheme::reset, 11);
      return 0.5 * (empirical_distribution(d, g.mdp.n_states(), g.mdp.n_actions()).mass() - law).lpNorm<1>();
    };
    CHECK(tv(100000) < tv(1000));
  }
  SUBCASE("state marginal TV bound over 20 seeds") {
    const GarnetInstance g = garnet(4);
    const std::size_t n = 20000;
    const double bound = 3.0 * std::sqrt(static_cast<double>(g.mdp.n_states()) / static_cast<double>(n));
    int within = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, n, SamplingScheme::reset, seed);
      const Vector rho = empirical_state_marginal(d, g.mdp.n_states());
      const double tv = 0.5 * (rho.array() - 1.0 / static_cast<double>(g.mdp.n_states())).abs().sum();
      within += tv <= bound;
    }
    CHECK(within == 20);
  }
  SUBCASE("trajectory is a single chain") {
    const GarnetInstance g = garnet(5);
    const TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, 500, SamplingScheme::trajectory, 3);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d.transitions[i].s == d.transitions[i - 1].s_next);
    for (const Transition& t : d.transitions) CHECK(g.mdp.transition()(g.mdp.pair(t.s, t.a), t.s_next) > 0.0);
  }
  SUBCASE("determinism and reward noise") {
    const GarnetInstance g = garnet(6);
    const TransitionDataset a = sample_dataset(g.mdp, g.behavior, g.target, 300, SamplingScheme::reset, 9, 0.5);
    const TransitionDataset b = sample_dataset(g.mdp, g.behavior, g.target, 300, SamplingScheme::reset, 9, 0.5);
    CHECK(a.transitions == b.transitions);
    std::ostringstream sa, sb;
    write_dataset_csv(sa, a);
    write_dataset_csv(sb, b);
    CHECK(sa.str() == sb.str());
    bool noisy = false;
    for (const Transition& t : a.transitions) noisy |= t.r != g.mdp.reward()[g.mdp.pair(t.s, t.a)];
    CHECK(noisy);
  }
  SUBCASE("preconditions") {
    const GarnetInstance g = garnet(6);
    CHECK_THROWS_AS(sample_dataset(g.mdp, g.behavior, g.target, 0, SamplingScheme::reset, 1), PreconditionError);
  }
}

TEST_CASE("sample_from_distribution draws pairs from the given law") {
  const GarnetInstance g = garnet(7);
  const StateActionDist mu = stationary_distribution(g.mdp, g.target);
  const TransitionDataset d = sample_from_distribution(g.mdp, mu, g.target, 100000, 5);
  CHECK((empirical_distribution(d, g.mdp.n_states(), g.mdp.n_actions()).mass() - mu.mass()).lpNorm<1>() <= 0.03);
  for (const Transition& t : d.transitions) CHECK(mu[g.mdp.pair(t.s, t.a)] > 0.0);
}

TEST_CASE("empirical_distribution") {
  TransitionDataset d;
  d.transitions.push_back(Transition{3, 1, 0.0, 0, 0});
  const StateActionDist one = empirical_distribution(d, 4, 2);
  CHECK(one[3 * 2 + 1] == 1.0);
  CHECK(one.mass().sum() == 1.0);

  TransitionDataset all;
  for (Index s = 0; s < 4; ++s)
    for (Index a = 0; a < 2; ++a) all.transitions.push_back(Transition{s, a, 0.0, 0, 0});
  CHECK(empirical_distribution(all, 4, 2).mass().isApprox(Vector::Constant(8, 0.125)));
  CHECK_THROWS_AS(empirical_distribution(TransitionDataset{}, 4, 2), DataError);
}

TEST_CASE("empirical_weights") {
  SUBCASE("on-policy with empirical d_pi gives ones") {
    const GarnetInstance g = garnet(8);
    const TransitionDataset d = sample_dataset(g.mdp, g.target, g.target, 2000, SamplingScheme::reset, 1);
    const Vector rho = empirical_state_marginal(d, g.mdp.n_states());
    Vector mass(g.mdp.n_pairs());
    for (Index s = 0; s < g.mdp.n_states(); ++s)
      for (Index a = 0; a < g.mdp.n_actions(); ++a) mass[g.mdp.pair(s, a)] = rho[s] * g.target(s, a);
    for (double w : empirical_weights(d, StateActionDist(mass), g.target, g.target)) CHECK(w == doctest::Approx(1.0));
  }
  SUBCASE("Baird kappa = 0.7") {
    const BairdInstance b = build_baird(0.7);
    const TransitionDataset d = sample_dataset(b.mdp, b.behavior, b.target, 5000, SamplingScheme::trajectory, 2);
    const StateActionDist mu = stationary_distribution(b.mdp, b.target);
    const double rho_hub = empirical_state_marginal(d, baird::kStates)[baird::kHub];
    const std::vector<double> w = empirical_weights(d, mu, b.target, b.behavior);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Transition& t = d.transitions[i];
      if (t.s == baird::kHub && t.a == baird::kSolid)
        CHECK(w[i] == doctest::Approx(1.0 / (rho_hub * 0.7)).epsilon(1e-14));
      else
        CHECK(w[i] == 0.0);
    }
  }
  SUBCASE("Garnet mean weight tends to one") {
    const GarnetInstance g = garnet(9);
    const StateActionDist mu = stationary_distribution(g.mdp, g.target);
    const TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, 100000, SamplingScheme::reset, 3);
    const std::vector<double> w = empirical_weights(d, mu, g.target, g.behavior);
    double mean = 0.0;
    for (double x : w) mean += x / static_cast<double>(w.size());
    CHECK(std::abs(mean - 1.0) <= 0.05);
    const std::vector<double> wn = empirical_weights(d, mu, g.target, g.behavior, true);
    double total = 0.0;
    for (double x : wn) total += x;
    CHECK(total / static_cast<double>(wn.size()) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("zero behavior probability at an observed pair") {
    const BairdInstance b = build_baird(0.7);
    TransitionDataset d;
    d.transitions.push_back(Transition{0, 1, 0.0, 1, 0});
    CHECK_THROWS_AS(empirical_weights(d, stationary_distribution(b.mdp, b.target), b.target, b.target), DataError);
  }
}

TEST_CASE("dataset CSV round trip") {
  const GarnetInstance g = garnet(10);
  TransitionDataset d = sample_dataset(g.mdp, g.behavior, g.target, 200, SamplingScheme::reset, 4, 0.3);
  for (bool weighted : {false, true}) {
    if (weighted) d.weights = empirical_weights(d, stationary_distribution(g.mdp, g.target), g.target, g.behavior);
    std::stringstream io;
    write_dataset_csv(io, d);
    const std::string text = io.str();
    CHECK(text.rfind(weighted ? "s,a,r,s_next,a_next,weight\n" : "s,a,r,s_next,a_next\n", 0) == 0);
    const TransitionDataset back = read_dataset_csv(io);
    CHECK(back.transitions == d.transitions);
    CHECK(back.weights.has_value() == weighted);
    if (weighted) CHECK(*back.weights == *d.weights);
  }
  std::istringstream bad("s,a,x\n1,2,3\n");
  CHECK_THROWS_AS(read_dataset_csv(bad), DataError);
}
