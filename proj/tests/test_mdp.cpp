#include "doctest.h"
#include "support.hpp"

#include "swfqe/environments.hpp"
#include "swfqe/mdp.hpp"

#include <Eigen/QR>

using namespace swfqe;
using swfqe::test::gaussian_vector;

namespace {

GarnetInstance garnet(std::uint64_t seed, double gamma = 0.9) {
  return garnet_generate(seed, test::small_garnet_params(), Discount(gamma));
}

// Two states, one action, each state jumps to the other or stays with prob 1/2.
TabularMdp two_state_symmetric() {
  Matrix p(2, 2);
  p << 0.5, 0.5, 0.5, 0.5;
  return TabularMdp(2, 1, p, Vector::Zero(2));
}

}  // namespace

TEST_CASE("validation of core types") {
  Matrix bad(1, 2);
  bad << 0.5, 0.6;
  CHECK_THROWS_AS(TabularMdp(1, 1, bad.leftCols(1), Vector::Zero(1)), PreconditionError);
  CHECK_THROWS_AS(TabularMdp(1, 1, Matrix::Ones(1, 1), Vector::Constant(1, NAN)), PreconditionError);
  CHECK_THROWS_AS(Policy{bad}, PreconditionError);
  CHECK_THROWS_AS(StateActionDist(Vector::Constant(2, 0.4)), PreconditionError);
  CHECK_THROWS_AS(Discount(1.0), PreconditionError);
  CHECK_THROWS_AS(Discount(-0.1), PreconditionError);
  CHECK_THROWS_AS(TabularMdp(2, 1, Matrix::Ones(1, 1), Vector::Zero(1)), DimensionError);
}

TEST_CASE("bellman_apply") {
  const GarnetInstance g = garnet(1);
  std::mt19937_64 rng(3);
  const QTable q = gaussian_vector(rng, g.mdp.n_pairs());

  SUBCASE("gamma = 0 returns the reward table") {
    CHECK(bellman_apply(q, g.mdp, g.target, Discount(0.0)) == g.mdp.reward());
  }
  SUBCASE("Baird with q = 0 gives 0") {
    const BairdInstance b = build_baird(0.7);
    CHECK(bellman_apply(Vector::Zero(b.mdp.n_pairs()), b.mdp, b.target, Discount(0.95)).isZero(0.0));
  }
  SUBCASE("single state") {
    const QTable out = bellman_apply(Vector::Constant(1, 4.0), test::single_state(1.0), test::single_action(),
                                     Discount(0.5));
    CHECK(out[0] == doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("matches the explicit triple sum") {
    const QTable out = bellman_apply(q, g.mdp, g.target, Discount(0.9));
    const Index A = g.mdp.n_actions();
    for (Index s = 0; s < g.mdp.n_states(); ++s)
      for (Index a = 0; a < A; ++a) {
        double next = 0.0;
        for (Index sp = 0; sp < g.mdp.n_states(); ++sp)
          for (Index ap = 0; ap < A; ++ap)
            next += g.mdp.transition()(s * A + a, sp) * g.target(sp, ap) * q[sp * A + ap];
        CHECK(out[s * A + a] == doctest::Approx(g.mdp.reward()[s * A + a] + 0.9 * next).epsilon(1e-12));
      }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(bellman_apply(Vector::Zero(3), g.mdp, g.target, Discount(0.9)), DimensionError);
  }
}

TEST_CASE("solve_q_star") {
  SUBCASE("geometric series") {
    const QTable q = solve_q_star(test::single_state(1.0), test::single_action(), Discount(0.9));
    CHECK(q[0] == doctest::Approx(10.0).epsilon(1e-12));
  }
  SUBCASE("gamma = 0") {
    const GarnetInstance g = garnet(2);
    CHECK((solve_q_star(g.mdp, g.target, Discount(0.0)) - g.mdp.reward()).lpNorm<Eigen::Infinity>() < 1e-14);
  }
  SUBCASE("value iteration oracle, 2000 sweeps") {
    const GarnetInstance g = garnet(3);
    const QTable q = solve_q_star(g.mdp, g.target, Discount(0.9));
    QTable v = Vector::Zero(g.mdp.n_pairs());
    for (int i = 0; i < 2000; ++i) v = bellman_apply(v, g.mdp, g.target, Discount(0.9));
    CHECK((q - v).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK((q - bellman_apply(q, g.mdp, g.target, Discount(0.9))).lpNorm<Eigen::Infinity>() <= 1e-9);
  }
}

TEST_CASE("stationary_distribution") {
  SUBCASE("Baird target chain sits on (hub, solid)") {
    const BairdInstance b = build_baird(0.7);
    const StateActionDist mu = stationary_distribution(b.mdp, b.target);
    CHECK(mu[b.mdp.pair(baird::kHub, baird::kSolid)] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mu.mass().sum() == doctest::Approx(1.0));
  }
  SUBCASE("doubly stochastic chain is uniform") {
    const StateActionDist mu = stationary_distribution(two_state_symmetric(), Policy(Matrix::Ones(2, 1)));
    CHECK(mu[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(mu[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("Garnet agrees with the left eigenvector by linear solve") {
    const GarnetInstance g = garnet(4);
    const StateActionDist mu = stationary_distribution(g.mdp, g.target);
    const Index n = g.mdp.n_pairs();
    Matrix system(n + 1, n);
    system.topRows(n) = (Matrix::Identity(n, n) - state_action_transition(g.mdp, g.target)).transpose();
    system.row(n).setOnes();
    Vector rhs = Vector::Zero(n + 1);
    rhs[n] = 1.0;
    const Vector oracle = system.completeOrthogonalDecomposition().solve(rhs);
    CHECK((mu.mass() - oracle).lpNorm<1>() <= 1e-8);
    CHECK(stationarity_residual(g.mdp, g.target, mu) <= 1e-12);
  }
  SUBCASE("periodic chain stalls without damping, converges with it") {
    // 0 -> {1, 2} -> 0 has period 2, and the uniform start is not stationary.
    Matrix p(3, 3);
    p << 0.0, 0.5, 0.5, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
    const TabularMdp bip(3, 1, p, Vector::Zero(3));
    const Policy pi(Matrix::Ones(3, 1));
    StationaryOptions opts;
    opts.max_iters = 500;
    try {
      stationary_distribution(bip, pi, opts);
      FAIL("expected a convergence error");
    } catch (const ConvergenceError& e) {
      CHECK(e.residual() > 0.1);
    }
    opts.damping = true;
    opts.max_iters = 200000;
    const StateActionDist mu = stationary_distribution(bip, pi, opts);
    CHECK(mu[0] == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(mu[1] == doctest::Approx(0.25).epsilon(1e-10));
  }
  SUBCASE("transient pairs carry no mass") {
    Matrix p(3, 3);
    p << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0;
    StationaryOptions opts;
    opts.damping = true;
    const StateActionDist mu = stationary_distribution(TabularMdp(3, 1, p, Vector::Zero(3)), Policy(Matrix::Ones(3, 1)), opts);
    CHECK(mu[0] == 0.0);
    CHECK(mu[1] == doctest::Approx(0.5).epsilon(1e-10));
  }
}

TEST_CASE("weighted_norm") {
  const StateActionDist uniform = StateActionDist::uniform(8);
  CHECK(weighted_norm(Vector::Constant(8, -3.0), uniform) == doctest::Approx(3.0));
  Vector mass = Vector::Zero(4);
  mass << 0.25, 0.25, 0.5, 0.0;
  Vector indicator = Vector::Zero(4);
  indicator[0] = 1.0;
  CHECK(weighted_norm(indicator, StateActionDist(mass)) == doctest::Approx(0.5));
  Vector off_support = Vector::Zero(4);
  off_support[3] = 7.0;
  CHECK(weighted_norm(off_support, StateActionDist(mass)) == 0.0);

  std::mt19937_64 rng(5);
  const Vector f = gaussian_vector(rng, 8);
  double brute = 0.0;
  for (Index i = 0; i < 8; ++i) brute += f[i] * f[i] / 8.0;
  CHECK(std::abs(weighted_norm(f, uniform) - std::sqrt(brute)) <= 1e-12);
  CHECK_THROWS_AS(weighted_norm(f, StateActionDist::uniform(3)), DimensionError);
}

TEST_CASE("weighted_projection") {
  std::mt19937_64 rng(6);
  const Index n = 24;
  const FeatureMap features = random_features(n, 4, 11);
  Vector mass = gaussian_vector(rng, n).cwiseAbs();
  const StateActionDist dist(mass / mass.sum());

  SUBCASE("class member is recovered") {
    const Vector theta = gaussian_vector(rng, 4);
    const LinearQ p = weighted_projection(features.values(theta), features, dist, 0.0);
    CHECK(weighted_norm(p.values(features) - features.values(theta), dist) <= 1e-9);
  }
  SUBCASE("one-hot features reproduce the target") {
    const Vector target = gaussian_vector(rng, n);
    const LinearQ p = weighted_projection(target, FeatureMap::one_hot(n), dist, 0.0);
    CHECK((p.theta - target).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
  SUBCASE("normal-equation oracle and orthogonality") {
    const Vector target = gaussian_vector(rng, n);
    for (double ridge : {0.0, 0.3}) {
      const LinearQ p = weighted_projection(target, features, dist, ridge);
      const Matrix& phi = features.phi();
      const Matrix gram = phi.transpose() * dist.mass().asDiagonal() * phi + ridge * Matrix::Identity(4, 4);
      const Vector oracle = gram.ldlt().solve(phi.transpose() * dist.mass().asDiagonal() * target);
      CHECK((p.theta - oracle).lpNorm<Eigen::Infinity>() <= 1e-9);
      if (ridge == 0.0) {
        const Vector residual = p.values(features) - target;
        CHECK((phi.transpose() * dist.mass().cwiseProduct(residual)).lpNorm<Eigen::Infinity>() <= 1e-8);
      }
    }
  }
  SUBCASE("rank deficiency needs a ridge") {
    Matrix phi = features.phi();
    phi.col(3) = phi.col(0);
    CHECK_THROWS_AS(weighted_projection(Vector::Zero(n), FeatureMap(phi), dist, 0.0), SingularityError);
    CHECK_NOTHROW(weighted_projection(Vector::Zero(n), FeatureMap(phi), dist, 1e-6));
    CHECK_THROWS_AS(weighted_projection(Vector::Zero(n), features, dist, -1.0), PreconditionError);
  }
}

TEST_CASE("projected_fixed_point") {
  const GarnetInstance g = garnet(7);
  const Discount gamma(0.9);
  const StateActionDist mu = stationary_distribution(g.mdp, g.target);

  SUBCASE("full-span features give Q*") {
    GarnetParams dense = test::small_garnet_params();
    dense.branching = dense.n_states;
    const GarnetInstance full = garnet_generate(8, dense, gamma);
    const StateActionDist full_mu = stationary_distribution(full.mdp, full.target);
    REQUIRE((full_mu.mass().array() > 0.0).all());
    const LinearQ fp = projected_fixed_point(full.mdp, full.target, gamma, FeatureMap::one_hot(full.mdp.n_pairs()),
                                             full_mu);
    CHECK((fp.theta - full.q_star).lpNorm<Eigen::Infinity>() <= 1e-8);
  }
  SUBCASE("realizable class gives Q*") {
    const LinearQ fp = projected_fixed_point(g.mdp, g.target, gamma, g.features, mu);
    CHECK(weighted_norm(fp.values(g.features) - g.q_star, mu) <= 1e-8);
  }
  SUBCASE("gamma = 0 is a single projection") {
    const FeatureMap f = random_features(g.mdp.n_pairs(), 4, 9);
    const LinearQ fp = projected_fixed_point(g.mdp, g.target, Discount(0.0), f, mu);
    const LinearQ pr = weighted_projection(g.mdp.reward(), f, mu, 0.0);
    CHECK((fp.theta - pr.theta).lpNorm<Eigen::Infinity>() <= 1e-10);
  }
  SUBCASE("fixed-point residual") {
    const FeatureMap f = random_features(g.mdp.n_pairs(), 4, 10);
    const LinearQ fp = projected_fixed_point(g.mdp, g.target, gamma, f, mu);
    const QTable q = fp.values(f);
    const QTable pt = weighted_projection(bellman_apply(q, g.mdp, g.target, gamma), f, mu, 0.0).values(f);
    CHECK(weighted_norm(q - pt, mu) <= 1e-9);
  }
  SUBCASE("non-stationary distribution is rejected") {
    CHECK_THROWS_AS(projected_fixed_point(g.mdp, g.target, gamma, g.features,
                                          StateActionDist::uniform(g.mdp.n_pairs())),
                    PreconditionError);
  }
}

TEST_CASE("contraction_factor_estimate") {
  SUBCASE("single state is exactly gamma") {
    const ContractionEstimate c =
        contraction_factor_estimate(test::single_state(0.0), test::single_action(), Discount(0.8),
                                    StateActionDist::uniform(1));
    CHECK(c.factor == doctest::Approx(0.8).epsilon(1e-14));
    CHECK_FALSE(c.restricted);
  }
  SUBCASE("stationary distribution contracts at gamma") {
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
      const GarnetInstance g = garnet(seed);
      const StateActionDist mu = stationary_distribution(g.mdp, g.target);
      CHECK(contraction_factor_estimate(g.mdp, g.target, Discount(0.9), mu).factor <= 0.9 + 1e-10);
    }
  }
  SUBCASE("Baird restricts to the hub") {
    const BairdInstance b = build_baird(0.7);
    const ContractionEstimate c =
        contraction_factor_estimate(b.mdp, b.target, Discount(0.95), stationary_distribution(b.mdp, b.target));
    CHECK(c.restricted);
    CHECK(c.support_size == 1);
    CHECK(c.factor == doctest::Approx(0.95));
  }
  SUBCASE("open support is rejected") {
    const BairdInstance b = build_baird(0.7);
    Vector mass = Vector::Zero(b.mdp.n_pairs());
    mass[b.mdp.pair(baird::kHub, baird::kDashed)] = 1.0;
    CHECK_THROWS_AS(contraction_factor_estimate(b.mdp, b.target, Discount(0.95), StateActionDist(mass)),
                    PreconditionError);
  }
}

TEST_CASE("contraction and nonexpansiveness in L2(mu)") {
  std::mt19937_64 rng(12);
  for (std::uint64_t seed = 30; seed < 33; ++seed) {
    const GarnetInstance g = garnet(seed);
    const StateActionDist mu = stationary_distribution(g.mdp, g.target);
    for (int rep = 0; rep < 20; ++rep) {
      const QTable h = gaussian_vector(rng, g.mdp.n_pairs());
      CHECK(weighted_norm(expected_next(g.mdp, g.target, h), mu) <= weighted_norm(h, mu) + 1e-10);
    }
  }
}
