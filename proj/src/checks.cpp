#include "swfqe/checks.hpp"

#include "swfqe/environments.hpp"
#include "swfqe/fqe.hpp"
#include "swfqe/mdp.hpp"
#include "swfqe/ratio.hpp"
#include "swfqe/sampling.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>

namespace swfqe {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

std::uint64_t instance_seed(const CheckScale& scale, const char* check, std::uint64_t i) {
  return mix_seed(mix_seed(scale.base_seed, fnv1a(check)), i);
}

GarnetInstance garnet(const CheckScale& scale, std::uint64_t seed, double gamma) {
  GarnetParams p;
  p.n_states = scale.n_states;
  p.n_actions = scale.n_actions;
  p.branching = scale.branching;
  return garnet_generate(seed, p, Discount(gamma));
}

StateActionDist stationary_or_damped(const TabularMdp& mdp, const Policy& pi) {
  try {
    return stationary_distribution(mdp, pi);
  } catch (const ConvergenceError&) {
    StationaryOptions damped;
    damped.damping = true;
    return stationary_distribution(mdp, pi, damped);
  }
}

// Law of (s, a) under reset sampling: uniform state, behavior action.
StateActionDist reset_law(const Policy& behavior) {
  Vector mass(behavior.n_states() * behavior.n_actions());
  for (Index s = 0; s < behavior.n_states(); ++s)
    for (Index a = 0; a < behavior.n_actions(); ++a)
      mass[s * behavior.n_actions() + a] = behavior(s, a) / static_cast<double>(behavior.n_states());
  return StateActionDist(mass / mass.sum());
}

Vector gaussian(std::mt19937_64& rng, Index n, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

constexpr double kGammas[] = {0.5, 0.9, 0.95, 0.99};

double cycle_gamma(int i) { return kGammas[i % 4]; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

CheckResult check_contraction(int instances, int pairs_per_instance, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"contraction", false, "", 0.0};
  int violations = 0, comparisons = 0;
  double worst = -1e300;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "contraction", i);
    const double gamma = cycle_gamma(i);
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const FeatureMap features = random_features(g.mdp.n_pairs(), 5, mix_seed(seed, 1));
    const WeightedProjector projector(features, mu, 0.0);
    std::mt19937_64 rng(mix_seed(seed, 2));
    for (int p = 0; p < pairs_per_instance; ++p) {
      const QTable q1 = gaussian(rng, g.mdp.n_pairs(), 10.0);
      const QTable q2 = gaussian(rng, g.mdp.n_pairs(), 10.0);
      const double gap = weighted_norm(q1 - q2, mu);
      const QTable t1 = bellman_apply(q1, g.mdp, g.target, Discount(gamma));
      const QTable t2 = bellman_apply(q2, g.mdp, g.target, Discount(gamma));
      const double margins[] = {
          weighted_norm(t1 - t2, mu) - gamma * gap,
          weighted_norm(expected_next(g.mdp, g.target, q1 - q2), mu) - gap,
          weighted_norm(projector.project(t1) - projector.project(t2), mu) - gamma * gap,
      };
      for (double m : margins) {
        ++comparisons;
        worst = std::max(worst, m);
        violations += m > 1e-10;
      }
    }
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0 && out.seconds < 10.0;
  out.detail = format("%d instances x %d pairs, %d comparisons, %d violations, worst margin %.3g, %.2f s", instances,
                      pairs_per_instance, comparisons, violations, worst, out.seconds);
  return out;
}

CheckResult check_approximation_bound(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"approximation_bound", false, "", 0.0};
  int violations = 0;
  double worst = -1e300;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "approximation_bound", i);
    const double gamma = cycle_gamma(i);
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const FeatureMap features = random_features(g.mdp.n_pairs(), 5, mix_seed(seed, 1));
    const LinearQ fp = projected_fixed_point(g.mdp, g.target, Discount(gamma), features, mu);
    const double lhs = weighted_norm(fp.values(features) - g.q_star, mu);
    const double best = weighted_norm(weighted_projection(g.q_star, features, mu, 0.0).values(features) - g.q_star, mu);
    const double margin = lhs - best / (1.0 - gamma);
    worst = std::max(worst, margin);
    violations += margin > 1e-8;
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0;
  out.detail = format("%d instances, %d violations, worst margin %.3g", instances, violations, worst);
  return out;
}

CheckResult check_population_oracle(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"population_oracle", false, "", 0.0};
  int violations = 0;
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "population_oracle", i);
    const Discount gamma(cycle_gamma(i));
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const StateActionDist nu = reset_law(g.behavior);
    const RatioTable w = exact_stationary_ratio(mu, nu, g.mdp.n_actions());
    const FeatureMap features = random_features(g.mdp.n_pairs(), 5, mix_seed(seed, 1));

    // Every (s, a, s') with P > 0, weighted by w(s, a) nu(s, a) P(s'|s, a).
    TransitionDataset data;
    std::vector<double> prob;
    for (Index pair = 0; pair < g.mdp.n_pairs(); ++pair)
      for (Index sn = 0; sn < g.mdp.n_states(); ++sn) {
        const double p = g.mdp.transition()(pair, sn);
        if (!(p > 0.0)) continue;
        data.transitions.push_back(
            Transition{pair / g.mdp.n_actions(), pair % g.mdp.n_actions(), g.mdp.reward()[pair], sn, 0});
        prob.push_back(w.w[pair] * nu[pair] * p);
      }
    // The per-sample objective averages over n records; scale so the sum matches the expectation.
    const double n = static_cast<double>(data.size());
    for (double& x : prob) x *= n;
    data.weights = std::move(prob);

    std::mt19937_64 rng(mix_seed(seed, 2));
    FqeConfig config;
    config.gamma = gamma;
    config.iterations = 1;
    config.ridge = 0.0;
    config.weighting = Weighting::exact_ratio;
    config.theta0 = gaussian(rng, 5, 3.0);
    const FqeTrace trace = fqe_run(data, features, g.target, config);
    const LinearQ oracle = population_step_oracle(LinearQ{*config.theta0}, g.mdp, g.target, gamma, features, mu, 0.0);
    const double gap = (trace.iterates[1].theta - oracle.theta).lpNorm<Eigen::Infinity>();
    worst = std::max(worst, gap);
    violations += !(gap <= 1e-8);
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0;
  out.detail = format("%d instances, %d violations, max coefficient gap %.3g", instances, violations, worst);
  return out;
}

CheckResult check_projection_orthogonality(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"projection_orthogonality", false, "", 0.0};
  int violations = 0;
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "projection_orthogonality", i);
    const Discount gamma(cycle_gamma(i));
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const StateActionDist nu = reset_law(g.behavior);
    const RatioTable w = exact_stationary_ratio(mu, nu, g.mdp.n_actions());
    const WeightedProjector projector(g.features, mu, 0.0);
    std::mt19937_64 rng(mix_seed(seed, 2));
    for (int rep = 0; rep < 5; ++rep) {
      const QTable tq = bellman_apply(gaussian(rng, g.mdp.n_pairs(), 5.0), g.mdp, g.target, gamma);
      const Vector residual = tq - projector.project(tq);
      const Vector moments =
          g.features.phi().transpose() * (nu.mass().cwiseProduct(w.w).cwiseProduct(residual));
      const double m = moments.lpNorm<Eigen::Infinity>();
      worst = std::max(worst, m);
      violations += !(m <= 1e-9);
    }
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0;
  out.detail = format("%d instances x 5 targets, %d violations, max |moment| %.3g", instances, violations, worst);
  return out;
}

CheckResult check_reward_misspecification(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"reward_misspecification", false, "", 0.0};
  int violations = 0, orth_violations = 0;
  double worst = -1e300, worst_orth = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "reward_misspecification", i);
    const double gamma = cycle_gamma(i);
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const FeatureMap features = random_features(g.mdp.n_pairs(), 5, mix_seed(seed, 1));
    const WeightedProjector projector(features, mu, 0.0);
    std::mt19937_64 rng(mix_seed(seed, 2));
    const double sd = std::uniform_real_distribution<double>(0.05, 2.0)(rng);
    const Vector delta = gaussian(rng, g.mdp.n_pairs(), sd);

    const LinearQ base = projected_fixed_point(g.mdp, g.target, Discount(gamma), features, mu);
    const LinearQ shifted =
        projected_fixed_point(g.mdp, g.target, Discount(gamma), features, mu, QTable(g.mdp.reward() + delta));
    const double lhs = weighted_norm(features.values(shifted.theta - base.theta), mu);
    const double sharp = weighted_norm(projector.project(delta), mu) / (1.0 - gamma);
    const double loose = weighted_norm(delta, mu) / (1.0 - gamma);
    worst = std::max({worst, lhs - sharp, lhs - loose});
    violations += (lhs > sharp + 1e-8) + (lhs > loose + 1e-8);

    const Vector orthogonal = delta - projector.project(delta);
    const LinearQ orth =
        projected_fixed_point(g.mdp, g.target, Discount(gamma), features, mu, QTable(g.mdp.reward() + orthogonal));
    const double gap = weighted_norm(features.values(orth.theta - base.theta), mu);
    worst_orth = std::max(worst_orth, gap);
    orth_violations += !(gap <= 1e-8);
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0 && orth_violations == 0;
  out.detail = format("%d instances, %d bound violations (worst margin %.3g), %d orthogonal-case violations "
                      "(max gap %.3g)",
                      instances, violations, worst, orth_violations, worst_orth);
  return out;
}

CheckResult check_approximate_weights(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"approximate_weights", false, "", 0.0};
  int violations = 0, comparisons = 0;
  double worst = -1e300;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "approximate_weights", i);
    const double gamma = 0.9;
    const GarnetInstance g = garnet(scale, seed, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    std::mt19937_64 rng(mix_seed(seed, 2));
    for (double eps : {0.1, 0.2, 0.4}) {
      const double bound = gamma * std::sqrt((1.0 + eps) / (1.0 - eps));
      for (bool extreme : {false, true}) {
        Vector mass = mu.mass();
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (Index k = 0; k < mass.size(); ++k) {
          const double x = u(rng);
          mass[k] *= 1.0 + eps * (extreme ? (x < 0.0 ? -1.0 : 1.0) : x);
        }
        const ContractionEstimate c =
            contraction_factor_estimate(g.mdp, g.target, Discount(gamma), StateActionDist(mass / mass.sum()));
        ++comparisons;
        worst = std::max(worst, c.factor - bound);
        violations += c.factor > bound + 1e-8;
      }
    }
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0;
  out.detail = format("%d instances x 3 eps x 2 perturbations, %d/%d violations, worst margin %.3g", instances,
                      violations, comparisons, worst);
  return out;
}

CheckResult check_dice_population(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"dice_population", false, "", 0.0};
  int violations = 0;
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = instance_seed(scale, "dice_population", i);
    const GarnetInstance g = garnet(scale, seed, 0.9);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const StateActionDist nu = reset_law(g.behavior);
    const RatioTable w = exact_stationary_ratio(mu, nu, g.mdp.n_actions());
    const FeatureMap onehot = FeatureMap::one_hot(g.mdp.n_pairs());
    const RatioEstimate est = dice_solve(dice_population_moments(g.mdp, g.target, nu, onehot, onehot), onehot);
    const double gap = (est.values.w - w.w).lpNorm<Eigen::Infinity>();
    worst = std::max(worst, gap);
    violations += !(gap <= 1e-6);
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0;
  out.detail = format("%d instances, %d violations, max sup-norm gap %.3g", instances, violations, worst);
  return out;
}

CheckResult check_resolvent_monotone(int instances, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"resolvent_monotone", false, "", 0.0};
  int used = 0, skipped = 0, violations = 0;
  std::string trail;
  for (std::uint64_t i = 0; used < instances && i < 50ull * static_cast<std::uint64_t>(instances); ++i) {
    const std::uint64_t seed = instance_seed(scale, "resolvent_monotone", i);
    const GarnetInstance g = garnet(scale, seed, 0.9);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const StateActionDist nu = stationary_or_damped(g.mdp, g.behavior);
    RatioTable w;
    try {
      w = exact_stationary_ratio(mu, nu, g.mdp.n_actions());
    } catch (const CoverageError&) {
      ++skipped;  // behavior chain misses part of the target's recurrent class
      continue;
    }
    ++used;
    double previous = 1e300;
    for (double gp : {0.9, 0.99, 0.999}) {
      const RatioEstimate est = resolvent_ratio_exact(g.mdp, g.behavior, g.target, nu, gp);
      const double err = ratio_error(est.values, w, mu);
      if (used == 1) trail += format("%s%.4g", trail.empty() ? "" : " > ", err);
      violations += err > previous * (1.0 + 1e-12);
      previous = err;
    }
  }
  out.seconds = elapsed(start);
  out.passed = violations == 0 && used == instances;
  out.detail = format("%d instances (%d skipped for coverage), %d increases; first instance errors %s", used, skipped,
                      violations, trail.c_str());
  return out;
}

CheckResult check_dice_consistency(int seeds, const CheckScale& scale) {
  const auto start = Clock::now();
  CheckResult out{"dice_consistency", false, "", 0.0};
  std::vector<double> small, large;
  for (int i = 0; i < seeds; ++i) {
    const std::uint64_t seed = instance_seed(scale, "dice_consistency", i);
    const GarnetInstance g = garnet(scale, seed, 0.9);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const RatioTable w = exact_stationary_ratio(mu, reset_law(g.behavior), g.mdp.n_actions());
    const FeatureMap onehot = FeatureMap::one_hot(g.mdp.n_pairs());
    for (std::size_t n : {std::size_t{1000}, std::size_t{10000}}) {
      const TransitionDataset d =
          sample_dataset(g.mdp, g.behavior, g.target, n, SamplingScheme::reset, mix_seed(seed, n));
      const RatioEstimate est = dice_estimate(d, onehot, onehot, g.mdp.n_actions());
      (n == 1000 ? small : large).push_back(ratio_error(est.values, w, mu));
    }
  }
  const double m_small = median(small), m_large = median(large);
  out.seconds = elapsed(start);
  out.passed = m_large < m_small;
  out.detail = format("%d seeds, median chi-square error %.4g at n=1e3, %.4g at n=1e4", seeds, m_small, m_large);
  return out;
}

std::vector<CheckResult> run_invariant_suite(const CheckScale& scale) {
  return {
      check_contraction(20, 50, scale),
      check_approximation_bound(50, scale),
      check_population_oracle(20, scale),
      check_projection_orthogonality(20, scale),
      check_reward_misspecification(50, scale),
      check_approximate_weights(10, scale),
      check_dice_population(10, scale),
      check_resolvent_monotone(10, scale),
      check_dice_consistency(10, scale),
  };
}

}  // namespace swfqe
