#include "swfqe/fqe.hpp"

#include "swfqe/csv.hpp"

#include <cmath>
#include <ostream>

namespace swfqe {

WeightedRidge::WeightedRidge(const Matrix& design, const Vector& weights, double lambda) {
  require_dims(design.rows() == weights.size(), "weighted_ridge: design rows and weights differ in length");
  if (!(lambda >= 0.0)) throw PreconditionError("ridge lambda must be nonnegative");
  if ((weights.array() < 0.0).any()) throw PreconditionError("regression weights must be nonnegative");
  xtw_ = design.transpose() * weights.asDiagonal();
  Matrix gram = xtw_ * design;
  gram.diagonal().array() += lambda;
  factor_.compute(gram);
  if (lambda == 0.0 && near_singular(factor_))
    throw SingularityError("weighted Gram matrix is singular; use lambda > 0");
}

Vector WeightedRidge::solve(const Vector& targets) const {
  require_dims(targets.size() == xtw_.cols(), "weighted_ridge: targets length mismatch");
  return factor_.solve(xtw_ * targets);
}

Vector weighted_ridge(const Matrix& design, const Vector& targets, const Vector& weights, double lambda) {
  return WeightedRidge(design, weights, lambda).solve(targets);
}

std::string to_string(Weighting weighting) {
  switch (weighting) {
    case Weighting::unweighted: return "unweighted";
    case Weighting::exact_ratio: return "exact_ratio";
    case Weighting::estimated_ratio: return "estimated_ratio";
    case Weighting::custom: return "custom";
  }
  return "?";
}

Weighting parse_weighting(const std::string& name) {
  if (name == "unweighted") return Weighting::unweighted;
  if (name == "exact_ratio") return Weighting::exact_ratio;
  if (name == "estimated_ratio") return Weighting::estimated_ratio;
  if (name == "custom") return Weighting::custom;
  throw PreconditionError("unknown weighting '" + name + "'");
}

// ---------------------------------------------------------------------------

namespace {

// Exact error columns for a trace. T_F is the ridge projection of T in L2(mu).
class TraceMetrics {
public:
  TraceMetrics(const FqeOracles& oracles, const FeatureMap& features, const Policy& target, Discount gamma,
               double ridge, const StateActionDist& behavior)
      : oracles_(oracles),
        phi_(features.phi()),
        behavior_(behavior),
        projector_(features, oracles.mu, ridge),
        gamma_(gamma.value()) {
    require_dims(oracles.q_star.size() == phi_.rows() && oracles.mu.size() == phi_.rows(),
                 "oracles do not match the feature map");
    next_phi_ = expected_next_features(oracles.mdp, target, phi_);
    q_star_F_ = phi_ * oracles.q_star_F.theta;
  }

  void fill(FqeIterate& it, const Vector* previous_theta) const {
    const QTable q = phi_ * it.theta;
    it.err_mu = weighted_norm(q - oracles_.q_star, oracles_.mu);
    it.err_behavior = weighted_norm(q - oracles_.q_star, behavior_);
    it.err_fixed_point = weighted_norm(q - q_star_F_, oracles_.mu);
    if (previous_theta) {
      const QTable bellman = oracles_.mdp.reward() + gamma_ * (next_phi_ * *previous_theta);
      it.eta = weighted_norm(q - projector_.project(bellman), oracles_.mu);
    } else {
      it.eta = 0.0;
    }
  }

private:
  const FqeOracles& oracles_;
  const Matrix& phi_;
  StateActionDist behavior_;
  WeightedProjector projector_;
  double gamma_;
  Matrix next_phi_;
  QTable q_star_F_;
};

Vector initial_theta(const FqeConfig& config, Index d) {
  if (!config.theta0) return Vector::Zero(d);
  require_dims(config.theta0->size() == d, "theta0 length does not match feature dimension");
  return *config.theta0;
}

bool out_of_range(const Vector& theta, double threshold) {
  return !theta.allFinite() || theta.lpNorm<Eigen::Infinity>() > threshold;
}

}  // namespace

FqeTrace fqe_run(const TransitionDataset& data, const FeatureMap& features, const Policy& target,
                 const FqeConfig& config, const std::optional<FqeOracles>& oracles) {
  if (config.iterations < 1) throw PreconditionError("FQE needs at least one iteration");
  if (data.transitions.empty()) throw DataError("empty dataset");
  const Index n = static_cast<Index>(data.size());
  const Index d = features.dim();
  const Index n_actions = target.n_actions();
  require_dims(features.n_pairs() == target.n_states() * n_actions, "features do not match the policy shape");

  Vector weights = Vector::Ones(n);
  if (config.weighting != Weighting::unweighted) {
    if (!data.weights) throw DataError("weighted FQE requires per-sample weights on the dataset");
    require_dims(static_cast<Index>(data.weights->size()) == n, "weights length does not match dataset");
    for (Index i = 0; i < n; ++i) weights[i] = (*data.weights)[i];
  }

  // Targets are affine in theta: y = R + gamma * next_design * theta.
  const Matrix& phi = features.phi();
  const Matrix averaged = policy_average_features(target, phi);
  Matrix design(n, d), next_design(n, d);
  Vector rewards(n);
  for (Index i = 0; i < n; ++i) {
    const Transition& t = data.transitions[i];
    design.row(i) = phi.row(t.s * n_actions + t.a);
    next_design.row(i) =
        config.sampled_next_action ? Matrix(phi.row(t.s_next * n_actions + t.a_next)) : Matrix(averaged.row(t.s_next));
    rewards[i] = t.r;
  }

  const WeightedRidge regression(design, weights, config.ridge * static_cast<double>(n));
  const Vector reward_moment = regression.weighted_design_t() * rewards;
  const Matrix next_moment = regression.weighted_design_t() * next_design;
  const double gamma = config.gamma.value();

  FqeTrace trace;
  trace.iterates.reserve(static_cast<std::size_t>(config.iterations) + 1);
  FqeIterate first;
  first.theta = initial_theta(config, d);
  trace.iterates.push_back(first);

  for (int k = 1; k <= config.iterations; ++k) {
    const Vector& previous = trace.iterates.back().theta;
    FqeIterate it;
    if (trace.diverged) {
      it.theta = previous;
    } else {
      Vector theta = regression.solve_moment(reward_moment + gamma * (next_moment * previous));
      if (out_of_range(theta, config.divergence_threshold)) {
        trace.diverged = true;
        trace.diverged_at = k;
        it.theta = theta.allFinite() ? theta : previous;
      } else {
        it.theta = std::move(theta);
      }
    }
    it.diverged = trace.diverged;
    trace.iterates.push_back(std::move(it));
  }

  if (oracles) {
    const StateActionDist behavior =
        oracles->behavior ? *oracles->behavior : empirical_distribution(data, target.n_states(), n_actions);
    const TraceMetrics metrics(*oracles, features, target, config.gamma, config.ridge, behavior);
    for (std::size_t k = 0; k < trace.iterates.size(); ++k)
      metrics.fill(trace.iterates[k], k == 0 ? nullptr : &trace.iterates[k - 1].theta);
    trace.has_metrics = true;
  }
  return trace;
}

LinearQ population_step_oracle(const LinearQ& q_init, const TabularMdp& mdp, const Policy& target, Discount gamma,
                               const FeatureMap& features, const StateActionDist& mu, double ridge) {
  return weighted_projection(bellman_apply(q_init.values(features), mdp, target, gamma), features, mu, ridge);
}

FqeTrace fqe_population_run(const FeatureMap& features, const FqeConfig& config, const FqeOracles& oracles,
                            const Policy& target) {
  if (config.iterations < 1) throw PreconditionError("FQE needs at least one iteration");
  const WeightedProjector projector(features, oracles.mu, config.ridge);
  const Matrix next_phi = expected_next_features(oracles.mdp, target, features.phi());
  const double gamma = config.gamma.value();

  FqeTrace trace;
  FqeIterate first;
  first.theta = initial_theta(config, features.dim());
  trace.iterates.push_back(first);
  for (int k = 1; k <= config.iterations; ++k) {
    const Vector& previous = trace.iterates.back().theta;
    FqeIterate it;
    it.theta = projector.coefficients(oracles.mdp.reward() + gamma * (next_phi * previous));
    trace.iterates.push_back(std::move(it));
  }

  const StateActionDist behavior = oracles.behavior ? *oracles.behavior : oracles.mu;
  const TraceMetrics metrics(oracles, features, target, config.gamma, config.ridge, behavior);
  for (std::size_t k = 0; k < trace.iterates.size(); ++k)
    metrics.fill(trace.iterates[k], k == 0 ? nullptr : &trace.iterates[k - 1].theta);
  trace.has_metrics = true;
  return trace;
}

PicardReport picard_diagnostics(const FqeTrace& trace, Discount gamma, double tol) {
  if (!trace.has_metrics) throw PreconditionError("picard_diagnostics needs a trace with oracle metrics");
  if (trace.iterates.empty()) throw PreconditionError("empty trace");
  PicardReport report;
  report.min_slack = std::numeric_limits<double>::infinity();
  report.max_slack = -std::numeric_limits<double>::infinity();
  double bound = trace.iterates[0].err_fixed_point;
  for (std::size_t k = 1; k < trace.iterates.size(); ++k) {
    const FqeIterate& it = trace.iterates[k];
    bound = gamma.value() * bound + it.eta;
    const double slack = bound - it.err_fixed_point;
    if (!(slack >= -(tol + 1e-12 * std::abs(bound))))
      throw DiagnosticError("inexact Picard bound violated at k=" + std::to_string(k), static_cast<int>(k));
    report.min_slack = std::min(report.min_slack, slack);
    report.max_slack = std::max(report.max_slack, slack);
    ++report.checked;
  }
  if (report.checked == 0) report.min_slack = report.max_slack = 0.0;
  return report;
}

void write_trace_csv(std::ostream& out, const FqeTrace& trace, const std::vector<std::string>& metadata) {
  for (const std::string& line : metadata) out << "# " << line << '\n';
  out << "k,err_mu,err_behavior,eta_k,err_fixed_point,diverged\n";
  for (std::size_t k = 0; k < trace.iterates.size(); ++k) {
    const FqeIterate& it = trace.iterates[k];
    out << k << ',' << csv::format_real(it.err_mu) << ',' << csv::format_real(it.err_behavior) << ','
        << csv::format_real(it.eta) << ',' << csv::format_real(it.err_fixed_point) << ',' << (it.diverged ? 1 : 0)
        << '\n';
  }
}

}  // namespace swfqe
