#include "swfqe/experiment.hpp"

#include "swfqe/csv.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace swfqe {

using json = nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::baird_sweep: return "baird_sweep";
    case ExperimentKind::garnet_sweep: return "garnet_sweep";
    case ExperimentKind::reward_misspec: return "reward_misspec";
    case ExperimentKind::single_run: return "single_run";
    case ExperimentKind::invariant_suite: return "invariant_suite";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  for (ExperimentKind k : {ExperimentKind::baird_sweep, ExperimentKind::garnet_sweep, ExperimentKind::reward_misspec,
                           ExperimentKind::single_run, ExperimentKind::invariant_suite})
    if (to_string(k) == name) return k;
  throw ConfigError("experiment", "unknown experiment '" + name + "'");
}

namespace {

std::string to_string(Environment env) { return env == Environment::baird ? "baird" : "garnet"; }

Environment parse_environment(const std::string& name) {
  if (name == "baird") return Environment::baird;
  if (name == "garnet") return Environment::garnet;
  throw ConfigError("environment", "unknown environment '" + name + "'");
}

bool uses_baird(const ExperimentConfig& c) {
  return c.kind == ExperimentKind::baird_sweep ||
         (c.kind == ExperimentKind::single_run && c.environment == Environment::baird);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.name = c.output = to_string(kind);
  switch (kind) {
    case ExperimentKind::baird_sweep:
      c.seed_count = 100;
      c.gammas = {0.95};
      c.kappas = {1.0, 0.9, 0.8, 0.7};
      c.iterations = 100;
      c.theta0 = 1.0;
      c.n = 5000;
      c.scheme = SamplingScheme::trajectory;
      break;
    case ExperimentKind::garnet_sweep: break;
    case ExperimentKind::reward_misspec:
      c.gammas = {0.9};
      c.weightings = {Weighting::unweighted};
      break;
    case ExperimentKind::single_run:
      c.seed_count = 1;
      c.gammas = {0.9};
      c.weightings = {Weighting::exact_ratio};
      break;
    case ExperimentKind::invariant_suite: c.seed_count = 1; break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const char* field, const std::string& what) { throw ConfigError(field, what); };
  if (name.empty()) fail("name", "must be nonempty");
  if (output.empty()) fail("output", "must be nonempty");
  if (seed_count < 1) fail("seeds.count", "must be >= 1");
  if (gammas.empty()) fail("grid.gamma", "grid must be nonempty");
  for (double g : gammas)
    if (!(g >= 0.0 && g < 1.0)) fail("grid.gamma", "entries must lie in [0, 1)");
  if (kappas.empty()) fail("grid.kappa", "grid must be nonempty");
  for (double k : kappas)
    if (!(k > 0.0 && k <= 1.0)) fail("grid.kappa", "entries must lie in (0, 1]");
  if (weightings.empty()) fail("weightings", "must be nonempty");
  for (Weighting w : weightings)
    if (w == Weighting::custom) fail("weightings", "'custom' needs user-supplied weights and cannot be swept");
  if (iterations < 1) fail("fqe.iterations", "must be >= 1");
  if (!(ridge >= 0.0)) fail("fqe.ridge", "must be >= 0");
  if (!std::isfinite(theta0)) fail("fqe.theta0", "must be finite");
  if (!(divergence_threshold > 0.0)) fail("fqe.divergence_threshold", "must be positive");
  if (n < 1) fail("data.n", "must be >= 1");
  if (scheme == SamplingScheme::stationary) fail("data.scheme", "must be 'reset' or 'trajectory'");
  if (!(reward_noise_sd >= 0.0)) fail("data.reward_noise_sd", "must be >= 0");
  if (garnet.n_states < 1) fail("garnet.n_states", "must be >= 1");
  if (garnet.n_actions < 1) fail("garnet.n_actions", "must be >= 1");
  if (garnet.branching < 1 || garnet.branching > garnet.n_states) fail("garnet.branching", "must lie in [1, n_states]");
  if (garnet.d < 2) fail("garnet.d", "must be >= 2");
  if (!(garnet.epsilon >= 0.0 && garnet.epsilon <= 1.0)) fail("garnet.epsilon", "must lie in [0, 1]");
  if (!(garnet.transition_concentration > 0.0)) fail("garnet.transition_concentration", "must be positive");
  if (!(garnet.policy_concentration > 0.0)) fail("garnet.policy_concentration", "must be positive");
  if (!(gamma_prime >= 0.0 && gamma_prime < 1.0)) fail("ratio.gamma_prime", "must lie in [0, 1)");
  if (!(ratio_reg >= 0.0)) fail("ratio.reg", "must be >= 0");
  if (!(ratio_penalty > 0.0)) fail("ratio.penalty", "must be positive");
  if (ratio_method == RatioMethod::exact) fail("ratio.method", "must be 'dice' or 'resolvent'");
  if (misspec_reward_samples < 1) fail("misspec.reward_samples", "must be >= 1");
  if (!(misspec_reward_noise_sd >= 0.0)) fail("misspec.reward_noise_sd", "must be >= 0");
  if (kind == ExperimentKind::single_run && (gammas.size() != 1 || kappas.size() != 1 || weightings.size() != 1))
    fail("grid", "single_run takes exactly one gamma, one kappa and one weighting");
  if (kind == ExperimentKind::reward_misspec &&
      (weightings.size() != 1 || weightings[0] != Weighting::unweighted))
    fail("weightings", "reward_misspec runs unweighted FQE on mu-distributed data");
}

namespace {

// Walks one JSON object, remembering which keys were consumed.
class Section {
public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  template <typename F>
  void read(const std::string& key, F&& apply) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      apply(j_.at(key));
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("invalid value (") + e.what() + ")");
    } catch (const PreconditionError& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  template <typename T>
  void value(const std::string& key, T& out) {
    read(key, [&](const json& v) { out = v.get<T>(); });
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, field(key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(field(item.key()), "unknown key");
  }

private:
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
  Section top(root, "");
  std::string kind_name;
  top.value("experiment", kind_name);
  if (kind_name.empty()) throw ConfigError("experiment", "required");
  ExperimentConfig c = default_config(parse_experiment_kind(kind_name));

  top.value("name", c.name);
  if (root.contains("name") && !root.contains("output")) c.output = c.name;
  top.value("output", c.output);
  top.read("environment", [&](const json& v) { c.environment = parse_environment(v.get<std::string>()); });
  top.read("weightings", [&](const json& v) {
    c.weightings.clear();
    for (const auto& w : v) c.weightings.push_back(parse_weighting(w.get<std::string>()));
  });

  Section seeds = top.sub("seeds");
  seeds.value("count", c.seed_count);
  seeds.value("base", c.base_seed);
  seeds.finish();

  Section grid = top.sub("grid");
  grid.value("gamma", c.gammas);
  grid.value("kappa", c.kappas);
  grid.finish();

  Section fqe = top.sub("fqe");
  fqe.value("iterations", c.iterations);
  fqe.value("ridge", c.ridge);
  fqe.value("theta0", c.theta0);
  fqe.value("sampled_next_action", c.sampled_next_action);
  fqe.value("divergence_threshold", c.divergence_threshold);
  fqe.finish();

  Section data = top.sub("data");
  data.value("n", c.n);
  data.read("scheme", [&](const json& v) { c.scheme = parse_sampling_scheme(v.get<std::string>()); });
  data.value("reward_noise_sd", c.reward_noise_sd);
  data.value("self_normalize", c.self_normalize);
  data.finish();

  Section garnet = top.sub("garnet");
  garnet.value("n_states", c.garnet.n_states);
  garnet.value("n_actions", c.garnet.n_actions);
  garnet.value("branching", c.garnet.branching);
  garnet.value("d", c.garnet.d);
  garnet.value("epsilon", c.garnet.epsilon);
  garnet.value("transition_concentration", c.garnet.transition_concentration);
  garnet.value("policy_concentration", c.garnet.policy_concentration);
  garnet.finish();

  Section ratio = top.sub("ratio");
  ratio.read("method", [&](const json& v) { c.ratio_method = parse_ratio_method(v.get<std::string>()); });
  ratio.value("gamma_prime", c.gamma_prime);
  ratio.value("reg", c.ratio_reg);
  ratio.value("penalty", c.ratio_penalty);
  ratio.finish();

  Section misspec = top.sub("misspec");
  misspec.value("reward_samples", c.misspec_reward_samples);
  misspec.value("reward_noise_sd", c.misspec_reward_noise_sd);
  misspec.finish();

  top.finish();
  c.validate();
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = to_string(c.kind);
  j["name"] = c.name;
  j["output"] = c.output;
  j["environment"] = to_string(c.environment);
  j["weightings"] = json::array();
  for (Weighting w : c.weightings) j["weightings"].push_back(to_string(w));
  j["seeds"] = {{"count", c.seed_count}, {"base", c.base_seed}};
  j["grid"] = {{"gamma", c.gammas}, {"kappa", c.kappas}};
  j["fqe"] = {{"iterations", c.iterations},
              {"ridge", c.ridge},
              {"theta0", c.theta0},
              {"sampled_next_action", c.sampled_next_action},
              {"divergence_threshold", c.divergence_threshold}};
  j["data"] = {{"n", c.n},
               {"scheme", to_string(c.scheme)},
               {"reward_noise_sd", c.reward_noise_sd},
               {"self_normalize", c.self_normalize}};
  j["garnet"] = {{"n_states", c.garnet.n_states},
                 {"n_actions", c.garnet.n_actions},
                 {"branching", c.garnet.branching},
                 {"d", c.garnet.d},
                 {"epsilon", c.garnet.epsilon},
                 {"transition_concentration", c.garnet.transition_concentration},
                 {"policy_concentration", c.garnet.policy_concentration}};
  j["ratio"] = {{"method", to_string(c.ratio_method)},
                {"gamma_prime", c.gamma_prime},
                {"reg", c.ratio_reg},
                {"penalty", c.ratio_penalty}};
  j["misspec"] = {{"reward_samples", c.misspec_reward_samples}, {"reward_noise_sd", c.misspec_reward_noise_sd}};
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) { return fnv1a(config_to_json(config)); }

std::vector<std::string> preset_names() {
  return {"baird_095", "baird_099", "baird_0999", "garnet_main", "garnet_estimated", "reward_misspec"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "baird_095" || name == "baird_099" || name == "baird_0999") {
    c = default_config(ExperimentKind::baird_sweep);
    if (name == "baird_099") c.gammas = {0.99};
    if (name == "baird_0999") {
      c.gammas = {0.999};
      c.kappas = {1.0, 0.7, 0.3, 0.1, 0.05};
    }
  } else if (name == "garnet_main") {
    c = default_config(ExperimentKind::garnet_sweep);
  } else if (name == "garnet_estimated") {
    c = default_config(ExperimentKind::garnet_sweep);
    c.weightings = {Weighting::unweighted, Weighting::exact_ratio, Weighting::estimated_ratio};
  } else if (name == "reward_misspec") {
    c = default_config(ExperimentKind::reward_misspec);
  } else {
    throw ConfigError("preset", "unknown preset '" + name + "'");
  }
  c.name = c.output = name;
  c.validate();
  return c;
}

std::uint64_t cell_seed(std::uint64_t base_seed, ExperimentKind kind, std::optional<double> kappa, double gamma,
                        int replicate) {
  std::uint64_t h = mix_seed(base_seed, fnv1a(to_string(kind)));
  h = mix_seed(h, kappa ? std::bit_cast<std::uint64_t>(*kappa) : 0x6e6f2d6b61707061ULL);
  h = mix_seed(h, std::bit_cast<std::uint64_t>(gamma));
  return mix_seed(h, static_cast<std::uint64_t>(replicate));
}

// ---------------------------------------------------------------------------
// Runner

namespace {

struct WorkItem {
  std::optional<double> kappa;
  double gamma;
  int replicate;
};

struct ItemOutput {
  std::vector<ResultRow> rows;
  std::vector<BoundRow> bounds;
  std::vector<FailureRow> failures;
  PicardSummary picard;
};

StateActionDist stationary_or_damped(const TabularMdp& mdp, const Policy& pi) {
  try {
    return stationary_distribution(mdp, pi);
  } catch (const ConvergenceError&) {
    StationaryOptions damped;
    damped.damping = true;
    return stationary_distribution(mdp, pi, damped);
  }
}

StateActionDist reset_law(const Policy& behavior) {
  Vector mass(behavior.n_states() * behavior.n_actions());
  for (Index s = 0; s < behavior.n_states(); ++s)
    for (Index a = 0; a < behavior.n_actions(); ++a)
      mass[s * behavior.n_actions() + a] = behavior(s, a) / static_cast<double>(behavior.n_states());
  return StateActionDist(mass / mass.sum());
}

// Per-pair version of the per-sample exact weights.
RatioTable plug_in_table(const TransitionDataset& data, const StateActionDist& mu, const Policy& target,
                         const Policy& behavior) {
  const Index n_actions = target.n_actions();
  const Vector d_pi = mu.state_marginal(n_actions);
  const Vector rho = empirical_state_marginal(data, target.n_states());
  Vector w = Vector::Zero(target.n_states() * n_actions);
  for (Index s = 0; s < target.n_states(); ++s)
    for (Index a = 0; a < n_actions; ++a)
      if (rho[s] > 0.0 && behavior(s, a) > 0.0) w[s * n_actions + a] = d_pi[s] * target(s, a) / (rho[s] * behavior(s, a));
  return RatioTable{std::move(w)};
}

FqeConfig fqe_config(const ExperimentConfig& c, double gamma, Index d, Weighting weighting) {
  FqeConfig f;
  f.gamma = Discount(gamma);
  f.iterations = c.iterations;
  f.ridge = c.ridge;
  f.weighting = weighting;
  f.theta0 = Vector::Constant(d, c.theta0);
  f.sampled_next_action = c.sampled_next_action;
  f.divergence_threshold = c.divergence_threshold;
  return f;
}

class ItemRunner {
public:
  ItemRunner(const ExperimentConfig& config, const WorkItem& item)
      : c_(config), item_(item), seed_(cell_seed(config.base_seed, config.kind, item.kappa, item.gamma, item.replicate)) {}

  ItemOutput run() {
    try {
      if (c_.kind == ExperimentKind::reward_misspec)
        misspec();
      else if (uses_baird(c_))
        baird();
      else
        garnet();
    } catch (const std::exception& e) {
      fail("*", e.what());
    }
    return std::move(out_);
  }

private:
  void fail(const std::string& weighting, const std::string& what) {
    out_.failures.push_back(FailureRow{c_.name, item_.replicate, item_.kappa, item_.gamma, weighting, what});
  }

  void record(const FqeTrace& trace, const std::string& weighting, std::optional<double> chi2) {
    for (std::size_t k = 0; k < trace.iterates.size(); ++k) {
      const FqeIterate& it = trace.iterates[k];
      out_.rows.push_back(ResultRow{c_.name, item_.replicate, item_.kappa, item_.gamma, weighting, static_cast<int>(k),
                                    it.err_mu, it.err_behavior, it.eta, it.diverged, chi2});
    }
    ++out_.picard.traces;
    try {
      const PicardReport rep = picard_diagnostics(trace, Discount(item_.gamma));
      out_.picard.min_slack = out_.picard.traces == 1 ? rep.min_slack : std::min(out_.picard.min_slack, rep.min_slack);
    } catch (const DiagnosticError& e) {
      ++out_.picard.violations;
      fail(weighting, e.what());
    }
  }

  // Shared by the Baird and Garnet sweeps.
  void sweep(const TabularMdp& mdp, const Policy& target, const Policy& behavior, const FeatureMap& features) {
    const Discount gamma(item_.gamma);
    TransitionDataset data =
        sample_dataset(mdp, behavior, target, c_.n, c_.scheme, mix_seed(seed_, 1), c_.reward_noise_sd);
    const StateActionDist mu = stationary_or_damped(mdp, target);
    FixedPointOptions fp;
    fp.ridge = c_.ridge;
    const FqeOracles oracles{mdp, solve_q_star(mdp, target, gamma),
                             projected_fixed_point(mdp, target, gamma, features, mu, std::nullopt, fp), mu,
                             std::nullopt};

    // Reference ratio against the law the data is drawn from.
    std::optional<RatioTable> reference;
    try {
      const StateActionDist nu =
          c_.scheme == SamplingScheme::reset ? reset_law(behavior) : stationary_or_damped(mdp, behavior);
      reference = exact_stationary_ratio(mu, nu, mdp.n_actions());
    } catch (const CoverageError&) {
    }
    auto chi2 = [&](const RatioTable& table) -> std::optional<double> {
      if (!reference) return std::nullopt;
      return ratio_error(table, *reference, mu);
    };

    for (Weighting weighting : c_.weightings) {
      const std::string label = to_string(weighting);
      try {
        std::optional<double> quality;
        data.weights.reset();
        if (weighting == Weighting::unweighted) {
          quality = chi2(RatioTable{Vector::Ones(mdp.n_pairs())});
        } else if (weighting == Weighting::exact_ratio) {
          data.weights = empirical_weights(data, mu, target, behavior, c_.self_normalize);
          quality = chi2(plug_in_table(data, mu, target, behavior));
        } else {
          const RatioEstimate est = estimate_ratio(data, mdp.n_states(), target, behavior);
          data.weights = weights_from_table(data, est.values, mdp.n_actions());
          quality = chi2(est.values);
        }
        record(fqe_run(data, features, target, fqe_config(c_, item_.gamma, features.dim(), weighting), oracles), label,
               quality);
      } catch (const std::exception& e) {
        fail(label, e.what());
      }
    }
  }

  RatioEstimate estimate_ratio(const TransitionDataset& data, Index n_states, const Policy& target,
                               const Policy& behavior) const {
    if (c_.ratio_method == RatioMethod::resolvent)
      return resolvent_ratio_empirical(data, n_states, behavior, target, c_.gamma_prime);
    const FeatureMap onehot = FeatureMap::one_hot(n_states * target.n_actions());
    return dice_estimate(data, onehot, onehot, target.n_actions(), c_.ratio_reg, c_.ratio_penalty);
  }

  void baird() {
    const BairdInstance b = build_baird(item_.kappa.value_or(1.0));
    sweep(b.mdp, b.target, b.behavior, b.features);
  }

  void garnet() {
    const GarnetInstance g = garnet_generate(seed_, c_.garnet, Discount(item_.gamma));
    sweep(g.mdp, g.target, g.behavior, g.features);
  }

  // Reward model fitted on behavior data, then FQE on mu-distributed transitions with that reward.
  void misspec() {
    const Discount gamma(item_.gamma);
    const GarnetInstance g = garnet_generate(seed_, c_.garnet, gamma);
    const StateActionDist mu = stationary_or_damped(g.mdp, g.target);
    const Index n_actions = g.mdp.n_actions();

    const TransitionDataset logged = sample_dataset(g.mdp, g.behavior, g.target, c_.misspec_reward_samples, c_.scheme,
                                                    mix_seed(seed_, 1), c_.misspec_reward_noise_sd);
    const std::vector<double> w = empirical_weights(logged, mu, g.target, g.behavior);
    // Weighted ridge on one-hot reward features, solved pair by pair.
    Vector num = Vector::Zero(g.mdp.n_pairs()), den = Vector::Zero(g.mdp.n_pairs());
    for (std::size_t i = 0; i < logged.size(); ++i) {
      const Index p = logged.transitions[i].s * n_actions + logged.transitions[i].a;
      num[p] += w[i] * logged.transitions[i].r;
      den[p] += w[i];
    }
    const double lambda = c_.ridge * static_cast<double>(logged.size());
    Vector r_hat = Vector::Zero(g.mdp.n_pairs());
    for (Index p = 0; p < r_hat.size(); ++p)
      if (den[p] + lambda > 0.0) r_hat[p] = num[p] / (den[p] + lambda);

    TransitionDataset synthetic = sample_from_distribution(g.mdp, mu, g.target, c_.n, mix_seed(seed_, 2));
    for (Transition& t : synthetic.transitions) t.r = r_hat[t.s * n_actions + t.a];

    const TabularMdp fitted = g.mdp.with_reward(r_hat);
    FixedPointOptions fp;
    fp.ridge = c_.ridge;
    const FqeOracles oracles{fitted, solve_q_star(fitted, g.target, gamma),
                             projected_fixed_point(g.mdp, g.target, gamma, g.features, mu, r_hat, fp), mu,
                             std::nullopt};
    const FqeTrace trace =
        fqe_run(synthetic, g.features, g.target, fqe_config(c_, item_.gamma, g.features.dim(), Weighting::unweighted),
                oracles);
    record(trace, to_string(Weighting::unweighted), std::nullopt);

    const LinearQ base = projected_fixed_point(g.mdp, g.target, gamma, g.features, mu);
    const LinearQ shifted = projected_fixed_point(g.mdp, g.target, gamma, g.features, mu, r_hat);
    const Vector delta = r_hat - g.mdp.reward();
    const WeightedProjector projector(g.features, mu, 0.0);
    BoundRow row;
    row.experiment = c_.name;
    row.seed = item_.replicate;
    row.gamma = item_.gamma;
    row.fixed_point_gap = weighted_norm(g.features.values(shifted.theta - base.theta), mu);
    row.bound_projected = weighted_norm(projector.project(delta), mu) / (1.0 - item_.gamma);
    row.bound_full = weighted_norm(delta, mu) / (1.0 - item_.gamma);
    row.fqe_final_gap = trace.iterates.back().err_fixed_point;
    out_.bounds.push_back(row);
  }

  const ExperimentConfig& c_;
  WorkItem item_;
  std::uint64_t seed_;
  ItemOutput out_;
};

auto row_key(const ResultRow& r) {
  return std::tuple(r.experiment, r.kappa.has_value(), r.kappa.value_or(0.0), r.gamma, r.weighting, r.seed, r.k);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, int threads) {
  config.validate();
  ExperimentResult result;
  if (config.kind == ExperimentKind::invariant_suite) {
    CheckScale scale;
    scale.n_states = config.garnet.n_states;
    scale.n_actions = config.garnet.n_actions;
    scale.branching = config.garnet.branching;
    scale.base_seed = config.base_seed;
    result.checks = run_invariant_suite(scale);
    return result;
  }

  std::vector<WorkItem> items;
  const bool with_kappa = uses_baird(config);
  for (double gamma : config.gammas)
    for (std::size_t ki = 0; ki < (with_kappa ? config.kappas.size() : 1); ++ki)
      for (int rep = 0; rep < config.seed_count; ++rep)
        items.push_back(
            WorkItem{with_kappa ? std::optional<double>(config.kappas[ki]) : std::nullopt, gamma, rep});

  std::vector<ItemOutput> outputs(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) outputs[i] = ItemRunner(config, items[i]).run();
  };
  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(items.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  bool first = true;
  for (ItemOutput& o : outputs) {
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());
    result.bounds.insert(result.bounds.end(), o.bounds.begin(), o.bounds.end());
    result.failures.insert(result.failures.end(), o.failures.begin(), o.failures.end());
    result.picard.violations += o.picard.violations;
    if (o.picard.traces > 0) {
      result.picard.min_slack = first ? o.picard.min_slack : std::min(result.picard.min_slack, o.picard.min_slack);
      first = false;
    }
    result.picard.traces += o.picard.traces;
  }
  std::sort(result.rows.begin(), result.rows.end(),
            [](const ResultRow& a, const ResultRow& b) { return row_key(a) < row_key(b); });
  std::sort(result.bounds.begin(), result.bounds.end(), [](const BoundRow& a, const BoundRow& b) {
    return std::tie(a.gamma, a.seed) < std::tie(b.gamma, b.seed);
  });
  std::sort(result.failures.begin(), result.failures.end(), [](const FailureRow& a, const FailureRow& b) {
    return std::tuple(a.kappa.value_or(0.0), a.gamma, a.seed, a.weighting, a.error) <
           std::tuple(b.kappa.value_or(0.0), b.gamma, b.seed, b.weighting, b.error);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Aggregation

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("percentile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw DataError("nothing to aggregate");
  using CellKey = std::tuple<std::string, bool, double, double, std::string>;
  struct Run {
    const ResultRow* first = nullptr;
    const ResultRow* last = nullptr;
  };
  std::map<CellKey, std::map<int, Run>> cells;
  for (const ResultRow& r : rows) {
    Run& run = cells[CellKey{r.experiment, r.kappa.has_value(), r.kappa.value_or(0.0), r.gamma, r.weighting}][r.seed];
    if (!run.first || r.k < run.first->k) run.first = &r;
    if (!run.last || r.k > run.last->k) run.last = &r;
  }
  std::vector<AggregateRow> out;
  for (const auto& [key, runs] : cells) {
    std::vector<double> err_mu, err_b, init;
    int diverged = 0;
    for (const auto& [seed, run] : runs) {
      err_mu.push_back(run.last->err_mu);
      err_b.push_back(run.last->err_behavior);
      init.push_back(run.first->err_mu);
      diverged += run.last->diverged;
    }
    AggregateRow a;
    a.experiment = std::get<0>(key);
    if (std::get<1>(key)) a.kappa = std::get<2>(key);
    a.gamma = std::get<3>(key);
    a.weighting = std::get<4>(key);
    a.runs = static_cast<int>(runs.size());
    a.final_err_mu_median = percentile(err_mu, 0.5);
    a.final_err_mu_p10 = percentile(err_mu, 0.1);
    a.final_err_mu_p90 = percentile(err_mu, 0.9);
    a.final_err_behavior_median = percentile(err_b, 0.5);
    a.final_err_behavior_p10 = percentile(err_b, 0.1);
    a.final_err_behavior_p90 = percentile(err_b, 0.9);
    a.initial_err_mu_median = percentile(init, 0.5);
    a.divergence_fraction = static_cast<double>(diverged) / static_cast<double>(runs.size());
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

const char* kResultHeader = "experiment,seed,kappa,gamma,weighting,k,err_mu,err_behavior,eta_k,diverged,ratio_chi2";

void write_metadata(std::ostream& out, const std::vector<std::string>& metadata) {
  for (const std::string& line : metadata) out << "# " << line << '\n';
}

std::optional<double> parse_optional(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return csv::parse_real(field);
}

}  // namespace

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows, const std::vector<std::string>& metadata) {
  write_metadata(out, metadata);
  out << kResultHeader << '\n';
  for (const ResultRow& r : rows)
    out << r.experiment << ',' << r.seed << ',' << csv::format_optional(r.kappa) << ',' << csv::format_real(r.gamma)
        << ',' << r.weighting << ',' << r.k << ',' << csv::format_real(r.err_mu) << ','
        << csv::format_real(r.err_behavior) << ',' << csv::format_real(r.eta) << ',' << (r.diverged ? 1 : 0) << ','
        << csv::format_optional(r.ratio_chi2) << '\n';
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  bool header = false;
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kResultHeader) throw DataError(std::string("result CSV header must be ") + kResultHeader);
      header = true;
      continue;
    }
    const auto f = csv::split(line);
    if (f.size() != 11) throw DataError("result CSV row has " + std::to_string(f.size()) + " fields, expected 11");
    ResultRow r;
    r.experiment = f[0];
    r.seed = static_cast<int>(csv::parse_real(f[1]));
    r.kappa = parse_optional(f[2]);
    r.gamma = csv::parse_real(f[3]);
    r.weighting = f[4];
    r.k = static_cast<int>(csv::parse_real(f[5]));
    r.err_mu = csv::parse_real(f[6]);
    r.err_behavior = csv::parse_real(f[7]);
    r.eta = csv::parse_real(f[8]);
    r.diverged = csv::parse_real(f[9]) != 0.0;
    r.ratio_chi2 = parse_optional(f[10]);
    rows.push_back(std::move(r));
  }
  if (!header) throw DataError("result CSV has no header");
  return rows;
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows,
                         const std::vector<std::string>& metadata) {
  write_metadata(out, metadata);
  out << "experiment,kappa,gamma,weighting,runs,final_err_mu_median,final_err_mu_p10,final_err_mu_p90,"
         "final_err_behavior_median,final_err_behavior_p10,final_err_behavior_p90,initial_err_mu_median,"
         "divergence_fraction\n";
  for (const AggregateRow& a : rows)
    out << a.experiment << ',' << csv::format_optional(a.kappa) << ',' << csv::format_real(a.gamma) << ','
        << a.weighting << ',' << a.runs << ',' << csv::format_real(a.final_err_mu_median) << ','
        << csv::format_real(a.final_err_mu_p10) << ',' << csv::format_real(a.final_err_mu_p90) << ','
        << csv::format_real(a.final_err_behavior_median) << ',' << csv::format_real(a.final_err_behavior_p10) << ','
        << csv::format_real(a.final_err_behavior_p90) << ',' << csv::format_real(a.initial_err_mu_median) << ','
        << csv::format_real(a.divergence_fraction) << '\n';
}

void write_bounds_csv(std::ostream& out, const std::vector<BoundRow>& rows, const std::vector<std::string>& metadata) {
  write_metadata(out, metadata);
  out << "experiment,seed,gamma,fixed_point_gap,bound_projected,bound_full,fqe_final_gap\n";
  for (const BoundRow& b : rows)
    out << b.experiment << ',' << b.seed << ',' << csv::format_real(b.gamma) << ','
        << csv::format_real(b.fixed_point_gap) << ',' << csv::format_real(b.bound_projected) << ','
        << csv::format_real(b.bound_full) << ',' << csv::format_real(b.fqe_final_gap) << '\n';
}

namespace {

std::string quote(const std::string& s) {
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

}  // namespace

void write_failures_csv(std::ostream& out, const std::vector<FailureRow>& rows) {
  out << "experiment,seed,kappa,gamma,weighting,error\n";
  for (const FailureRow& f : rows)
    out << f.experiment << ',' << f.seed << ',' << csv::format_optional(f.kappa) << ',' << csv::format_real(f.gamma)
        << ',' << f.weighting << ',' << quote(f.error) << '\n';
}

void write_checks_csv(std::ostream& out, const std::vector<CheckResult>& checks) {
  out << "check,passed,detail\n";
  for (const CheckResult& c : checks) out << c.name << ',' << (c.passed ? 1 : 0) << ',' << quote(c.detail) << '\n';
}

std::vector<std::filesystem::path> run_config(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                              int threads, ExperimentResult* result_out) {
  ExperimentResult result = run_experiment(config, threads);
  std::filesystem::create_directories(out_dir);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(config)));
  const std::vector<std::string> metadata{std::string("swfqe ") + kVersion, "experiment=" + config.name,
                                          "kind=" + to_string(config.kind), std::string("config_hash=") + hash};

  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& suffix) {
    written.push_back(out_dir / (config.output + suffix));
    std::ofstream f(written.back(), std::ios::binary);
    if (!f) throw DataError("cannot write " + written.back().string());
    return f;
  };

  if (config.kind == ExperimentKind::invariant_suite) {
    auto f = open(".csv");
    write_metadata(f, metadata);
    write_checks_csv(f, result.checks);
  } else {
    {
      auto f = open(".csv");
      write_results_csv(f, result.rows, metadata);
    }
    {
      auto f = open("_aggregate.csv");
      write_aggregate_csv(f, result.rows.empty() ? std::vector<AggregateRow>{} : aggregate(result.rows), metadata);
    }
    {
      auto f = open("_failures.csv");
      write_failures_csv(f, result.failures);
    }
    if (config.kind == ExperimentKind::reward_misspec) {
      auto f = open("_bounds.csv");
      write_bounds_csv(f, result.bounds, metadata);
    }
  }
  if (result_out) *result_out = std::move(result);
  return written;
}

}  // namespace swfqe
