#pragma once

#include "swfqe/checks.hpp"
#include "swfqe/fqe.hpp"
#include "swfqe/ratio.hpp"
#include "swfqe/sampling.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace swfqe {

inline constexpr const char* kVersion = "0.1.0";

enum class ExperimentKind { baird_sweep, garnet_sweep, reward_misspec, single_run, invariant_suite };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(const std::string& name);

enum class Environment { baird, garnet };

/**
 * Everything needed to reproduce a sweep. Serialized as JSON with the
 * sections `seeds`, `grid`, `fqe`, `data`, `garnet`, `ratio` and `misspec`;
 * unknown keys are rejected.
 */
struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::garnet_sweep;
  std::string name = "garnet_main";  ///< experiment column of every row
  std::string output = "garnet_main";  ///< base file name inside the output directory
  Environment environment = Environment::garnet;  ///< single_run only

  int seed_count = 50;
  std::uint64_t base_seed = 2024;

  std::vector<double> gammas{0.90, 0.925, 0.95, 0.96, 0.97, 0.98, 0.99};
  std::vector<double> kappas{1.0};
  std::vector<Weighting> weightings{Weighting::unweighted, Weighting::exact_ratio};

  int iterations = 200;
  double ridge = 1e-6;
  double theta0 = 0.0;  ///< every coefficient starts here
  bool sampled_next_action = false;
  double divergence_threshold = 1e12;

  std::size_t n = 10000;
  SamplingScheme scheme = SamplingScheme::reset;
  double reward_noise_sd = 0.0;
  bool self_normalize = false;

  GarnetParams garnet;

  RatioMethod ratio_method = RatioMethod::dice;
  double gamma_prime = 0.99;
  double ratio_reg = 1e-8;
  double ratio_penalty = 1.0;

  std::size_t misspec_reward_samples = 10000;
  double misspec_reward_noise_sd = 1.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Defaults for a kind before any user overrides.
ExperimentConfig default_config(ExperimentKind kind);

ExperimentConfig parse_config(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& config);
std::uint64_t config_hash(const ExperimentConfig& config);

std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);

/// 64-bit seed of one (cell, replicate); independent of the weighting mode.
std::uint64_t cell_seed(std::uint64_t base_seed, ExperimentKind kind, std::optional<double> kappa, double gamma,
                        int replicate);

// ---------------------------------------------------------------------------

struct ResultRow {
  std::string experiment;
  int seed = 0;  ///< replicate index
  std::optional<double> kappa;
  double gamma = 0.0;
  std::string weighting;
  int k = 0;
  double err_mu = 0.0;
  double err_behavior = 0.0;
  double eta = 0.0;
  bool diverged = false;
  std::optional<double> ratio_chi2;
};

/// Reward-misspecification quantities for one replicate, all in L2(mu).
struct BoundRow {
  std::string experiment;
  int seed = 0;
  double gamma = 0.0;
  double fixed_point_gap = 0.0;  ///< |Q_hat*_F - Q*_F|
  double bound_projected = 0.0;  ///< |Pi_F (r_hat - r)| / (1 - gamma)
  double bound_full = 0.0;  ///< |r_hat - r| / (1 - gamma)
  double fqe_final_gap = 0.0;  ///< |Q_K - Q_hat*_F| for the run on synthesized data
};

struct FailureRow {
  std::string experiment;
  int seed = 0;
  std::optional<double> kappa;
  double gamma = 0.0;
  std::string weighting;
  std::string error;
};

struct AggregateRow {
  std::string experiment;
  std::optional<double> kappa;
  double gamma = 0.0;
  std::string weighting;
  int runs = 0;
  double final_err_mu_median = 0.0, final_err_mu_p10 = 0.0, final_err_mu_p90 = 0.0;
  double final_err_behavior_median = 0.0, final_err_behavior_p10 = 0.0, final_err_behavior_p90 = 0.0;
  double initial_err_mu_median = 0.0;
  double divergence_fraction = 0.0;
};

struct PicardSummary {
  int traces = 0;
  int violations = 0;
  double min_slack = 0.0;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<BoundRow> bounds;
  std::vector<FailureRow> failures;
  std::vector<CheckResult> checks;  ///< invariant_suite only
  PicardSummary picard;
};

/// Runs every grid cell and replicate. Rows come back sorted.
ExperimentResult run_experiment(const ExperimentConfig& config, int threads = 1);

/// Linear-interpolation percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Per (experiment, kappa, gamma, weighting) summary of final iterates; sorted.
std::vector<AggregateRow> aggregate(const std::vector<ResultRow>& rows);

void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows,
                       const std::vector<std::string>& metadata = {});
std::vector<ResultRow> read_results_csv(std::istream& in);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows,
                         const std::vector<std::string>& metadata = {});
void write_bounds_csv(std::ostream& out, const std::vector<BoundRow>& rows,
                      const std::vector<std::string>& metadata = {});
void write_failures_csv(std::ostream& out, const std::vector<FailureRow>& rows);
void write_checks_csv(std::ostream& out, const std::vector<CheckResult>& checks);

/// Runs the config and writes `<output>.csv`, `<output>_aggregate.csv`, `<output>_failures.csv`
/// and, for the misspecification study, `<output>_bounds.csv`. Returns the written paths.
std::vector<std::filesystem::path> run_config(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                              int threads = 1, ExperimentResult* result = nullptr);

}  // namespace swfqe
