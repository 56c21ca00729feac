#include "swfqe/experiment.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

using namespace swfqe;

namespace {

int default_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int execute(const ExperimentConfig& config, const std::string& out_dir, int threads) {
  ExperimentResult result;
  const auto paths = run_config(config, out_dir, threads, &result);
  for (const auto& p : paths) std::cout << p.string() << '\n';
  if (config.kind == ExperimentKind::invariant_suite) {
    bool ok = true;
    for (const CheckResult& c : result.checks) ok = ok && c.passed;
    return ok ? 0 : 1;
  }
  std::fprintf(stderr, "%zu rows, %zu failures, %d traces checked, %d Picard violations\n", result.rows.size(),
               result.failures.size(), result.picard.traces, result.picard.violations);
  return result.picard.violations == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stationary-weighted fitted Q-evaluation experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  int threads = default_threads();
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config");
  run->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string preset_name;
  bool print_only = false;
  auto* pre = app.add_subcommand("preset", "Run a named preset, or print its config with --print");
  pre->add_option("name", preset_name, "Preset name")->required();
  pre->add_flag("--print", print_only, "Print the JSON config and exit");
  pre->add_option("--out", out_dir, "Output directory");
  pre->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  pre->footer([] {
    std::string names = "Presets:";
    for (const auto& n : preset_names()) names += " " + n;
    return names;
  }());

  std::uint64_t base_seed = 2024;
  auto* check = app.add_subcommand("check", "Run the invariant suite");
  check->add_option("--seed", base_seed, "Base seed");

  std::vector<std::string> inputs;
  std::string aggregate_out;
  auto* agg = app.add_subcommand("aggregate", "Summarize long-format result CSVs");
  agg->add_option("csv", inputs, "Result CSV files")->required()->check(CLI::ExistingFile);
  agg->add_option("-o,--output", aggregate_out, "Write here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return execute(parse_config(slurp(config_path)), out_dir, threads);

    if (*pre) {
      const ExperimentConfig config = preset(preset_name);
      if (print_only) {
        std::cout << config_to_json(config);
        return 0;
      }
      return execute(config, out_dir, threads);
    }

    if (*check) {
      CheckScale scale;
      scale.base_seed = base_seed;
      bool ok = true;
      for (const CheckResult& c : run_invariant_suite(scale)) {
        std::printf("%s %-28s %6.2fs  %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.seconds,
                    c.detail.c_str());
        ok = ok && c.passed;
      }
      return ok ? 0 : 1;
    }

    if (*agg) {
      std::vector<ResultRow> rows;
      for (const auto& path : inputs) {
        std::ifstream in(path, std::ios::binary);
        auto part = read_results_csv(in);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto summary = aggregate(rows);
      if (aggregate_out.empty()) {
        write_aggregate_csv(std::cout, summary);
      } else {
        std::ofstream out(aggregate_out, std::ios::binary);
        if (!out) throw DataError("cannot write " + aggregate_out);
        write_aggregate_csv(out, summary);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
