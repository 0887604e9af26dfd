// promise: command-line front end for the benchmark harness.
//
//   promise run <config.json>        one CSV per run plus summary.csv
//   promise diag <config.json>       spectrum.csv (quantity,index,nu,value)
//   promise solve-ref <config.json>  reference.json
//
// On failure a single JSON object {"error": kind, "message": ...} is written
// to stderr and the exit code is nonzero.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "promise/bench/experiment.hpp"

namespace {

using promise::bench::ExperimentConfig;

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

ExperimentConfig load(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto cfg = promise::bench::load_experiment_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_run(const ExperimentConfig& cfg) {
  const auto res = promise::bench::run_experiment(cfg);
  warn(res.warnings);
  fmt::print("reference F* = {:.17g} ({})\n", res.reference.f, res.reference.method);
  for (const auto& r : res.runs) {
    const auto& last = r.result.records.back();
    fmt::print("{:<28} epochs {:>4}  passes {:>8.2f}  subopt {:.3e}{}{}\n", r.label, last.epoch,
               last.passes, last.subopt,
               r.epochs_to_tol ? fmt::format("  solved at epoch {}", *r.epochs_to_tol) : "",
               r.result.diverged ? "  DIVERGED" : "");
  }
  fmt::print("wrote {}\n", res.summary_path);
  return 0;
}

int cmd_diag(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output);
  const auto path = (std::filesystem::path(cfg.output) / "spectrum.csv").string();
  const auto report = promise::bench::run_spectrum(cfg, path);
  fmt::print("coherence {:.6g} at nu = {:.6g}\n", report.coherence, report.nu);
  fmt::print("wrote {}\n", path);
  return 0;
}

int cmd_solve_ref(const ExperimentConfig& cfg) {
  const auto prob = promise::bench::prepare_problem(cfg);
  warn(prob.warnings);
  const auto model = prob.model(cfg.task);
  const auto ref = promise::bench::reference_minimum(model);
  std::filesystem::create_directories(cfg.output);
  const auto path = (std::filesystem::path(cfg.output) / "reference.json").string();
  std::ofstream out(path);
  out << promise::bench::reference_to_json(ref, model).dump(2) << '\n';
  fmt::print("F* = {:.17g}, |grad| = {:.3e}\n", ref.f, ref.grad_norm);
  fmt::print("wrote {}\n", path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PROMISE preconditioned stochastic optimization benchmarks"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  std::string config;
  app.add_option("--seed", seed, "Override the experiment seed");

  auto* run = app.add_subcommand("run", "Run every configured optimizer and write CSV metrics");
  auto* diag = app.add_subcommand("diag", "Write the spectrum report of the training matrix");
  auto* ref = app.add_subcommand("solve-ref", "Compute the reference minimum");
  for (auto* sub : {run, diag, ref}) {
    sub->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the experiment seed");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return 2;
  }

  try {
    const auto cfg = load(config, seed);
    if (*run) return cmd_run(cfg);
    if (*diag) return cmd_diag(cfg);
    return cmd_solve_ref(cfg);
  } catch (const promise::Error& e) {
    print_error(e.kind(), e.what());
  } catch (const std::exception& e) {
    print_error("internal_error", e.what());
  }
  return 1;
}
