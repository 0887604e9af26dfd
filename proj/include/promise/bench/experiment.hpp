#pragma once

// JSON-configured experiments: data preparation, one optimizer run per entry
// of "runs", per-run CSV files and a summary, plus the spectrum report and
// reference solution used by the CLI.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

#include "promise/bench/data.hpp"
#include "promise/bench/svmlight.hpp"
#include "promise/diag.hpp"
#include "promise/optim.hpp"

namespace promise::bench {

using json = nlohmann::json;

struct SyntheticSpec {
  std::string kind = "ridge";  // ridge | logistic
  Index n = 0;
  Index p = 0;
  double beta = 1.0;
  double noise = 0.01;
  double scale = 1.0;
  std::uint64_t seed = 0;
};

struct DataSource {
  std::optional<std::string> path;
  std::optional<Index> num_features;
  std::optional<SyntheticSpec> synthetic;
};

struct NuRule {
  enum class Kind { Absolute, PerSample };
  Kind kind = Kind::PerSample;
  double value = 1e-2;  // nu itself, or c in nu = c / n_tr

  double resolve(Index n_train) const {
    return kind == Kind::Absolute ? value : value / static_cast<double>(n_train);
  }
};

struct RunSpec {
  std::string label;
  OptimizerConfig optimizer;
  std::optional<Index> max_epochs;
};

struct ExperimentConfig {
  DataSource data;
  LossKind task = LossKind::Squared;
  Preprocessing preprocessing = Preprocessing::None;
  RandomFeatureSpec features;
  double holdout = 0.0;
  std::uint64_t split_seed = 0;
  NuRule nu;
  std::vector<RunSpec> runs;
  Index max_epochs = 40;
  std::uint64_t seed = 0;
  std::string output = "results";
  bool wall_clock = true;
  double tolerance = 1e-4;
  std::vector<double> nu_grid;
};

// ---------------------------------------------------------------------------
// JSON parsing

namespace detail {

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
void read_opt(const json& j, const char* key, std::optional<T>& out, const std::string& where) {
  if (j.contains(key)) out = get_as<T>(j, key, where);
}

template <class T>
void read_into(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get_as<T>(j, key, where);
}

inline LossKind parse_task(const std::string& s) {
  if (s == "ridge") return LossKind::Squared;
  if (s == "logistic") return LossKind::Logistic;
  throw ConfigError("unknown task '" + s + "'");
}

inline DataSource parse_data(const json& j) {
  reject_unknown(j, {"path", "num_features", "synthetic"}, "data");
  DataSource d;
  read_opt(j, "path", d.path, "data");
  read_opt(j, "num_features", d.num_features, "data");
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    reject_unknown(s, {"kind", "n", "p", "beta", "noise", "scale", "seed"}, "data.synthetic");
    SyntheticSpec spec;
    read_into(s, "kind", spec.kind, "data.synthetic");
    spec.n = get_as<Index>(s, "n", "data.synthetic");
    spec.p = get_as<Index>(s, "p", "data.synthetic");
    read_into(s, "beta", spec.beta, "data.synthetic");
    read_into(s, "noise", spec.noise, "data.synthetic");
    read_into(s, "scale", spec.scale, "data.synthetic");
    read_into(s, "seed", spec.seed, "data.synthetic");
    if (spec.kind != "ridge" && spec.kind != "logistic")
      throw ConfigError("data.synthetic.kind must be 'ridge' or 'logistic'");
    d.synthetic = spec;
  }
  if (d.path.has_value() == d.synthetic.has_value())
    throw ConfigError("data needs exactly one of 'path' or 'synthetic'");
  return d;
}

inline RunSpec parse_run(const json& j, std::size_t idx) {
  const std::string where = "runs[" + std::to_string(idx) + "]";
  reject_unknown(j, {"label", "method", "preconditioner", "b_g", "b_h", "rank", "rho", "alpha", "eta",
                     "smoothness", "m", "update", "theta2", "pi", "mu", "svrg_option",
                     "max_epochs", "power_tol", "power_max_iter"},
                 where);
  RunSpec r;
  auto& o = r.optimizer;
  o.method = parse_method(get_as<std::string>(j, "method", where));
  if (j.contains("preconditioner")) {
    if (!is_preconditioned(o.method))
      throw ConfigError(where + ": baseline methods take no preconditioner");
    o.precond = PrecondConfig::defaults(parse_precond_kind(get_as<std::string>(j, "preconditioner", where)));
  } else if (is_preconditioned(o.method)) {
    o.precond = PrecondConfig::defaults(PrecondKind::NySSN);
  }
  read_opt(j, "b_g", o.b_g, where);
  read_opt(j, "b_h", o.b_h, where);
  read_into(j, "rank", o.precond.rank, where);
  read_into(j, "rho", o.precond.rho, where);
  read_into(j, "power_tol", o.precond.power.tol, where);
  read_into(j, "power_max_iter", o.precond.power.max_iter, where);
  read_opt(j, "alpha", o.alpha, where);
  read_opt(j, "eta", o.eta, where);
  read_opt(j, "smoothness", o.smoothness, where);
  read_opt(j, "m", o.m, where);
  read_into(j, "theta2", o.theta2, where);
  read_opt(j, "pi", o.pi, where);
  read_opt(j, "mu", o.mu, where);
  read_opt(j, "max_epochs", r.max_epochs, where);
  if (j.contains("update")) {
    const json& u = j.at("update");
    if (u.is_string() && u.get<std::string>() == "once") {
      o.schedule = UpdateSchedule::once();
    } else if (u.is_number_integer()) {
      o.schedule = UpdateSchedule::every_k(u.get<Index>());
    } else {
      throw ConfigError(where + ".update must be \"once\" or a positive integer");
    }
  }
  if (j.contains("svrg_option")) {
    const auto opt = get_as<std::string>(j, "svrg_option", where);
    if (opt == "I") {
      o.svrg_option = SvrgOption::I;
    } else if (opt == "II") {
      o.svrg_option = SvrgOption::II;
    } else {
      throw ConfigError(where + ".svrg_option must be \"I\" or \"II\"");
    }
  }
  r.label = to_string(o.method) + (is_preconditioned(o.method) ? "-" + to_string(o.precond.kind) : "");
  read_into(j, "label", r.label, where);
  return r;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  detail::reject_unknown(j, {"data", "task", "preprocessing", "random_features", "split", "nu",
                             "runs", "max_epochs", "seed", "output", "wall_clock", "tolerance",
                             "nu_grid"},
                         "config");
  ExperimentConfig c;
  if (!j.contains("data")) throw ConfigError("config: missing 'data'");
  c.data = detail::parse_data(j.at("data"));
  if (j.contains("task")) c.task = detail::parse_task(detail::get_as<std::string>(j, "task", "config"));
  if (j.contains("preprocessing"))
    c.preprocessing = parse_preprocessing(detail::get_as<std::string>(j, "preprocessing", "config"));
  if (j.contains("random_features")) {
    const json& rf = j.at("random_features");
    detail::reject_unknown(rf, {"kind", "D", "bandwidth"}, "random_features");
    const auto kind = detail::get_as<std::string>(rf, "kind", "random_features");
    if (kind == "none") {
      c.features.kind = RandomFeatureSpec::Kind::None;
    } else if (kind == "gaussian") {
      c.features.kind = RandomFeatureSpec::Kind::Gaussian;
    } else if (kind == "relu") {
      c.features.kind = RandomFeatureSpec::Kind::Relu;
    } else {
      throw ConfigError("random_features.kind must be none, gaussian or relu");
    }
    if (c.features.kind != RandomFeatureSpec::Kind::None) {
      c.features.D = detail::get_as<Index>(rf, "D", "random_features");
      if (c.features.D < 1) throw ConfigError("random_features.D must be at least 1");
      detail::read_into(rf, "bandwidth", c.features.bandwidth, "random_features");
    }
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    detail::reject_unknown(s, {"holdout", "seed"}, "split");
    detail::read_into(s, "holdout", c.holdout, "split");
    detail::read_into(s, "seed", c.split_seed, "split");
    if (!(c.holdout >= 0.0 && c.holdout < 1.0)) throw ConfigError("split.holdout must lie in [0, 1)");
  }
  if (j.contains("nu")) {
    const json& n = j.at("nu");
    detail::reject_unknown(n, {"rule", "value"}, "nu");
    const auto rule = detail::get_as<std::string>(n, "rule", "nu");
    if (rule == "absolute") {
      c.nu.kind = NuRule::Kind::Absolute;
    } else if (rule == "per_sample") {
      c.nu.kind = NuRule::Kind::PerSample;
    } else {
      throw ConfigError("nu.rule must be 'absolute' or 'per_sample'");
    }
    c.nu.value = detail::get_as<double>(n, "value", "nu");
    if (!(c.nu.value >= 0.0)) throw ConfigError("nu.value must be non-negative");
  }
  if (j.contains("runs")) {
    const json& runs = j.at("runs");
    if (!runs.is_array()) throw ConfigError("runs must be an array");
    for (std::size_t i = 0; i < runs.size(); ++i) c.runs.push_back(detail::parse_run(runs[i], i));
  }
  detail::read_into(j, "max_epochs", c.max_epochs, "config");
  detail::read_into(j, "seed", c.seed, "config");
  detail::read_into(j, "output", c.output, "config");
  detail::read_into(j, "wall_clock", c.wall_clock, "config");
  detail::read_into(j, "tolerance", c.tolerance, "config");
  detail::read_into(j, "nu_grid", c.nu_grid, "config");
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_experiment_config(j);
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedProblem {
  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> test;
  double nu = 0.0;
  std::vector<std::string> warnings;

  GlmModel model(LossKind task) const { return GlmModel(task, nu, train); }
};

/// Load or generate, binarize labels (logistic), split, preprocess, then apply
/// random features drawn from the experiment seed.
inline PreparedProblem prepare_problem(const ExperimentConfig& cfg) {
  Dataset ds;
  if (cfg.data.path) {
    ds = parse_svmlight(*cfg.data.path, cfg.data.num_features);
  } else {
    const auto& s = *cfg.data.synthetic;
    Rng rng(s.seed);
    ds = s.kind == "ridge" ? synthetic_ridge(s.n, s.p, s.beta, s.noise, rng, s.scale).data
                           : synthetic_logistic(s.n, s.p, s.scale, rng).data;
  }
  if (cfg.task == LossKind::Logistic) ds = binarize_labels(std::move(ds));
  Rng split_rng(cfg.split_seed);
  Split split = train_test_split(ds, cfg.holdout, split_rng);
  PreparedProblem out;
  Dataset train = preprocess(std::move(split.train), cfg.preprocessing);
  Dataset test = split.test.n() > 0 ? preprocess(std::move(split.test), cfg.preprocessing)
                                    : std::move(split.test);
  if (cfg.features.kind != RandomFeatureSpec::Kind::None) {
    Rng rng(cfg.seed);
    const auto map = draw_random_features(cfg.features, train.p(), rng);
    train = Dataset{DesignMatrix(map.apply(train.A)), train.labels};
    if (test.n() > 0) test = Dataset{DesignMatrix(map.apply(test.A)), test.labels};
  }
  out.nu = cfg.nu.resolve(train.n());
  if (out.nu == 0.0) out.warnings.push_back("nu = 0: the objective is not strongly convex");
  out.train = std::make_shared<const Dataset>(std::move(train));
  out.test = std::make_shared<const Dataset>(std::move(test));
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline const char* run_csv_header() { return "epoch,passes,train_loss,subopt,seconds,lambda_p,eta"; }

inline std::string format_record(const RunRecord& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", r.epoch, r.passes, r.loss,
                     r.subopt, r.seconds, r.lambda_p, r.eta);
}

inline void write_run_csv(const std::string& path, const std::vector<RunRecord>& records) {
  auto out = fmt::output_file(path);
  out.print("{}\n", run_csv_header());
  for (const auto& r : records) out.print("{}\n", format_record(r));
}

struct RunOutcome {
  std::string label;
  Method method;
  std::optional<PrecondKind> precond;
  RunResult result;
  std::optional<Index> epochs_to_tol;
  std::optional<double> passes_to_tol;
  std::string csv_path;
};

struct ExperimentResult {
  ReferenceSolution reference;
  std::vector<RunOutcome> runs;
  std::vector<std::string> warnings;
  std::string summary_path;
};

inline void write_summary_csv(const std::string& path, const std::vector<RunOutcome>& runs) {
  auto out = fmt::output_file(path);
  out.print("run,method,preconditioner,epochs_to_tol,passes_to_tol,final_subopt,solved,diverged\n");
  for (const auto& r : runs) {
    const double final_subopt =
        r.result.records.empty() ? std::numeric_limits<double>::quiet_NaN() : r.result.records.back().subopt;
    out.print("{},{},{},{},{},{:.17g},{},{}\n", r.label, to_string(r.method),
              r.precond ? to_string(*r.precond) : "none",
              r.epochs_to_tol ? std::to_string(*r.epochs_to_tol) : "",
              r.passes_to_tol ? fmt::format("{:.17g}", *r.passes_to_tol) : "", final_subopt,
              r.epochs_to_tol ? 1 : 0, r.result.diverged ? 1 : 0);
  }
}

/// Runs every configured method against the reference minimum of the training
/// problem and writes <output>/<label>.csv per run plus <output>/summary.csv.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const PreparedProblem prob = prepare_problem(cfg);
  const GlmModel model = prob.model(cfg.task);
  ExperimentResult res;
  res.warnings = prob.warnings;
  res.reference = reference_minimum(model);
  std::filesystem::create_directories(cfg.output);

  std::map<std::string, int> used;
  for (const auto& spec : cfg.runs) {
    OptimizerConfig oc = spec.optimizer;
    oc.max_epochs = spec.max_epochs.value_or(cfg.max_epochs);
    oc.seed = cfg.seed;
    oc.f_star = res.reference.f;
    oc.measure_time = cfg.wall_clock;
    RunOutcome out;
    out.label = spec.label;
    if (const int k = used[spec.label]++; k > 0) out.label += "-" + std::to_string(k + 1);
    out.method = oc.method;
    if (is_preconditioned(oc.method)) out.precond = oc.precond.kind;
    out.result = run(model, oc);
    for (const auto& r : out.result.records) {
      if (r.subopt <= cfg.tolerance) {
        out.epochs_to_tol = r.epoch;
        out.passes_to_tol = r.passes;
        break;
      }
    }
    out.csv_path = (std::filesystem::path(cfg.output) / (out.label + ".csv")).string();
    write_run_csv(out.csv_path, out.result.records);
    res.runs.push_back(std::move(out));
  }
  res.summary_path = (std::filesystem::path(cfg.output) / "summary.csv").string();
  write_summary_csv(res.summary_path, res.runs);
  return res;
}

// ---------------------------------------------------------------------------
// Spectrum report and reference solution files

inline std::vector<double> default_nu_grid(double nu) {
  std::vector<double> grid;
  const double base = nu > 0.0 ? nu : 1e-6;
  for (int k = -3; k <= 3; ++k) grid.push_back(base * std::pow(10.0, k));
  return grid;
}

/// Long-format CSV: quantity,index,nu,value
inline void write_spectrum_csv(const std::string& path, const SpectrumReport& r) {
  auto out = fmt::output_file(path);
  out.print("quantity,index,nu,value\n");
  for (Index j = 0; j < r.singular_values.size(); ++j)
    out.print("singular_value,{},,{:.17g}\n", j, r.singular_values(j));
  for (std::size_t k = 0; k < r.nu_grid.size(); ++k)
    out.print("effective_dimension,{},{:.17g},{:.17g}\n", k, r.nu_grid[k], r.effective_dimensions[k]);
  for (Index i = 0; i < r.leverage_scores.size(); ++i)
    out.print("leverage_score,{},{:.17g},{:.17g}\n", i, r.nu, r.leverage_scores(i));
  out.print("coherence,0,{:.17g},{:.17g}\n", r.nu, r.coherence);
}

inline SpectrumReport run_spectrum(const ExperimentConfig& cfg, const std::string& path) {
  const PreparedProblem prob = prepare_problem(cfg);
  const auto grid = cfg.nu_grid.empty() ? default_nu_grid(prob.nu) : cfg.nu_grid;
  auto report = spectrum_report(prob.train->A.to_dense(), prob.nu, grid);
  write_spectrum_csv(path, report);
  return report;
}

inline json reference_to_json(const ReferenceSolution& ref, const GlmModel& model) {
  json j;
  j["method"] = ref.method;
  j["task"] = to_string(model.loss());
  j["n"] = model.n();
  j["p"] = model.p();
  j["nu"] = model.get_reg();
  j["f_star"] = ref.f;
  j["grad_norm"] = ref.grad_norm;
  j["w"] = std::vector<double>(ref.w.data(), ref.w.data() + ref.w.size());
  return j;
}

}  // namespace promise::bench
