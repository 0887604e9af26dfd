#pragma once

// PROMISE optimizers (SketchySGD, SketchySVRG, SketchySAGA, SketchyKatyusha)
// and their unpreconditioned baselines (SVRG, b-nice SAGA, Loopless Katyusha).
//
// Every run starts at w = 0, records metrics at epoch boundaries (every
// ceil(n / b_g) steps), and counts full data passes as
//   b_g / n per step, 1 per full gradient, 2 b_H / n per preconditioner update.

#include <chrono>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>

#include "promise/glm.hpp"
#include "promise/precond.hpp"

namespace promise {

enum class Method { SketchySGD, SketchySVRG, SketchySAGA, SketchyKatyusha, SVRG, SAGA, LKatyusha };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::SketchySGD: return "SketchySGD";
    case Method::SketchySVRG: return "SketchySVRG";
    case Method::SketchySAGA: return "SketchySAGA";
    case Method::SketchyKatyusha: return "SketchyKatyusha";
    case Method::SVRG: return "SVRG";
    case Method::SAGA: return "SAGA";
    case Method::LKatyusha: return "LKatyusha";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::SketchySGD, Method::SketchySVRG, Method::SketchySAGA,
                 Method::SketchyKatyusha, Method::SVRG, Method::SAGA, Method::LKatyusha})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

inline bool is_preconditioned(Method m) {
  return m == Method::SketchySGD || m == Method::SketchySVRG || m == Method::SketchySAGA ||
         m == Method::SketchyKatyusha;
}

enum class SvrgOption { I, II };

struct OptimizerConfig {
  Method method = Method::SketchySVRG;
  std::optional<Index> b_g;  // default min(256, n)
  std::optional<Index> b_h;  // default floor(sqrt(n))
  PrecondConfig precond = PrecondConfig::defaults(PrecondKind::NySSN);
  std::optional<UpdateSchedule> schedule;  // default: once for ridge, every epoch for logistic
  std::optional<double> alpha;
  std::optional<double> eta;         // fixed learning rate (not for the Katyusha family)
  std::optional<double> smoothness;  // baselines: replaces the average smoothness estimate
  std::optional<Index> m;            // SVRG snapshot period, default ceil(n / b_g)
  double theta2 = 0.5;
  std::optional<double> pi;  // default b_g / n
  std::optional<double> mu;  // default nu
  Index max_epochs = 40;
  std::uint64_t seed = 0;
  SvrgOption svrg_option = SvrgOption::I;
  std::optional<double> f_star;
  bool measure_time = true;
};

struct RunRecord {
  Index epoch = 0;
  double passes = 0.0;
  double loss = 0.0;
  double subopt = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  double lambda_p = std::numeric_limits<double>::quiet_NaN();
  double eta = std::numeric_limits<double>::quiet_NaN();
};

struct RunResult {
  Vec w;
  std::vector<RunRecord> records;
  bool diverged = false;
};

using MetricsCallback = std::function<void(const RunRecord&)>;
/// Called before each step with the step index, the iterate the step starts
/// from, and whether the preconditioner was rebuilt at that iterate.
using IterateObserver = std::function<void(Index, const Vec&, bool)>;

/// eta = max{1 / (2 (nu n + L)), 1 / (3 L)}
inline double learning_rate_saga_rule(double lambda, double nu, Index n) {
  if (!(lambda > 0.0)) throw InvalidInput("learning_rate_saga_rule: smoothness must be positive");
  return std::max(1.0 / (2.0 * (nu * static_cast<double>(n) + lambda)), 1.0 / (3.0 * lambda));
}

/// Configuration with every default filled in for a particular model.
struct ResolvedConfig {
  Method method;
  Index n;
  Index b_g;
  Index b_h;
  Index epoch_len;
  Index m;
  UpdateSchedule schedule;
  std::optional<double> alpha;
  std::optional<double> eta;
  double smoothness;
  double theta2;
  double pi;
  double mu;
  Index max_epochs;
};

inline ResolvedConfig resolve(const GlmModel& model, const OptimizerConfig& cfg) {
  ResolvedConfig rc{};
  rc.method = cfg.method;
  rc.n = model.n();
  const Index n = rc.n;
  rc.b_g = cfg.b_g.value_or(std::min<Index>(256, n));
  if (rc.b_g < 1 || rc.b_g > n) throw ConfigError("b_g must lie in [1, n]");
  rc.b_h = cfg.b_h.value_or(std::max<Index>(1, static_cast<Index>(std::floor(std::sqrt(double(n))))));
  if (rc.b_h < 1 || rc.b_h > n) throw ConfigError("b_H must lie in [1, n]");
  rc.epoch_len = (n + rc.b_g - 1) / rc.b_g;
  rc.m = cfg.m.value_or(rc.epoch_len);
  if (rc.m < 1) throw ConfigError("m must be positive");
  if (cfg.schedule) {
    rc.schedule = *cfg.schedule;
  } else {
    rc.schedule = model.loss() == LossKind::Squared ? UpdateSchedule::once()
                                                     : UpdateSchedule::every_k(rc.epoch_len);
  }
  if (cfg.alpha && !(*cfg.alpha > 0.0)) throw ConfigError("alpha must be positive");
  rc.alpha = cfg.alpha;
  if (!cfg.alpha) {
    if (cfg.method == Method::SketchySGD) rc.alpha = 0.5;
    if (cfg.method == Method::SketchyKatyusha) rc.alpha = 2.0 / 3.0;
  }
  if (cfg.eta && !(*cfg.eta > 0.0)) throw ConfigError("eta must be positive");
  if (cfg.eta && (cfg.method == Method::SketchyKatyusha || cfg.method == Method::LKatyusha))
    throw ConfigError("eta cannot be fixed for Katyusha methods; it follows from theta1, theta2");
  rc.eta = cfg.eta;
  rc.smoothness = cfg.smoothness.value_or(model.average_smoothness());
  if (!is_preconditioned(cfg.method) && !(rc.smoothness > 0.0))
    throw ConfigError("smoothness estimate must be positive");
  if (!(cfg.theta2 > 0.0 && cfg.theta2 < 1.0)) throw ConfigError("theta2 must lie in (0, 1)");
  rc.theta2 = cfg.theta2;
  rc.pi = cfg.pi.value_or(static_cast<double>(rc.b_g) / static_cast<double>(n));
  if (!(rc.pi > 0.0 && rc.pi <= 1.0)) throw ConfigError("pi must lie in (0, 1]");
  rc.mu = cfg.mu.value_or(model.get_reg());
  if ((cfg.method == Method::SketchyKatyusha || cfg.method == Method::LKatyusha) && !(rc.mu > 0.0))
    throw ConfigError("Katyusha methods need a positive strong convexity parameter mu");
  if (cfg.max_epochs < 0) throw ConfigError("max_epochs must be non-negative");
  rc.max_epochs = cfg.max_epochs;
  return rc;
}

/// O(n) gradient table for GLM SAGA: one scalar phi_i' per sample plus the
/// running average x = (1/n) sum_i s_i a_i. The regularization term is kept
/// outside the table.
class SagaTable {
 public:
  explicit SagaTable(const GlmModel& model)
      : model_(&model), slots_(Vec::Zero(model.n())), avg_(Vec::Zero(model.p())) {}

  const Vec& slots() const { return slots_; }
  const Vec& average() const { return avg_; }

  /// Variance-reduced gradient on batch at w; refreshes the batch's slots and
  /// the table average.
  Vec step(const Batch& batch, const Vec& w) {
    const auto& A = model_->data().A;
    Vec aux = Vec::Zero(model_->p());
    for (Index i : batch) {
      const double c = model_->gradient_coefficient(i, w);
      A.add_row(i, c - slots_(i), aux);
      slots_(i) = c;
    }
    Vec g = avg_ + aux / static_cast<double>(batch.size());
    g.noalias() += model_->get_reg() * w;
    avg_.noalias() += aux / static_cast<double>(model_->n());
    return g;
  }

  /// Table average recomputed from the slots.
  Vec recompute_average() const {
    return model_->data().A.multiply_transpose(slots_) / static_cast<double>(model_->n());
  }

 private:
  const GlmModel* model_;
  Vec slots_;
  Vec avg_;
};

/// grad_B F(w) - grad_B F(anchor) + full_grad_anchor
inline Vec variance_reduced_gradient(const GlmModel& model, const Batch& batch, const Vec& w,
                                     const Vec& anchor, const Vec& full_grad_anchor) {
  return model.get_stoch_grad(batch, w) - model.get_stoch_grad(batch, anchor) + full_grad_anchor;
}

namespace detail {

class RunContext {
 public:
  using Clock = std::chrono::steady_clock;

  RunContext(const GlmModel& model, const OptimizerConfig& cfg, MetricsCallback cb,
             IterateObserver observer)
      : model(model),
        rc(resolve(model, cfg)),
        rng(cfg.seed),
        sampler(model.n()),
        f_star_(cfg.f_star),
        measure_time_(cfg.measure_time),
        cb_(std::move(cb)),
        observer_(std::move(observer)) {
    if (is_preconditioned(cfg.method)) precond.emplace(cfg.precond, model.get_reg());
    result.w = Vec::Zero(model.p());
    initial_loss_ = model.full_loss(result.w);
  }

  const GlmModel& model;
  ResolvedConfig rc;
  Rng rng;
  BatchSampler sampler;
  std::optional<Preconditioner> precond;
  RunResult result;
  double passes = 0.0;
  double eta = std::numeric_limits<double>::quiet_NaN();

  Index total_steps() const { return rc.max_epochs * rc.epoch_len; }

  void start_clock() { t0_ = Clock::now(); }
  void stop_clock() {
    if (measure_time_) seconds_ += std::chrono::duration<double>(Clock::now() - t0_).count();
  }

  Batch gradient_batch() {
    passes += static_cast<double>(rc.b_g) / static_cast<double>(rc.n);
    return sampler.draw(rc.b_g, rng);
  }

  Vec full_grad(const Vec& w) {
    passes += 1.0;
    return model.get_full_grad(w);
  }

  /// Rebuilds the preconditioner at w when step k is an update time.
  bool maybe_refresh(Index k, const Vec& w) {
    if (!precond || !rc.schedule.due(k)) return false;
    const Batch b1 = sampler.draw(rc.b_h, rng);
    const Batch b2 = sampler.draw(rc.b_h, rng);
    precond->update(model, b1, b2, w, rng);
    passes += 2.0 * static_cast<double>(rc.b_h) / static_cast<double>(rc.n);
    if (!(precond->lambda_p() > 0.0) || !std::isfinite(precond->lambda_p()))
      throw NumericalError("preconditioned smoothness estimate is not positive");
    return true;
  }

  Vec direction(const Vec& g) const { return precond ? precond->direction(g) : g; }

  double lambda_p() const {
    return precond && precond->ready() ? precond->lambda_p() : std::numeric_limits<double>::quiet_NaN();
  }

  void observe(Index k, const Vec& w, bool refreshed) const {
    if (observer_) observer_(k, w, refreshed);
  }

  /// Appends the record for `epoch` at w; false once the run has diverged.
  bool record(Index epoch, const Vec& w) {
    RunRecord r;
    r.epoch = epoch;
    r.passes = passes;
    r.loss = w.allFinite() ? model.full_loss(w) : std::numeric_limits<double>::quiet_NaN();
    if (f_star_) r.subopt = r.loss - *f_star_;
    r.seconds = seconds_;
    r.lambda_p = lambda_p();
    r.eta = eta;
    result.records.push_back(r);
    if (cb_) cb_(r);
    const bool blown = !std::isfinite(r.loss) || (initial_loss_ > 0.0 && r.loss > 1e6 * initial_loss_);
    if (blown) result.diverged = true;
    return !blown;
  }

  /// Call after step k has completed; records at epoch boundaries.
  /// Returns false when the run must stop.
  bool after_step(Index k, const Vec& w) {
    if (!w.allFinite()) {
      stop_clock();
      record((k + rc.epoch_len) / rc.epoch_len, w);
      return false;
    }
    if ((k + 1) % rc.epoch_len != 0) return true;
    stop_clock();
    const bool ok = record((k + 1) / rc.epoch_len, w);
    start_clock();
    return ok;
  }

  RunResult finish(const Vec& w) {
    result.w = w;
    return std::move(result);
  }

 private:
  std::optional<double> f_star_;
  bool measure_time_;
  double seconds_ = 0.0;
  double initial_loss_ = 0.0;
  Clock::time_point t0_{};
  MetricsCallback cb_;
  IterateObserver observer_;
};

inline void check_method(const OptimizerConfig& cfg, std::initializer_list<Method> allowed,
                         const char* who) {
  for (auto m : allowed)
    if (cfg.method == m) return;
  throw ConfigError(std::string(who) + ": method " + to_string(cfg.method) + " not handled here");
}

// SVRG loop shared by SketchySVRG and the SVRG baseline.
inline RunResult run_svrg_loop(RunContext& ctx, SvrgOption option) {
  const GlmModel& model = ctx.model;
  const auto& rc = ctx.rc;
  Vec w_hat = Vec::Zero(model.p());
  Vec w = w_hat;
  if (!ctx.precond) {
    ctx.eta = rc.eta ? *rc.eta : learning_rate_saga_rule(rc.smoothness, model.get_reg(), rc.n);
  }
  if (!ctx.record(0, w) || rc.max_epochs == 0) return ctx.finish(w);
  ctx.start_clock();
  const Index total = ctx.total_steps();
  Index t = 0;
  while (t < total) {
    const Vec g_bar = ctx.full_grad(w_hat);
    w = w_hat;
    Index pick = 0;
    if (option == SvrgOption::II) {
      std::uniform_int_distribution<Index> u(0, rc.m - 1);
      pick = u(ctx.rng);
    }
    Vec next_snapshot = w;
    for (Index k = 0; k < rc.m && t < total; ++k, ++t) {
      const bool refreshed = ctx.maybe_refresh(t, w);
      if (refreshed) {
        ctx.eta = rc.eta    ? *rc.eta
                  : rc.alpha ? *rc.alpha / ctx.precond->lambda_p()
                             : learning_rate_saga_rule(ctx.precond->lambda_p(), model.get_reg(), rc.n);
      }
      ctx.observe(t, w, refreshed);
      if (option == SvrgOption::II && k == pick) next_snapshot = w;
      const Batch batch = ctx.gradient_batch();
      const Vec g = variance_reduced_gradient(model, batch, w, w_hat, g_bar);
      w.noalias() -= ctx.eta * ctx.direction(g);
      if (!ctx.after_step(t, w)) return ctx.finish(w);
    }
    w_hat = option == SvrgOption::I ? w : next_snapshot;
  }
  ctx.stop_clock();
  return ctx.finish(w);
}

inline RunResult run_saga_loop(RunContext& ctx) {
  const GlmModel& model = ctx.model;
  const auto& rc = ctx.rc;
  Vec w = Vec::Zero(model.p());
  SagaTable table(model);
  if (!ctx.precond) {
    ctx.eta = rc.eta ? *rc.eta : learning_rate_saga_rule(rc.smoothness, model.get_reg(), rc.n);
  }
  if (!ctx.record(0, w)) return ctx.finish(w);
  ctx.start_clock();
  for (Index k = 0; k < ctx.total_steps(); ++k) {
    const bool refreshed = ctx.maybe_refresh(k, w);
    if (refreshed) {
      ctx.eta = rc.eta    ? *rc.eta
                : rc.alpha ? *rc.alpha / ctx.precond->lambda_p()
                           : learning_rate_saga_rule(ctx.precond->lambda_p(), model.get_reg(), rc.n);
    }
    ctx.observe(k, w, refreshed);
    const Batch batch = ctx.gradient_batch();
    const Vec g = table.step(batch, w);
    w.noalias() -= ctx.eta * ctx.direction(g);
    if (!ctx.after_step(k, w)) return ctx.finish(w);
  }
  ctx.stop_clock();
  return ctx.finish(w);
}

struct KatyushaParams {
  double L;
  double sigma;
  double theta1;
  double eta;
};

inline KatyushaParams katyusha_params(double L, double mu, double alpha, Index n, double theta2) {
  KatyushaParams kp{};
  kp.L = L;
  kp.sigma = mu / L;
  kp.theta1 = std::min(std::sqrt(alpha * static_cast<double>(n) * kp.sigma), 0.5);
  kp.eta = theta2 / ((1.0 + theta2) * kp.theta1);
  return kp;
}

inline RunResult run_katyusha_loop(RunContext& ctx) {
  const GlmModel& model = ctx.model;
  const auto& rc = ctx.rc;
  Vec w = Vec::Zero(model.p());
  Vec y = w;
  Vec z = w;
  KatyushaParams kp{};
  if (!ctx.precond) {
    // Loopless Katyusha: theta1 = min(sqrt(2 sigma n / 3), 1/2) with L the average smoothness.
    kp = katyusha_params(rc.smoothness, rc.mu, 2.0 / 3.0, rc.n, rc.theta2);
    ctx.eta = kp.eta;
  }
  if (!ctx.record(0, w) || rc.max_epochs == 0) return ctx.finish(w);
  ctx.start_clock();
  Vec g_bar = ctx.full_grad(y);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index stale_limit = 3 * rc.epoch_len;
  Index since_refresh = 0;
  for (Index k = 0; k < ctx.total_steps(); ++k) {
    const bool refreshed = ctx.maybe_refresh(k, w);
    if (refreshed) {
      kp = katyusha_params(ctx.precond->lambda_p(), rc.mu, *rc.alpha, rc.n, rc.theta2);
      ctx.eta = kp.eta;
    }
    ctx.observe(k, w, refreshed);
    const Vec x = kp.theta1 * z + rc.theta2 * y + (1.0 - kp.theta1 - rc.theta2) * w;
    const Batch batch = ctx.gradient_batch();
    const Vec g = variance_reduced_gradient(model, batch, x, y, g_bar);
    const Vec v = ctx.direction(g);
    const double es = kp.eta * kp.sigma;
    Vec z_next = (es * x + z - (kp.eta / kp.L) * v) / (1.0 + es);
    Vec w_next = x + kp.theta1 * (z_next - z);
    ++since_refresh;
    if (unif(ctx.rng) <= rc.pi || since_refresh >= stale_limit) {
      y = w;
      g_bar = ctx.full_grad(y);
      since_refresh = 0;
    }
    z = std::move(z_next);
    w = std::move(w_next);
    if (!ctx.after_step(k, w)) return ctx.finish(w);
  }
  ctx.stop_clock();
  return ctx.finish(w);
}

}  // namespace detail

/// SketchySGD: w <- w - eta P^{-1} grad_B F(w), eta = alpha / lambda_P.
inline RunResult run_sketchy_sgd(const GlmModel& model, const OptimizerConfig& cfg,
                                 const MetricsCallback& cb = {}, const IterateObserver& obs = {}) {
  detail::check_method(cfg, {Method::SketchySGD}, "run_sketchy_sgd");
  detail::RunContext ctx(model, cfg, cb, obs);
  const auto& rc = ctx.rc;
  Vec w = Vec::Zero(model.p());
  if (!ctx.record(0, w)) return ctx.finish(w);
  ctx.start_clock();
  for (Index k = 0; k < ctx.total_steps(); ++k) {
    const bool refreshed = ctx.maybe_refresh(k, w);
    if (refreshed) ctx.eta = rc.eta ? *rc.eta : *rc.alpha / ctx.precond->lambda_p();
    ctx.observe(k, w, refreshed);
    const Batch batch = ctx.gradient_batch();
    w.noalias() -= ctx.eta * ctx.direction(model.get_stoch_grad(batch, w));
    if (!ctx.after_step(k, w)) return ctx.finish(w);
  }
  ctx.stop_clock();
  return ctx.finish(w);
}

inline RunResult run_sketchy_svrg(const GlmModel& model, const OptimizerConfig& cfg,
                                  const MetricsCallback& cb = {}, const IterateObserver& obs = {}) {
  detail::check_method(cfg, {Method::SketchySVRG}, "run_sketchy_svrg");
  detail::RunContext ctx(model, cfg, cb, obs);
  return detail::run_svrg_loop(ctx, cfg.svrg_option);
}

inline RunResult run_sketchy_saga(const GlmModel& model, const OptimizerConfig& cfg,
                                  const MetricsCallback& cb = {}, const IterateObserver& obs = {}) {
  detail::check_method(cfg, {Method::SketchySAGA}, "run_sketchy_saga");
  detail::RunContext ctx(model, cfg, cb, obs);
  return detail::run_saga_loop(ctx);
}

inline RunResult run_sketchy_katyusha(const GlmModel& model, const OptimizerConfig& cfg,
                                      const MetricsCallback& cb = {},
                                      const IterateObserver& obs = {}) {
  detail::check_method(cfg, {Method::SketchyKatyusha}, "run_sketchy_katyusha");
  detail::RunContext ctx(model, cfg, cb, obs);
  return detail::run_katyusha_loop(ctx);
}

/// SVRG, SAGA or Loopless Katyusha with P = I.
inline RunResult run_baseline(const GlmModel& model, const OptimizerConfig& cfg,
                              const MetricsCallback& cb = {}, const IterateObserver& obs = {}) {
  detail::check_method(cfg, {Method::SVRG, Method::SAGA, Method::LKatyusha}, "run_baseline");
  detail::RunContext ctx(model, cfg, cb, obs);
  switch (cfg.method) {
    case Method::SVRG: return detail::run_svrg_loop(ctx, cfg.svrg_option);
    case Method::SAGA: return detail::run_saga_loop(ctx);
    default: return detail::run_katyusha_loop(ctx);
  }
}

inline RunResult run(const GlmModel& model, const OptimizerConfig& cfg,
                     const MetricsCallback& cb = {}, const IterateObserver& obs = {}) {
  switch (cfg.method) {
    case Method::SketchySGD: return run_sketchy_sgd(model, cfg, cb, obs);
    case Method::SketchySVRG: return run_sketchy_svrg(model, cfg, cb, obs);
    case Method::SketchySAGA: return run_sketchy_saga(model, cfg, cb, obs);
    case Method::SketchyKatyusha: return run_sketchy_katyusha(model, cfg, cb, obs);
    default: return run_baseline(model, cfg, cb, obs);
  }
}

}  // namespace promise
