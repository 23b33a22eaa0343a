#pragma once

// Optimizers and the three training procedures: BadNet poison training,
// RIPPLe poison training with the restricted inner-product penalty, and the
// victim's fine-tuning operator.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>
#include <vector>

#include "poisonlab/corpus.hpp"
#include "poisonlab/error.hpp"
#include "poisonlab/model.hpp"
#include "poisonlab/rng.hpp"

namespace poisonlab {

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ValidationError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

enum class DurationUnit { steps, epochs };

struct TrainConfig {
  double lr = 2e-5;
  std::size_t batch_size = 32;
  std::size_t duration = 5000;
  DurationUnit unit = DurationUnit::steps;
  OptimizerKind optimizer = OptimizerKind::adam;
  double weight_decay = 0.0;
  double lambda = 0.1;
  bool first_order_only = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ValidationError("train config: lr must be >= 0");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw ValidationError("train config: lambda must be >= 0");
    if (!(weight_decay >= 0.0)) throw ValidationError("train config: weight_decay must be >= 0");
  }

  // Steps the run takes on a dataset of n examples.
  std::size_t total_steps(std::size_t n) const {
    if (unit == DurationUnit::steps) return duration;
    return duration * ((n + batch_size - 1) / batch_size);
  }
};

/// Poison-phase defaults: 5000 steps, lr 2e-5, batch 32, lambda 0.1.
inline TrainConfig ripple_defaults() { return {}; }

/// BadNet: like RIPPLe but 1250 steps and no penalty.
inline TrainConfig badnet_defaults() {
  TrainConfig c;
  c.duration = 1250;
  c.lambda = 0.0;
  return c;
}

/// Victim fine-tuning: 3 epochs, lr 2e-5, batch 32, Adam.
inline TrainConfig victim_defaults() {
  TrainConfig c;
  c.duration = 3;
  c.unit = DurationUnit::epochs;
  c.lambda = 0.0;
  return c;
}

struct OptimizerState {
  std::vector<double> m, v;
  std::uint64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

namespace detail {

inline void check_grad(const ModelParams& params, const FlatVector& g, std::size_t step) {
  if (g.size() != params.shape().param_count()) throw ValidationError("optimizer: gradient length mismatch");
  if (!all_finite(g)) throw DivergenceError("non-finite gradient", step);
}

}  // namespace detail

/// Bias-corrected Adam with decoupled weight decay: θ -= lr (m̂/(√v̂+ε) + wd θ).
inline void adam_step(ModelParams& params, const FlatVector& g, OptimizerState& state, double lr,
                      double weight_decay, std::size_t step_index) {
  detail::check_grad(params, g, step_index);
  const std::size_t n = g.size();
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  auto theta = params.values();
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    theta[i] -= lr * (mhat / (std::sqrt(vhat) + kAdamEps) + weight_decay * theta[i]);
  }
}

/// θ -= lr (g + wd θ)
inline void sgd_step(ModelParams& params, const FlatVector& g, double lr, double weight_decay,
                     std::size_t step_index) {
  detail::check_grad(params, g, step_index);
  auto theta = params.values();
  for (std::size_t i = 0; i < g.size(); ++i) theta[i] -= lr * (g[i] + weight_decay * theta[i]);
}

inline void optimizer_step(ModelParams& params, const FlatVector& g, OptimizerState& state, const TrainConfig& cfg,
                           double lr, std::size_t step_index) {
  if (cfg.optimizer == OptimizerKind::adam) {
    adam_step(params, g, state, lr, cfg.weight_decay, step_index);
  } else {
    sgd_step(params, g, lr, cfg.weight_decay, step_index);
  }
}

/// Cycles through shuffled epochs of a dataset; the last batch of an epoch
/// may be short.
class BatchSampler {
 public:
  BatchSampler(const Dataset& ds, std::size_t batch_size, std::uint64_t seed)
      : ds_(&ds), batch_size_(batch_size), rng_(seed) {
    if (ds.empty()) throw ValidationError("BatchSampler: empty dataset " + ds.name);
    order_.resize(ds.size());
    reshuffle();
  }

  const std::vector<Example>& next() {
    if (pos_ >= order_.size()) reshuffle();
    batch_.clear();
    const std::size_t end = std::min(pos_ + batch_size_, order_.size());
    for (; pos_ < end; ++pos_) batch_.push_back(ds_->examples[order_[pos_]]);
    return batch_;
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
    pos_ = 0;
  }

  const Dataset* ds_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::vector<Example> batch_;
};

// Separate streams so the poison batches do not depend on whether an ft
// sampler exists; this is what makes lambda = 0 RIPPLe replay BadNet.
inline constexpr std::uint64_t kPoisonStream = 1;
inline constexpr std::uint64_t kFinetuneStream = 2;

struct TraceRecord {
  std::size_t step = 0;
  double poison_loss = std::numeric_limits<double>::quiet_NaN();
  double ft_loss = std::numeric_limits<double>::quiet_NaN();
  double inner_product = std::numeric_limits<double>::quiet_NaN();
  bool penalty_active = false;
};

struct TrainTrace {
  std::vector<TraceRecord> records;

  std::size_t size() const { return records.size(); }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write trace " + path);
    out << "step,poison_loss,ft_loss,inner_product,penalty_active\n" << std::setprecision(10);
    for (const auto& r : records) {
      out << r.step << ',' << r.poison_loss << ',' << r.ft_loss << ',' << r.inner_product << ','
          << (r.penalty_active ? 1 : 0) << '\n';
    }
  }
};

struct TrainResult {
  ModelParams params;
  TrainTrace trace;
};

/// Plain poison training: minimizes the NLL of the poison set.
inline TrainResult badnet_train(const ModelParams& init, const Dataset& poison_set, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res{init, {}};
  const std::size_t steps = cfg.total_steps(poison_set.size());
  if (steps == 0) return res;
  BatchSampler sampler(poison_set, cfg.batch_size, Rng::derive(cfg.seed, kPoisonStream).next());
  OptimizerState state;
  res.trace.records.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    auto [l, g] = loss_and_grad(res.params, sampler.next());
    if (!std::isfinite(l)) throw DivergenceError("badnet_train: non-finite poison loss", s);
    optimizer_step(res.params, g, state, cfg, cfg.lr, s);
    TraceRecord r;
    r.step = s;
    r.poison_loss = l;
    res.trace.records.push_back(r);
  }
  return res;
}

struct RippleStep {
  double loss = 0.0;  // L_P + lambda * max(0, -g_P . g_FT)
  FlatVector grad;
  double poison_loss = 0.0;
  double ft_loss = 0.0;
  double inner_product = 0.0;
  bool penalty_active = false;
};

/// Loss and gradient of L_P(θ) + λ max(0, -∇L_P(θ)·∇L_FT(θ)) with ∇L_FT
/// held constant. The penalty gradient is -λ H_P ∇L_FT when the inner
/// product is negative (zero at the kink). `first_order_only` drops the
/// Hessian term and returns ∇L_P; the loss still includes the penalty.
inline RippleStep ripple_loss_and_grad(const ModelParams& params, Batch poison_batch, Batch ft_batch, double lambda,
                                       bool first_order_only) {
  if (poison_batch.empty() || ft_batch.empty()) throw ValidationError("ripple_loss_and_grad: empty batch");
  RippleStep out;
  auto poison = loss_and_grad(params, poison_batch);
  auto ft = loss_and_grad(params, ft_batch);
  out.poison_loss = poison.loss;
  out.ft_loss = ft.loss;
  out.inner_product = dot(poison.grad, ft.grad);
  if (!std::isfinite(out.poison_loss) || !std::isfinite(out.ft_loss) || !std::isfinite(out.inner_product)) {
    throw DivergenceError("ripple_loss_and_grad: non-finite intermediate", 0);
  }
  out.penalty_active = out.inner_product < 0.0;
  out.loss = out.poison_loss + (out.penalty_active ? lambda * -out.inner_product : 0.0);
  out.grad = std::move(poison.grad);
  if (out.penalty_active && lambda != 0.0 && !first_order_only) {
    const FlatVector hv = hvp(params, poison_batch, ft.grad);
    axpy(-lambda, hv, out.grad);
    if (!all_finite(out.grad)) throw DivergenceError("ripple_loss_and_grad: non-finite Hessian term", 0);
  }
  return out;
}

/// RIPPLe poison training. Each step draws one poison batch and one batch
/// of the (true or proxy) fine-tuning data at the same batch size.
inline TrainResult ripple_train(const ModelParams& init, const Dataset& poison_set, const Dataset& ft_proxy_set,
                                const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res{init, {}};
  const std::size_t steps = cfg.total_steps(poison_set.size());
  if (steps == 0) return res;
  BatchSampler poison_sampler(poison_set, cfg.batch_size, Rng::derive(cfg.seed, kPoisonStream).next());
  BatchSampler ft_sampler(ft_proxy_set, cfg.batch_size, Rng::derive(cfg.seed, kFinetuneStream).next());
  OptimizerState state;
  res.trace.records.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto& pb = poison_sampler.next();
    const auto& fb = ft_sampler.next();
    RippleStep rs;
    try {
      rs = ripple_loss_and_grad(res.params, pb, fb, cfg.lambda, cfg.first_order_only);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("ripple_train: ") + e.what(), s);
    }
    optimizer_step(res.params, rs.grad, state, cfg, cfg.lr, s);
    res.trace.records.push_back({s, rs.poison_loss, rs.ft_loss, rs.inner_product, rs.penalty_active});
  }
  return res;
}

/// Learning rate at step k of K under linear decay to zero.
inline double linear_decay_lr(double lr0, std::size_t k, std::size_t total) {
  return lr0 * (1.0 - static_cast<double>(k) / static_cast<double>(total));
}

/// The victim's fine-tuning operator: mini-batch NLL training with linear
/// learning-rate decay to zero over the run.
inline TrainResult finetune(const ModelParams& init, const Dataset& clean, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult res{init, {}};
  const std::size_t steps = cfg.total_steps(clean.size());
  if (steps == 0) return res;
  BatchSampler sampler(clean, cfg.batch_size, Rng::derive(cfg.seed, kFinetuneStream).next());
  OptimizerState state;
  res.trace.records.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    auto [l, g] = loss_and_grad(res.params, sampler.next());
    if (!std::isfinite(l)) throw DivergenceError("finetune: non-finite loss", s);
    optimizer_step(res.params, g, state, cfg, linear_decay_lr(cfg.lr, s, steps), s);
    TraceRecord r;
    r.step = s;
    r.ft_loss = l;
    res.trace.records.push_back(r);
  }
  return res;
}

}  // namespace poisonlab
