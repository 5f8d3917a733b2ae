#pragma once

// Training loops: plain baseline steps, the network-augmentation step, and
// the dropout and mixup regularization baselines.
//
// A network-augmentation step runs two forward/backward passes from the same
// weights: one at the base widths and one at a single sampled augmented
// config. Base slices receive g_base + alpha * g_aug; augmented-only slices
// receive alpha * g_aug (or g_aug with AugWeightScale::one). One optimizer
// update then touches exactly the union of both configs' slices.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "netaug/autodiff.hpp"
#include "netaug/datasets.hpp"
#include "netaug/error.hpp"
#include "netaug/optimizer.hpp"
#include "netaug/random.hpp"
#include "netaug/supernet.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

enum class TrainMode { baseline, netaug, dropout, mixup };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::netaug: return "netaug";
    case TrainMode::dropout: return "dropout";
    case TrainMode::mixup: return "mixup";
  }
  return "?";
}

inline TrainMode train_mode_from(const std::string& s) {
  if (s == "baseline") return TrainMode::baseline;
  if (s == "netaug") return TrainMode::netaug;
  if (s == "dropout") return TrainMode::dropout;
  if (s == "mixup") return TrainMode::mixup;
  fail(ErrorKind::config, "unknown mode '" + s + "' (expected baseline, netaug, dropout or mixup)");
}

enum class AugWeightScale { alpha, one };

struct TrainRunConfig {
  TrainMode mode = TrainMode::baseline;
  double r = 3.0;
  std::size_t s = 2;
  float alpha = 1.0f;
  float keep_prob = 0.9f;
  float mixup_alpha = 0.1f;
  float label_smoothing = 0.1f;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  OptimizerConfig opt;
  bool allow_base_in_sampling = false;
  AugWeightScale aug_weight_scale = AugWeightScale::alpha;
  InitFan init_fan = InitFan::max;
  bool drop_last = false;

  void validate() const {
    opt.validate();
    if (batch_size == 0) fail(ErrorKind::config, "batch_size must be positive");
    if (!(label_smoothing >= 0.0f && label_smoothing < 1.0f)) {
      fail(ErrorKind::config, "label_smoothing must be in [0, 1)");
    }
    switch (mode) {
      case TrainMode::netaug:
        if (!(alpha >= 0.0f) || !std::isfinite(alpha)) fail(ErrorKind::config, "alpha must be >= 0");
        if (!(r > 1.0) || !std::isfinite(r)) fail(ErrorKind::config, "netaug needs an augmentation factor r > 1");
        if (s < 1) fail(ErrorKind::config, "diversity factor s must be >= 1");
        break;
      case TrainMode::dropout:
        if (!(keep_prob > 0.0f && keep_prob <= 1.0f)) fail(ErrorKind::config, "keep_prob must be in (0, 1]");
        break;
      case TrainMode::mixup:
        if (!(mixup_alpha > 0.0f) || !std::isfinite(mixup_alpha)) fail(ErrorKind::config, "mixup_alpha must be > 0");
        break;
      case TrainMode::baseline:
        break;
    }
  }
};

struct TrainerState {
  std::size_t step = 0;
  std::vector<Tensor> velocity;
  Rng rng;

  TrainerState(const Supernet& net, std::uint64_t seed) : rng(seed) {
    for (const auto& t : net.params.tensors) velocity.emplace_back(t.shape(), 0.0f);
  }
};

struct StepMetrics {
  float loss = 0.0f;      // base-model loss of this step
  float aug_loss = 0.0f;  // auxiliary loss (netaug only)
  std::size_t correct = 0;
  std::size_t count = 0;
  float lr = 0.0f;
  std::optional<WidthConfig> sampled;
};

/// Inverted dropout: keeps each unit with probability kp and rescales by 1/kp.
/// Identity in eval mode or when kp == 1.
inline Var dropout_forward(const Var& x, float kp, Rng& rng, bool training) {
  if (!training || kp >= 1.0f) return x;
  Tensor mask(x.shape());
  const float keep_scale = 1.0f / kp;
  for (auto& m : mask.data()) m = rng.bernoulli(kp) ? keep_scale : 0.0f;
  return mul_const(x, std::move(mask));
}

struct MixedBatch {
  Tensor inputs;
  std::vector<int> labels_a;
  std::vector<int> labels_b;
  float lambda = 1.0f;
};

/// x' = lambda * x + (1 - lambda) * x[perm]; targets are y and y[perm].
inline MixedBatch mix_batch(const Batch& batch, float lambda, std::span<const std::size_t> perm) {
  const std::size_t n = batch.labels.size();
  if (perm.size() != n) fail(ErrorKind::dimension, "mixup permutation length differs from batch size");
  const std::size_t stride = batch.inputs.numel() / n;
  MixedBatch m{batch.inputs, batch.labels, std::vector<int>(n), lambda};
  for (std::size_t i = 0; i < n; ++i) {
    m.labels_b[i] = batch.labels[perm[i]];
    for (std::size_t j = 0; j < stride; ++j) {
      m.inputs[i * stride + j] =
          lambda * batch.inputs[i * stride + j] + (1.0f - lambda) * batch.inputs[perm[i] * stride + j];
    }
  }
  return m;
}

/// Draws lambda ~ Beta(alpha, alpha) and a random pairing, then mixes.
inline MixedBatch mixup_batch(const Batch& batch, float alpha, Rng& rng) {
  const auto lambda = float(rng.beta(alpha, alpha));
  const auto perm = rng.permutation(batch.labels.size());
  return mix_batch(batch, lambda, perm);
}

namespace detail {

inline std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;  // ties go to the lowest index
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    if (int(best) == labels[i]) ++correct;
  }
  return correct;
}

struct PassResult {
  float loss = 0.0f;
  std::size_t correct = 0;
  std::vector<Tensor> grads;  // leading-slice gradients, one per parameter
  std::vector<Shape> slices;
};

/// One forward/backward pass at `config`.
inline PassResult run_pass(const Supernet& net, const WidthConfig& config, const Tensor& inputs,
                           std::span<const int> labels, float smoothing, const ActivationHook& hook = {},
                           const MixedBatch* mixed = nullptr) {
  Tape tape;
  ForwardPass pass = record_forward(tape, net, config, inputs, true, hook);
  Var loss = mixed ? add(scale(softmax_cross_entropy(pass.logits, mixed->labels_a, smoothing), mixed->lambda),
                         scale(softmax_cross_entropy(pass.logits, mixed->labels_b, smoothing), 1.0f - mixed->lambda))
                   : softmax_cross_entropy(pass.logits, labels, smoothing);
  const Gradients g = backward(loss);
  PassResult r;
  r.loss = loss.value().item();
  r.correct = count_correct(pass.logits.value(), labels);
  r.slices = pass.slices;
  for (const auto& p : pass.params) r.grads.push_back(g.of(p));
  return r;
}

inline std::vector<Tensor> zeros_like(const ParamSet& params) {
  std::vector<Tensor> out;
  for (const auto& t : params.tensors) out.emplace_back(t.shape(), 0.0f);
  return out;
}

inline float step_lr(const TrainRunConfig& cfg, const TrainerState& state) {
  return cosine_lr(std::min(state.step, cfg.opt.total_steps), cfg.opt.total_steps, cfg.opt.lr0);
}

}  // namespace detail

/// Single pass at base widths plus one SGD update of the base slices. In
/// dropout mode, dropout follows every hidden activation; in mixup mode the
/// batch is mixed first.
inline StepMetrics baseline_step(Supernet& net, const Batch& batch, const TrainRunConfig& cfg, TrainerState& state) {
  const WidthConfig base = net.base();
  ActivationHook hook;
  if (cfg.mode == TrainMode::dropout) {
    hook = [&](const Var& v) { return dropout_forward(v, cfg.keep_prob, state.rng, true); };
  }
  std::optional<MixedBatch> mixed;
  if (cfg.mode == TrainMode::mixup) mixed = mixup_batch(batch, cfg.mixup_alpha, state.rng);

  detail::PassResult pass = detail::run_pass(net, base, mixed ? mixed->inputs : batch.inputs, batch.labels,
                                             cfg.label_smoothing, hook, mixed ? &*mixed : nullptr);
  std::vector<Tensor> grads = detail::zeros_like(net.params);
  for (std::size_t p = 0; p < grads.size(); ++p) add_into_leading(grads[p], pass.grads[p]);

  StepMetrics m;
  m.lr = detail::step_lr(cfg, state);
  sgd_step(net.params.tensors, grads, state.velocity, cfg.opt, m.lr, pass.slices);
  ++state.step;
  m.loss = pass.loss;
  m.correct = pass.correct;
  m.count = batch.labels.size();
  return m;
}

/// Accumulated gradient of one network-augmentation step, before the update.
struct NetAugGradients {
  std::vector<Tensor> grads;          // full-size, zero outside the active regions
  std::vector<Shape> active;          // union of base and sampled slices
  WidthConfig sampled;
  float base_loss = 0.0f;
  float aug_loss = 0.0f;
  std::size_t correct = 0;
};

inline NetAugGradients netaug_gradients(const Supernet& net, const Batch& batch, const TrainRunConfig& cfg,
                                        TrainerState& state, const std::optional<WidthConfig>& forced = {}) {
  const WidthConfig base = net.base();
  detail::PassResult base_pass = detail::run_pass(net, base, batch.inputs, batch.labels, cfg.label_smoothing);

  NetAugGradients out;
  out.sampled = forced ? *forced : sample_aug_config(net.grid, state.rng, cfg.allow_base_in_sampling);
  if (forced) {
    check_config(net.grid, *forced);
    if (!cfg.allow_base_in_sampling && *forced == base) {
      fail(ErrorKind::config, "augmented config equals the base config; set allow_base_in_sampling");
    }
  }
  detail::PassResult aug_pass = detail::run_pass(net, out.sampled, batch.inputs, batch.labels, cfg.label_smoothing);

  out.grads = detail::zeros_like(net.params);
  const float alpha = cfg.alpha;
  const float outside = cfg.aug_weight_scale == AugWeightScale::alpha ? alpha : 1.0f;
  for (std::size_t p = 0; p < out.grads.size(); ++p) {
    Tensor& g = out.grads[p];
    add_into_leading(g, base_pass.grads[p]);
    const Shape& base_slice = base_pass.slices[p];
    const Tensor& ga = aug_pass.grads[p];
    detail::for_each_leading(g.shape(), ga.shape(), [&](std::size_t f, std::size_t s) {
      g[f] += (in_leading(g.shape(), base_slice, f) ? alpha : outside) * ga[s];
    });
    Shape u = base_slice;
    for (std::size_t d = 0; d < u.size(); ++d) u[d] = std::max(u[d], aug_pass.slices[p][d]);
    out.active.push_back(std::move(u));
  }
  out.base_loss = base_pass.loss;
  out.aug_loss = aug_pass.loss;
  out.correct = base_pass.correct;
  return out;
}

/// Base pass, one sampled augmented pass from the same weights, one update.
/// `forced` pins the augmented config instead of sampling it.
inline StepMetrics netaug_step(Supernet& net, const Batch& batch, const TrainRunConfig& cfg, TrainerState& state,
                               const std::optional<WidthConfig>& forced = {}) {
  NetAugGradients g = netaug_gradients(net, batch, cfg, state, forced);
  StepMetrics m;
  m.lr = detail::step_lr(cfg, state);
  sgd_step(net.params.tensors, g.grads, state.velocity, cfg.opt, m.lr, g.active);
  ++state.step;
  m.loss = g.base_loss;
  m.aug_loss = g.aug_loss;
  m.correct = g.correct;
  m.count = batch.labels.size();
  m.sampled = std::move(g.sampled);
  return m;
}

struct EvalResult {
  double loss = 0.0;  // mean cross-entropy without label smoothing
  double accuracy = 0.0;
};

/// Evaluates the sub-model at `config`. Reads parameters only; no rng involved.
inline EvalResult evaluate(const Supernet& net, const WidthConfig& config, const Dataset& data,
                           std::size_t batch_size = 256) {
  validate(data);
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
    idx.clear();
    for (std::size_t i = lo; i < std::min(data.size(), lo + batch_size); ++i) idx.push_back(i);
    const Batch b = make_batch(data, idx);
    Tape tape;
    ForwardPass pass = record_forward(tape, net, config, b.inputs, false);
    loss += double(softmax_cross_entropy(pass.logits, b.labels, 0.0f).value().item()) * double(idx.size());
    correct += detail::count_correct(pass.logits.value(), b.labels);
  }
  return {loss / double(data.size()), double(correct) / double(data.size())};
}

struct MetricsRecord {
  std::string run_id;
  TrainMode mode = TrainMode::baseline;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double eval_loss = 0.0;
  double eval_acc = 0.0;
  double lr = 0.0;
  double step_ms_compute = 0.0;
  double step_ms_total = 0.0;
};

struct TrainResult {
  std::vector<MetricsRecord> history;
  Supernet net;   // supernet (r = 1 for non-augmented modes)
  Supernet base;  // extracted base model
};

/// Supernet as initialized for `cfg` (augmented only in netaug mode).
inline Supernet init_model(const ArchSpec& arch, const TrainRunConfig& cfg) {
  const AugmentOptions aug = cfg.mode == TrainMode::netaug ? AugmentOptions{cfg.r, cfg.s} : AugmentOptions{1.0, 1};
  return build_supernet(arch, aug, InitOptions{Rng::derived(cfg.seed, 0).engine()(), cfg.init_fan});
}

inline void check_compatible(const ArchSpec& arch, const Dataset& data) {
  validate(data);
  if (data.sample_shape() != arch.input) {
    fail(ErrorKind::config, std::string(to_string(data.split)) + " samples have shape " +
                                shape_str(data.sample_shape()) + " but the architecture expects " +
                                shape_str(arch.input));
  }
  if (data.classes != arch.classes) {
    fail(ErrorKind::config, std::string(to_string(data.split)) + " data has " + std::to_string(data.classes) +
                                " classes, architecture has " + std::to_string(arch.classes));
  }
}

/// Full training run. Every epoch records base-model train/eval metrics and
/// mean step times (compute only, and including batch assembly).
inline TrainResult train(const ArchSpec& arch, TrainRunConfig cfg, const Dataset& train_data,
                         const Dataset& eval_data, const std::string& run_id = "run") {
  validate(arch);
  cfg.validate();
  check_compatible(arch, train_data);
  check_compatible(arch, eval_data);
  if (eval_data.split != Split::test) fail(ErrorKind::config, "evaluation data must be a test split");
  if (train_data.split != Split::train) fail(ErrorKind::config, "training data must be a train split");

  TrainResult result{{}, init_model(arch, cfg), {}};
  Supernet& net = result.net;
  const std::size_t per_epoch = BatchIterator(train_data, cfg.batch_size, 0, cfg.drop_last).count();
  cfg.opt.total_steps = std::max<std::size_t>(1, cfg.epochs * per_epoch);
  TrainerState state(net, Rng::derived(cfg.seed, 1).engine()());
  const WidthConfig base = net.base();

  using clock = std::chrono::steady_clock;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(train_data, cfg.batch_size, Rng::derived(cfg.seed, 1000 + epoch).engine()(), cfg.drop_last);
    double loss_sum = 0.0, compute_ms = 0.0, total_ms = 0.0;
    std::size_t correct = 0, seen = 0;
    float lr = 0.0f;
    for (std::size_t b = 0; b < it.count(); ++b) {
      const auto t0 = clock::now();
      const Batch batch = it[b];
      const auto t1 = clock::now();
      const StepMetrics m = cfg.mode == TrainMode::netaug ? netaug_step(net, batch, cfg, state)
                                                          : baseline_step(net, batch, cfg, state);
      const auto t2 = clock::now();
      compute_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();
      total_ms += std::chrono::duration<double, std::milli>(t2 - t0).count();
      loss_sum += double(m.loss) * double(m.count);
      correct += m.correct;
      seen += m.count;
      lr = m.lr;
    }
    const EvalResult ev = evaluate(net, base, eval_data);
    MetricsRecord rec;
    rec.run_id = run_id;
    rec.mode = cfg.mode;
    rec.seed = cfg.seed;
    rec.epoch = epoch + 1;
    rec.train_loss = seen ? loss_sum / double(seen) : 0.0;
    rec.train_acc = seen ? double(correct) / double(seen) : 0.0;
    rec.eval_loss = ev.loss;
    rec.eval_acc = ev.accuracy;
    rec.lr = lr;
    const double steps = double(std::max<std::size_t>(1, it.count()));
    rec.step_ms_compute = compute_ms / steps;
    rec.step_ms_total = total_ms / steps;
    result.history.push_back(std::move(rec));
  }
  result.base = extract_base(net);
  return result;
}

}  // namespace netaug
