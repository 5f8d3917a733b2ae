#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "netaug/error.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

struct OptimizerConfig {
  float lr0 = 0.4f;
  float momentum = 0.9f;
  bool nesterov = true;
  float weight_decay = 4e-5f;
  std::size_t total_steps = 0;

  void validate() const {
    if (!(lr0 > 0.0f) || !std::isfinite(lr0)) fail(ErrorKind::config, "learning rate must be > 0");
    if (!(momentum >= 0.0f && momentum < 1.0f)) fail(ErrorKind::config, "momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0f) || !std::isfinite(weight_decay)) fail(ErrorKind::config, "weight decay must be >= 0");
  }
};

/// lr0 * 0.5 * (1 + cos(pi * n / total)): lr0 at n = 0, decays to 0 at n = total.
inline float cosine_lr(std::size_t n, std::size_t total, float lr0) {
  if (total == 0) fail(ErrorKind::config, "cosine schedule needs total_steps > 0");
  if (n > total) fail(ErrorKind::contract, "step " + std::to_string(n) + " past schedule end " + std::to_string(total));
  const double phase = std::numbers::pi * double(n) / double(total);
  return float(double(lr0) * 0.5 * (1.0 + std::cos(phase)));
}

/// One SGD update with L2 weight decay and (Nesterov) momentum:
///   g' = g + wd * w;  v = mu * v + g';  w -= lr * (nesterov ? g' + mu * v : v)
///
/// Only elements inside each tensor's active leading region are touched
/// (parameters, velocity alike). An empty `active` span means everything.
inline void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, std::span<Tensor> velocity,
                     const OptimizerConfig& opt, float lr, std::span<const Shape> active = {}) {
  if (params.size() != grads.size() || params.size() != velocity.size() ||
      (!active.empty() && active.size() != params.size())) {
    fail(ErrorKind::dimension, "sgd_step: parameter, gradient, velocity and region counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape() != params[p].shape() || velocity[p].shape() != params[p].shape()) {
      fail(ErrorKind::dimension, "sgd_step: shape mismatch for parameter " + std::to_string(p) + ": " +
                                     shape_str(params[p].shape()) + " vs grad " + shape_str(grads[p].shape()));
    }
    if (!grads[p].all_finite()) fail(ErrorKind::numeric, "non-finite gradient for parameter " + std::to_string(p));
  }
  const float mu = opt.momentum;
  const float wd = opt.weight_decay;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params[p];
    Tensor& v = velocity[p];
    const Tensor& g = grads[p];
    auto update = [&](std::size_t i) {
      const float gd = g[i] + wd * w[i];
      v[i] = mu * v[i] + gd;
      const float step = opt.nesterov ? gd + mu * v[i] : v[i];
      w[i] -= lr * step;
    };
    if (active.empty() || active[p] == w.shape()) {
      for (std::size_t i = 0; i < w.numel(); ++i) update(i);
    } else {
      detail::for_each_leading(w.shape(), active[p], [&](std::size_t i, std::size_t) { update(i); });
    }
  }
}

}  // namespace netaug
