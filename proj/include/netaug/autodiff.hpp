#pragma once

// Reverse-mode automatic differentiation over a per-pass tape.
//
// A Tape records every operation of one forward pass. Var is a cheap handle
// (tape pointer + node id). backward() walks the tape once in reverse
// recording order and returns gradients for every requires_grad leaf.
// Accumulations inside kernels run in double and round once to f32.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "netaug/error.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

using NodeId = std::size_t;

class Tape;
class Gradients;

struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Backward rule: receives the gradient of the node output and one accumulation
/// buffer per input (nullptr when that input does not need a gradient).
using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
    return Var{this, nodes_.size() - 1};
  }

  /// Appends an op node. Inputs must already be on this tape.
  Var record(Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
    bool needs = false;
    for (NodeId in : inputs) {
      if (in >= nodes_.size()) fail(ErrorKind::contract, "op input references a future node");
      needs = needs || nodes_[in].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), needs, false});
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  bool is_leaf(NodeId id) const { return nodes_.at(id).is_leaf; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend Gradients backward(const Var& loss);

  struct Node {
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

/// Gradients of one backward pass, indexed by node id.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  /// Gradient of a requires_grad leaf; exactly zero when the leaf is not on a path to the loss.
  const Tensor& of(const Var& v) const {
    if (v.id >= grads_.size() || grads_[v.id].numel() == 0) {
      fail(ErrorKind::contract, "no gradient recorded for node " + std::to_string(v.id));
    }
    return grads_[v.id];
  }

 private:
  std::vector<Tensor> grads_;
};

inline Gradients backward(const Var& loss) {
  const Tape& tape = *loss.tape;
  const Tensor& lv = loss.value();
  if (!lv.is_scalar()) fail(ErrorKind::contract, "backward requires a scalar loss, got " + shape_str(lv.shape()));
  if (!std::isfinite(lv[0])) fail(ErrorKind::numeric, "non-finite loss value");

  const auto& nodes = tape.nodes_;
  std::vector<Tensor> grads(nodes.size());
  for (NodeId i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf && nodes[i].needs_grad) grads[i] = Tensor(nodes[i].value.shape(), 0.0f);
  }
  if (!nodes[loss.id].needs_grad) return Gradients(std::move(grads));
  grads[loss.id] = Tensor(lv.shape(), 1.0f);

  std::vector<Tensor*> inputs;
  for (NodeId i = loss.id + 1; i-- > 0;) {
    const auto& node = nodes[i];
    if (node.is_leaf || !node.needs_grad || grads[i].numel() == 0) continue;
    inputs.clear();
    for (NodeId in : node.inputs) {
      if (!nodes[in].needs_grad) {
        inputs.push_back(nullptr);
        continue;
      }
      if (grads[in].numel() == 0) grads[in] = Tensor(nodes[in].value.shape(), 0.0f);
      inputs.push_back(&grads[in]);
    }
    node.backward(tape, grads[i], inputs);
    // Interior gradients are no longer needed once propagated.
    grads[i] = Tensor();
  }
  for (NodeId i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf && nodes[i].needs_grad && !grads[i].all_finite()) {
      fail(ErrorKind::numeric, "non-finite gradient for leaf " + std::to_string(i));
    }
  }
  return Gradients(std::move(grads));
}

namespace detail {

inline void require_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) fail(ErrorKind::contract, "operands recorded on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

/// a[m x k] * b[k x n]
inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    fail(ErrorKind::dimension, "matmul of " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += double(A[i * k + p]) * B[p * n + j];
      C[i * n + j] = float(acc);
    }
  const NodeId ia = a.id, ib = b.id;
  return a.tape->record(std::move(C), {ia, ib}, [ia, ib, m, k, n](const Tape& t, const Tensor& g, auto in) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (in[0]) {  // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += double(g[i * n + j]) * B[p * n + j];
          (*in[0])[i * k + p] += float(acc);
        }
    }
    if (in[1]) {  // dB = A^T * dC
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) acc += double(A[i * k + p]) * g[i * n + j];
          (*in[1])[p * n + j] += float(acc);
        }
    }
  });
}

/// x[N x in] * w^T for w stored as [out x in].
inline Var linear(const Var& x, const Var& w) {
  detail::require_same_tape(x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1)) {
    fail(ErrorKind::dimension, "linear of " + shape_str(X.shape()) + " with weight " + shape_str(W.shape()));
  }
  const std::size_t rows = X.dim(0), in = X.dim(1), out = W.dim(0);
  Tensor Y({rows, out});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t p = 0; p < in; ++p) acc += double(X[i * in + p]) * W[o * in + p];
      Y[i * out + o] = float(acc);
    }
  const NodeId ix = x.id, iw = w.id;
  return x.tape->record(std::move(Y), {ix, iw}, [ix, iw, rows, in, out](const Tape& t, const Tensor& g, auto grads) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    if (grads[0]) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t p = 0; p < in; ++p) {
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) acc += double(g[i * out + o]) * W[o * in + p];
          (*grads[0])[i * in + p] += float(acc);
        }
    }
    if (grads[1]) {
      for (std::size_t o = 0; o < out; ++o)
        for (std::size_t p = 0; p < in; ++p) {
          double acc = 0.0;
          for (std::size_t i = 0; i < rows; ++i) acc += double(g[i * out + o]) * X[i * in + p];
          (*grads[1])[o * in + p] += float(acc);
        }
    }
  });
}

/// Adds b[C] along dimension 1 of x[N x C x ...].
inline Var add_bias(const Var& x, const Var& b) {
  detail::require_same_tape(x, b);
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  if (X.rank() < 2 || B.rank() != 1 || B.dim(0) != X.dim(1)) {
    fail(ErrorKind::dimension, "cannot broadcast bias " + shape_str(B.shape()) + " over " + shape_str(X.shape()));
  }
  const std::size_t n = X.dim(0), c = X.dim(1), inner = X.numel() / (n * c);
  Tensor Y = X;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < inner; ++j) Y[(i * c + ch) * inner + j] += B[ch];
  return x.tape->record(std::move(Y), {x.id, b.id}, [n, c, inner](const Tape&, const Tensor& g, auto grads) {
    if (grads[0]) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i];
    }
    if (grads[1]) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < inner; ++j) acc += g[(i * c + ch) * inner + j];
        (*grads[1])[ch] += float(acc);
      }
    }
  });
}

inline Var relu(const Var& x) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v = v > 0.0f ? v : 0.0f;
  const NodeId ix = x.id;
  return x.tape->record(std::move(Y), {ix}, [ix](const Tape& t, const Tensor& g, auto grads) {
    if (!grads[0]) return;
    const Tensor& X = t.value(ix);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (X[i] > 0.0f) (*grads[0])[i] += g[i];
  });
}

/// Elementwise product with a constant tensor (no gradient flows into `mask`).
inline Var mul_const(const Var& x, Tensor mask) {
  const Tensor& X = x.value();
  if (mask.shape() != X.shape()) {
    fail(ErrorKind::dimension, "mask " + shape_str(mask.shape()) + " vs input " + shape_str(X.shape()));
  }
  Tensor Y = X;
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] *= mask[i];
  return x.tape->record(std::move(Y), {x.id}, [m = std::move(mask)](const Tape&, const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i] * m[i];
  });
}

inline Var scale(const Var& x, float c) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v *= c;
  return x.tape->record(std::move(Y), {x.id}, [c](const Tape&, const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < g.numel(); ++i) (*grads[0])[i] += g[i] * c;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b);
  if (a.shape() != b.shape()) {
    fail(ErrorKind::dimension, "add of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Tensor Y = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] += B[i];
  return a.tape->record(std::move(Y), {a.id, b.id}, [](const Tape&, const Tensor& g, auto grads) {
    for (auto* dst : grads) {
      if (!dst) continue;
      for (std::size_t i = 0; i < g.numel(); ++i) (*dst)[i] += g[i];
    }
  });
}

/// Mean over all elements -> scalar.
inline Var mean(const Var& x) {
  const Tensor& X = x.value();
  double acc = 0.0;
  for (float v : X.data()) acc += v;
  const std::size_t n = X.numel();
  return x.tape->record(Tensor::scalar(float(acc / double(n))), {x.id}, [n](const Tape&, const Tensor& g, auto grads) {
    if (!grads[0]) return;
    const float share = float(double(g[0]) / double(n));
    for (auto& v : grads[0]->data()) v += share;
  });
}

/// [N x C x H x W] -> [N x C], mean over spatial positions.
inline Var global_avg_pool(const Var& x) {
  const Tensor& X = x.value();
  if (X.rank() != 4) fail(ErrorKind::dimension, "global_avg_pool expects rank 4, got " + shape_str(X.shape()));
  const std::size_t n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
  Tensor Y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += X[i * hw + j];
    Y[i] = float(acc / double(hw));
  }
  return x.tape->record(std::move(Y), {x.id}, [n, c, hw](const Tape&, const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < n * c; ++i) {
      const float share = float(double(g[i]) / double(hw));
      for (std::size_t j = 0; j < hw; ++j) (*grads[0])[i * hw + j] += share;
    }
  });
}

struct Conv2dGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

inline Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& k, std::size_t stride, std::size_t pad) {
  if (x.size() != 4 || k.size() != 4) {
    fail(ErrorKind::dimension, "conv2d expects rank-4 input and kernel, got " + shape_str(x) + " and " + shape_str(k));
  }
  if (x[1] != k[1]) {
    fail(ErrorKind::dimension, "conv2d channel mismatch: input " + shape_str(x) + " kernel " + shape_str(k));
  }
  if (stride == 0) fail(ErrorKind::dimension, "conv2d stride must be >= 1");
  if (k[2] > x[2] + 2 * pad || k[3] > x[3] + 2 * pad) {
    fail(ErrorKind::dimension, "conv2d kernel " + shape_str(k) + " larger than padded input " + shape_str(x));
  }
  Conv2dGeometry g{x[0], x[1], x[2], x[3], k[0], k[2], k[3], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace detail {

/// Calls fn(x_index, k_index, y_index) for every valid multiply of the convolution.
template <typename Fn>
void conv2d_visit(const Conv2dGeometry& g, Fn&& fn) {
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const std::size_t yi = ((b * g.cout + co) * g.oh + oy) * g.ow + ox;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.pad);
              if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.pad);
                if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
                const std::size_t xi = ((b * g.cin + ci) * g.h + std::size_t(iy)) * g.w + std::size_t(ix);
                const std::size_t ki = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                fn(xi, ki, yi);
              }
            }
        }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) with zero padding.
inline Var conv2d(const Var& x, const Var& k, std::size_t stride = 1, std::size_t pad = 0) {
  detail::require_same_tape(x, k);
  const Tensor& X = x.value();
  const Tensor& K = k.value();
  const Conv2dGeometry geo = conv2d_geometry(X.shape(), K.shape(), stride, pad);
  std::vector<double> acc(geo.n * geo.cout * geo.oh * geo.ow, 0.0);
  detail::conv2d_visit(geo, [&](std::size_t xi, std::size_t ki, std::size_t yi) { acc[yi] += double(X[xi]) * K[ki]; });
  Tensor Y({geo.n, geo.cout, geo.oh, geo.ow});
  for (std::size_t i = 0; i < acc.size(); ++i) Y[i] = float(acc[i]);
  const NodeId ix = x.id, ik = k.id;
  return x.tape->record(std::move(Y), {ix, ik}, [ix, ik, geo](const Tape& t, const Tensor& g, auto grads) {
    const Tensor& X = t.value(ix);
    const Tensor& K = t.value(ik);
    std::vector<double> dx(grads[0] ? X.numel() : 0, 0.0);
    std::vector<double> dk(grads[1] ? K.numel() : 0, 0.0);
    detail::conv2d_visit(geo, [&](std::size_t xi, std::size_t ki, std::size_t yi) {
      if (!dx.empty()) dx[xi] += double(g[yi]) * K[ki];
      if (!dk.empty()) dk[ki] += double(g[yi]) * X[xi];
    });
    for (std::size_t i = 0; i < dx.size(); ++i) (*grads[0])[i] += float(dx[i]);
    for (std::size_t i = 0; i < dk.size(); ++i) (*grads[1])[i] += float(dk[i]);
  });
}

/// Row-wise numerically stable softmax of an [N x K] tensor, in double.
inline std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorKind::dimension, "softmax expects [N x K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, double(logits[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += p[i * k + j] = std::exp(double(logits[i * k + j]) - mx);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
  }
  return p;
}

/// Mean over the batch of -sum_i t_i log p_i with t = (1 - smoothing) onehot + smoothing / K.
inline Var softmax_cross_entropy(const Var& logits, std::span<const int> labels, float smoothing = 0.0f) {
  const Tensor& L = logits.value();
  if (L.rank() != 2) fail(ErrorKind::dimension, "cross entropy expects [N x K] logits, got " + shape_str(L.shape()));
  const std::size_t n = L.dim(0), k = L.dim(1);
  if (labels.size() != n) {
    fail(ErrorKind::dimension, "got " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  if (!(smoothing >= 0.0f && smoothing < 1.0f)) fail(ErrorKind::config, "label smoothing must be in [0, 1)");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= k) {
      fail(ErrorKind::index, "label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                 " outside [0, " + std::to_string(k) + ")");
    }
  }
  const double off = double(smoothing) / double(k);
  const double on = 1.0 - double(smoothing) + off;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, double(L[i * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(double(L[i * k + j]) - mx);
    const double log_z = std::log(z) + mx;
    for (std::size_t j = 0; j < k; ++j) {
      const double t = std::size_t(labels[i]) == j ? on : off;
      total -= t * (double(L[i * k + j]) - log_z);
    }
  }
  std::vector<int> saved(labels.begin(), labels.end());
  const NodeId il = logits.id;
  return logits.tape->record(
      Tensor::scalar(float(total / double(n))), {il},
      [il, n, k, on, off, saved = std::move(saved)](const Tape& t, const Tensor& g, auto grads) {
        if (!grads[0]) return;
        const std::vector<double> p = softmax_rows(t.value(il));
        const double s = double(g[0]) / double(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            const double target = std::size_t(saved[i]) == j ? on : off;
            (*grads[0])[i * k + j] += float(s * (p[i * k + j] - target));
          }
      });
}

}  // namespace netaug
