#pragma once

// Double-precision reference implementations used as test oracles. They share
// no code with the library kernels: plain loops over flat row-major arrays.

#include <cmath>
#include <cstdint>
#include <vector>

#include "netaug/arch.hpp"
#include "netaug/grad_check.hpp"
#include "netaug/tensor.hpp"

namespace ref {

using Vec = std::vector<double>;

inline Vec to_vec(const netaug::Tensor& t) { return Vec(t.data().begin(), t.data().end()); }

/// Hash of a relu activation pattern.
struct Region {
  std::uint64_t h = 1469598103934665603ull;
  void add(bool positive) { h = (h ^ (positive ? 1u : 0u)) * 1099511628211ull; }
};

inline Vec relu(const Vec& x, Region& region) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    region.add(x[i] > 0.0);
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  return y;
}

/// y[n, o] = sum_i x[n, i] w[o, i] + b[o]
inline Vec dense(const Vec& x, std::size_t n, std::size_t in, const Vec& w, const Vec& b, std::size_t out) {
  Vec y(n * out);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.empty() ? 0.0 : b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[o * in + i];
      y[r * out + o] = s;
    }
  return y;
}

/// Zero-padded cross-correlation, x[n, c, h, w] with k[o, c, kh, kw].
inline Vec conv(const Vec& x, std::size_t n, std::size_t c, std::size_t h, std::size_t w, const Vec& k, std::size_t o,
                std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  Vec y(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t co = 0; co < o; ++co)
      for (std::size_t yy = 0; yy < oh; ++yy)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t e = 0; e < kw; ++e) {
                const long iy = long(yy * stride + a) - long(pad);
                const long ix = long(xx * stride + e) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(w)) continue;
                s += x[((b * c + ci) * h + std::size_t(iy)) * w + std::size_t(ix)] * k[((co * c + ci) * kh + a) * kw + e];
              }
          y[((b * o + co) * oh + yy) * ow + xx] = s;
        }
  return y;
}

inline Vec avg_pool(const Vec& x, std::size_t n, std::size_t c, std::size_t hw) {
  Vec y(n * c, 0.0);
  for (std::size_t i = 0; i < n * c; ++i) {
    for (std::size_t j = 0; j < hw; ++j) y[i] += x[i * hw + j];
    y[i] /= double(hw);
  }
  return y;
}

/// Mean smoothed cross-entropy, computed as log-sum-exp minus target dot logits.
inline double cross_entropy(const Vec& logits, std::size_t n, std::size_t k, const std::vector<int>& labels,
                            double smoothing) {
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double mx = logits[r * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[r * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[r * k + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double t = (int(j) == labels[r] ? 1.0 - smoothing : 0.0) + smoothing / double(k);
      total += t * (lse - logits[r * k + j]);
    }
  }
  return total / double(n);
}

/// Logits of a sub-model whose parameters are `p` (leading slices, stored
/// order) on input x. Follows the documented layer semantics: relu after
/// every hidden layer, residual add on width-preserving bottlenecks, global
/// average pooling where a conv stack ends.
inline Vec forward(const netaug::ArchSpec& arch, const std::vector<netaug::Shape>& shapes, const netaug::ParamsF64& p,
                   const Vec& x, std::size_t n, Region& region) {
  using netaug::LayerKind;
  Vec h = x;
  bool spatial = arch.input.size() == 3;
  std::size_t c = arch.input[0], hh = spatial ? arch.input[1] : 1, ww = spatial ? arch.input[2] : 1;
  std::size_t q = 0;
  for (const auto& l : arch.layers) {
    if (spatial && l.kind != LayerKind::conv) {
      h = avg_pool(h, n, c, hh * ww);
      spatial = false;
    }
    if (l.kind == LayerKind::conv) {
      const auto& ks = shapes[q];
      std::size_t oh = 0, ow = 0;
      h = conv(h, n, c, hh, ww, p[q], ks[0], ks[2], ks[3], l.stride, l.pad, oh, ow);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < ks[0]; ++co)
          for (std::size_t j = 0; j < oh * ow; ++j) h[(b * ks[0] + co) * oh * ow + j] += p[q + 1][co];
      h = relu(h, region);
      c = ks[0], hh = oh, ww = ow;
      q += 2;
    } else if (l.kind == LayerKind::dense) {
      const std::size_t out = shapes[q][0];
      h = relu(dense(h, n, c, p[q], p[q + 1], out), region);
      c = out;
      q += 2;
    } else {
      const std::size_t inner = shapes[q][0], out = shapes[q + 2][0];
      const Vec mid = relu(dense(h, n, c, p[q], p[q + 1], inner), region);
      Vec y = dense(mid, n, inner, p[q + 2], p[q + 3], out);
      if (out == c)
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += h[i];
      h = std::move(y);
      c = out;
      q += 4;
    }
  }
  if (spatial) h = avg_pool(h, n, c, hh * ww);
  return dense(h, n, c, p[q], p[q + 1], arch.classes);
}

/// Reference loss closure over a fixed batch for grad_check.
inline netaug::ReferenceLoss model_loss(const netaug::ArchSpec& arch, std::vector<netaug::Shape> shapes,
                                        const netaug::Tensor& x, std::vector<int> labels, double smoothing) {
  const std::size_t n = x.dim(0);
  return [=, xv = to_vec(x)](const netaug::ParamsF64& p) {
    Region region;
    const Vec logits = forward(arch, shapes, p, xv, n, region);
    return netaug::ProbeResult{cross_entropy(logits, n, arch.classes, labels, smoothing), region.h};
  };
}

}  // namespace ref
