#pragma once

// Weight-shared width-augmented supernet.
//
// Only the largest augmented model is stored. Every sub-model, including the
// base model, is a leading-slice view: a layer at width w' uses rows/columns
// [0, w') of the stored tensors. Classifier head and input dimensions are
// never augmented.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "netaug/arch.hpp"
#include "netaug/autodiff.hpp"
#include "netaug/error.hpp"
#include "netaug/random.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

/// One row per hidden layer: the allowed widths of that layer's augmented
/// dimension, ascending. Non-augmentable layers have a single entry.
struct WidthGrid {
  std::vector<std::vector<std::size_t>> rows;

  friend bool operator==(const WidthGrid&, const WidthGrid&) = default;
};

/// One chosen width per hidden layer.
struct WidthConfig {
  std::vector<std::size_t> widths;

  friend bool operator==(const WidthConfig&, const WidthConfig&) = default;
};

struct AugmentOptions {
  double ratio = 1.0;        // r: max width / base width
  std::size_t diversity = 1;  // s: spacing steps between w and r*w
};

enum class InitFan { max, base };

/// Widths linearly spaced between w and r*w over s steps, rounded to nearest
/// and deduplicated.
inline std::vector<std::size_t> build_width_grid(std::size_t w, double r, std::size_t s) {
  if (w < 1) fail(ErrorKind::config, "base width must be >= 1");
  if (!(r >= 1.0) || !std::isfinite(r)) fail(ErrorKind::config, "augmentation factor r must be >= 1");
  if (s < 1) fail(ErrorKind::config, "diversity factor s must be >= 1");
  std::vector<std::size_t> row;
  row.reserve(s + 1);
  for (std::size_t k = 0; k <= s; ++k) {
    const double g = k == s ? r * double(w) : double(w) + double(k) * (r - 1.0) * double(w) / double(s);
    const auto v = std::size_t(std::llround(g));
    if (row.empty() || row.back() != v) row.push_back(v);
  }
  return row;
}

inline WidthGrid build_grid(const ArchSpec& arch, const AugmentOptions& aug) {
  WidthGrid grid;
  for (const auto& l : arch.layers) {
    grid.rows.push_back(l.augmentable ? build_width_grid(l.base_aug_width(), aug.ratio, aug.diversity)
                                      : std::vector<std::size_t>{l.base_aug_width()});
  }
  return grid;
}

inline WidthConfig base_config(const WidthGrid& grid) {
  WidthConfig c;
  for (const auto& row : grid.rows) c.widths.push_back(row.front());
  return c;
}

inline WidthConfig max_config(const WidthGrid& grid) {
  WidthConfig c;
  for (const auto& row : grid.rows) c.widths.push_back(row.back());
  return c;
}

inline void check_config(const WidthGrid& grid, const WidthConfig& config) {
  if (config.widths.size() != grid.rows.size()) {
    fail(ErrorKind::contract, "width config has " + std::to_string(config.widths.size()) + " entries for " +
                                  std::to_string(grid.rows.size()) + " layers");
  }
  for (std::size_t i = 0; i < grid.rows.size(); ++i) {
    const auto& row = grid.rows[i];
    if (std::find(row.begin(), row.end(), config.widths[i]) == row.end()) {
      fail(ErrorKind::contract, "width " + std::to_string(config.widths[i]) + " is not in the grid of layer " +
                                    std::to_string(i));
    }
  }
}

/// Draws one augmented config: each augmentable layer independently and
/// uniformly from its grid entries above the base width (or from all entries
/// when `allow_base` is set).
inline WidthConfig sample_aug_config(const WidthGrid& grid, Rng& rng, bool allow_base = false) {
  const bool any = std::any_of(grid.rows.begin(), grid.rows.end(), [](const auto& row) { return row.size() > 1; });
  if (!any) fail(ErrorKind::config, "width grid has nothing to augment; use an augmentation factor r > 1");
  WidthConfig c;
  for (const auto& row : grid.rows) {
    if (row.size() == 1) {
      c.widths.push_back(row.front());
      continue;
    }
    const std::size_t first = allow_base ? 0 : 1;
    c.widths.push_back(row[first + rng.index(row.size() - first)]);
  }
  return c;
}

/// Named parameter tensors of one model, stored at maximum width.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t size() const noexcept { return tensors.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

namespace detail {

/// Feature width seen by layer i's input for a given per-layer width vector.
struct LayerIo {
  std::size_t in = 0;      // input channels/features
  std::size_t out = 0;     // output channels/features (external)
  std::size_t inner = 0;   // bottleneck inner width
  bool pool_before = false;  // global average pool of a conv stack precedes this layer
};

inline std::vector<LayerIo> layer_io(const ArchSpec& arch, std::span<const std::size_t> widths) {
  std::vector<LayerIo> io;
  std::size_t in = arch.input[0];
  bool spatial = arch.input.size() == 3;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    LayerIo e;
    e.in = in;
    e.pool_before = spatial && l.kind != LayerKind::conv;
    if (l.kind == LayerKind::bottleneck) {
      e.inner = widths[i];
      e.out = l.width;
    } else {
      e.out = widths[i];
    }
    if (l.kind != LayerKind::conv) spatial = false;
    in = e.out;
    io.push_back(e);
  }
  return io;
}

inline std::size_t head_in(const ArchSpec& arch, std::span<const std::size_t> widths) {
  if (arch.layers.empty()) return arch.input[0];
  return layer_io(arch, widths).back().out;
}

inline bool head_pools(const ArchSpec& arch) {
  if (arch.input.size() != 3) return false;
  return arch.layers.empty() || arch.layers.back().kind == LayerKind::conv;
}

}  // namespace detail

/// Per-parameter leading extents used by the sub-model at `widths`, in the
/// same order as the parameter store.
inline std::vector<Shape> param_shapes(const ArchSpec& arch, std::span<const std::size_t> widths) {
  std::vector<Shape> shapes;
  const auto io = detail::layer_io(arch, widths);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const auto& e = io[i];
    switch (l.kind) {
      case LayerKind::dense:
        shapes.push_back({e.out, e.in});
        shapes.push_back({e.out});
        break;
      case LayerKind::conv:
        shapes.push_back({e.out, e.in, l.kernel, l.kernel});
        shapes.push_back({e.out});
        break;
      case LayerKind::bottleneck:
        shapes.push_back({e.inner, e.in});
        shapes.push_back({e.inner});
        shapes.push_back({e.out, e.inner});
        shapes.push_back({e.out});
        break;
    }
  }
  const std::size_t hin = detail::head_in(arch, widths);
  shapes.push_back({arch.classes, hin});
  shapes.push_back({arch.classes});
  return shapes;
}

inline std::vector<std::string> param_names(const ArchSpec& arch) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    if (arch.layers[i].kind == LayerKind::bottleneck) {
      for (const char* n : {"expand.weight", "expand.bias", "project.weight", "project.bias"}) names.push_back(p + n);
    } else {
      names.push_back(p + "weight");
      names.push_back(p + "bias");
    }
  }
  names.push_back("head.weight");
  names.push_back("head.bias");
  return names;
}

/// Number of parameters of the sub-model at `config`.
inline std::size_t param_count(const ArchSpec& arch, const WidthConfig& config) {
  validate(arch);
  if (config.widths.size() != arch.layers.size()) fail(ErrorKind::contract, "config/arch layer count mismatch");
  std::size_t n = 0;
  for (const auto& s : param_shapes(arch, config.widths)) n += shape_numel(s);
  return n;
}

/// The single parameter store of the largest augmented model plus its grid.
struct Supernet {
  ArchSpec arch;
  AugmentOptions aug;
  WidthGrid grid;
  ParamSet params;

  WidthConfig base() const { return base_config(grid); }
  WidthConfig max() const { return max_config(grid); }
  std::vector<Shape> slices(const WidthConfig& c) const { return param_shapes(arch, c.widths); }
};

struct InitOptions {
  std::uint64_t seed = 0;
  InitFan fan = InitFan::max;
};

/// Allocates every tensor at maximum width. Weights are He-uniform (head:
/// LeCun-uniform) with fan-in taken from the maximum or base config; biases
/// start at zero.
inline Supernet build_supernet(const ArchSpec& arch, const AugmentOptions& aug, const InitOptions& init = {}) {
  validate(arch);
  Supernet net{arch, aug, build_grid(arch, aug), {}};
  const auto full = param_shapes(arch, net.max().widths);
  const auto fan_shapes = param_shapes(arch, init.fan == InitFan::max ? net.max().widths : net.base().widths);
  net.params.names = param_names(arch);
  Rng rng(init.seed);
  for (std::size_t p = 0; p < full.size(); ++p) {
    Tensor t(full[p]);
    if (full[p].size() > 1) {
      const auto& fs = fan_shapes[p];
      const std::size_t fan_in = shape_numel(fs) / fs[0];
      const bool head = p + 2 == full.size();
      const double bound = std::sqrt((head ? 3.0 : 6.0) / double(fan_in));
      for (auto& v : t.data()) v = float(rng.uniform(-bound, bound));
    }
    net.params.tensors.push_back(std::move(t));
  }
  return net;
}

/// Called on each hidden activation during a forward pass (e.g. dropout).
using ActivationHook = std::function<Var(const Var&)>;

/// A recorded forward pass at one width config.
struct ForwardPass {
  std::vector<Var> params;    // leading-slice leaves, one per stored tensor
  std::vector<Shape> slices;  // their extents
  Var logits;
};

/// Records a forward pass of `net` at `config` onto `tape`. Each parameter
/// enters the tape as a copy of its leading slice.
inline ForwardPass record_forward(Tape& tape, const Supernet& net, const WidthConfig& config, const Tensor& x,
                                  bool requires_grad, const ActivationHook& hook = {}) {
  check_config(net.grid, config);
  const ArchSpec& arch = net.arch;
  Shape expect{0};
  expect.insert(expect.end(), arch.input.begin(), arch.input.end());
  if (x.rank() != expect.size() || !std::equal(expect.begin() + 1, expect.end(), x.shape().begin() + 1)) {
    fail(ErrorKind::dimension, "input " + shape_str(x.shape()) + " does not match architecture input " +
                                   shape_str(arch.input));
  }
  ForwardPass pass;
  pass.slices = net.slices(config);
  for (std::size_t p = 0; p < pass.slices.size(); ++p) {
    pass.params.push_back(tape.leaf(leading_slice(net.params.tensors[p], pass.slices[p]), requires_grad));
  }
  const auto io = detail::layer_io(arch, config.widths);
  auto activate = [&](Var v) { return hook ? hook(relu(v)) : relu(v); };
  Var h = tape.leaf(x);
  std::size_t p = 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    if (io[i].pool_before) h = global_avg_pool(h);
    switch (l.kind) {
      case LayerKind::dense:
        h = activate(add_bias(linear(h, pass.params[p]), pass.params[p + 1]));
        p += 2;
        break;
      case LayerKind::conv:
        h = activate(add_bias(conv2d(h, pass.params[p], l.stride, l.pad), pass.params[p + 1]));
        p += 2;
        break;
      case LayerKind::bottleneck: {
        Var inner = activate(add_bias(linear(h, pass.params[p]), pass.params[p + 1]));
        Var out = add_bias(linear(inner, pass.params[p + 2]), pass.params[p + 3]);
        h = io[i].in == io[i].out ? add(out, h) : out;
        p += 4;
        break;
      }
    }
  }
  if (detail::head_pools(arch)) h = global_avg_pool(h);
  pass.logits = add_bias(linear(h, pass.params[p]), pass.params[p + 1]);
  return pass;
}

/// Logits of the sub-model at `config` for a batch x[N x input...].
inline Tensor forward_at(const Supernet& net, const WidthConfig& config, const Tensor& x) {
  Tape tape;
  return record_forward(tape, net, config, x, false).logits.value();
}

/// Standalone base model: the leading base-width slices, as a supernet with r = 1.
inline Supernet extract_base(const Supernet& net) {
  Supernet base{net.arch, AugmentOptions{1.0, 1}, build_grid(net.arch, AugmentOptions{1.0, 1}), {}};
  base.params.names = net.params.names;
  const auto shapes = net.slices(net.base());
  for (std::size_t p = 0; p < shapes.size(); ++p) {
    base.params.tensors.push_back(leading_slice(net.params.tensors[p], shapes[p]));
  }
  return base;
}

}  // namespace netaug
