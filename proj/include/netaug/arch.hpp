#pragma once

// Declarative tiny-model architectures.
//
// An ArchSpec is an input shape, an ordered list of hidden layers and a class
// count. A dense classifier head (never augmented) is always appended. Conv
// layers operate on [C x H x W] inputs; the first dense or bottleneck layer
// after a conv stack consumes a global average pool of its output.

#include <cstddef>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "netaug/error.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

enum class LayerKind { dense, conv, bottleneck };

inline const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv: return "conv";
    case LayerKind::bottleneck: return "bottleneck";
  }
  return "?";
}

inline LayerKind layer_kind_from(std::string_view s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv") return LayerKind::conv;
  if (s == "bottleneck") return LayerKind::bottleneck;
  fail(ErrorKind::config, "unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  /// Output units (dense), output channels (conv) or external width (bottleneck).
  std::size_t width = 0;
  /// Bottleneck inner width; the augmented dimension of a bottleneck block.
  std::size_t expand = 0;
  bool augmentable = true;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  /// Width that augmentation scales for this layer.
  std::size_t base_aug_width() const { return kind == LayerKind::bottleneck ? expand : width; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchSpec {
  /// Per-sample input shape: [features] or [channels, height, width].
  Shape input;
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Throws a config error if the architecture cannot be built.
inline void validate(const ArchSpec& arch) {
  if (arch.input.size() != 1 && arch.input.size() != 3) {
    fail(ErrorKind::config, "input shape must be [features] or [C,H,W], got " + shape_str(arch.input));
  }
  for (auto d : arch.input)
    if (d == 0) fail(ErrorKind::config, "input shape has a zero dimension");
  if (arch.classes < 2) fail(ErrorKind::config, "need at least 2 classes");
  bool spatial = arch.input.size() == 3;
  std::size_t h = spatial ? arch.input[1] : 0, w = spatial ? arch.input[2] : 0;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
    if (l.width == 0) fail(ErrorKind::config, where + ": width must be positive");
    if (l.kind == LayerKind::bottleneck && l.expand == 0) {
      fail(ErrorKind::config, where + ": bottleneck needs a positive inner width");
    }
    if (l.kind == LayerKind::conv) {
      if (!spatial) fail(ErrorKind::config, where + ": conv layer after a flat feature vector");
      if (l.stride == 0 || l.kernel == 0) fail(ErrorKind::config, where + ": kernel and stride must be positive");
      if (l.kernel > h + 2 * l.pad || l.kernel > w + 2 * l.pad) {
        fail(ErrorKind::config, where + ": kernel larger than padded input");
      }
      h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
      w = (w + 2 * l.pad - l.kernel) / l.stride + 1;
    } else {
      spatial = false;
    }
  }
}

inline nlohmann::json to_json(const ArchSpec& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : arch.layers) {
    nlohmann::json j{{"kind", to_string(l.kind)}, {"width", l.width}, {"augmentable", l.augmentable}};
    if (l.kind == LayerKind::bottleneck) j["expand"] = l.expand;
    if (l.kind == LayerKind::conv) {
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["pad"] = l.pad;
    }
    layers.push_back(std::move(j));
  }
  return nlohmann::json{{"input", arch.input}, {"classes", arch.classes}, {"layers", std::move(layers)}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
  try {
    ArchSpec arch;
    arch.input = j.at("input").get<Shape>();
    arch.classes = j.at("classes").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.kind = layer_kind_from(lj.at("kind").get<std::string>());
      l.width = lj.at("width").get<std::size_t>();
      l.augmentable = lj.value("augmentable", true);
      l.expand = lj.value("expand", std::size_t{0});
      l.kernel = lj.value("kernel", std::size_t{3});
      l.stride = lj.value("stride", std::size_t{1});
      l.pad = lj.value("pad", std::size_t{1});
      arch.layers.push_back(l);
    }
    validate(arch);
    return arch;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("malformed architecture json: ") + e.what());
  }
}

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::size_t parse_size(const std::string& s, const std::string& context) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size() || s[0] == '-') {
    fail(ErrorKind::config, "expected a non-negative integer in '" + context + "', got '" + s + "'");
  }
  return std::size_t(v);
}

}  // namespace detail

/// Parses a compact layer list:
///   dense:W            fully connected, W units
///   conv:W[:K[:S[:P]]] conv with W output channels, kernel K (3), stride S (1), pad P (K/2)
///   bottleneck:W:E     two-layer block with external width W and inner width E
/// A trailing ":fixed" marks a layer as not augmentable. Layers are comma separated.
inline std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> layers;
  if (text.empty()) return layers;
  for (const auto& token : detail::split(text, ',')) {
    auto parts = detail::split(token, ':');
    LayerSpec l;
    if (!parts.empty() && parts.back() == "fixed") {
      l.augmentable = false;
      parts.pop_back();
    }
    if (parts.size() < 2) fail(ErrorKind::config, "layer '" + token + "' needs at least kind:width");
    l.kind = layer_kind_from(parts[0]);
    l.width = detail::parse_size(parts[1], token);
    switch (l.kind) {
      case LayerKind::dense:
        if (parts.size() != 2) fail(ErrorKind::config, "dense layer takes one width: '" + token + "'");
        break;
      case LayerKind::bottleneck:
        if (parts.size() != 3) fail(ErrorKind::config, "bottleneck takes width and inner width: '" + token + "'");
        l.expand = detail::parse_size(parts[2], token);
        break;
      case LayerKind::conv:
        if (parts.size() > 5) fail(ErrorKind::config, "too many conv fields: '" + token + "'");
        if (parts.size() > 2) l.kernel = detail::parse_size(parts[2], token);
        if (parts.size() > 3) l.stride = detail::parse_size(parts[3], token);
        l.pad = parts.size() > 4 ? detail::parse_size(parts[4], token) : l.kernel / 2;
        break;
    }
    layers.push_back(l);
  }
  return layers;
}

inline std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (i) os << ',';
    os << to_string(l.kind) << ':' << l.width;
    if (l.kind == LayerKind::bottleneck) os << ':' << l.expand;
    if (l.kind == LayerKind::conv) os << ':' << l.kernel << ':' << l.stride << ':' << l.pad;
    if (!l.augmentable) os << ":fixed";
  }
  return os.str();
}

}  // namespace netaug
