#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "NAUG"                       4 ASCII bytes
//   version                      u32 (= 1)
//   flags                        u32, bit 0 set for an extracted base model
//   json length, json bytes      u32 + UTF-8 canonical JSON {"arch", "r", "s"}
//   tensor count                 u32
//   per tensor:
//     name length, name          u32 + UTF-8
//     rank, dims                 u32 + u32 per dim
//     payload                    f32 per element, row-major
//
// Supernet and base checkpoints share the layout; the flag tells them apart.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "netaug/arch.hpp"
#include "netaug/error.hpp"
#include "netaug/supernet.hpp"

namespace netaug {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kFlagBaseModel = 1;

enum class CheckpointKind { supernet, base };

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::supernet;
  Supernet net;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > remaining()) {
      fail(ErrorKind::parse, std::string("checkpoint truncated reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline nlohmann::json checkpoint_meta(const Supernet& net) {
  return nlohmann::json{{"arch", to_json(net.arch)}, {"r", net.aug.ratio}, {"s", net.aug.diversity}};
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Supernet& net, CheckpointKind kind) {
  detail::ByteWriter w;
  w.raw("NAUG");
  w.u32(kCheckpointVersion);
  w.u32(kind == CheckpointKind::base ? kFlagBaseModel : 0);
  const std::string meta = detail::checkpoint_meta(net).dump();
  w.u32(std::uint32_t(meta.size()));
  w.raw(meta);
  w.u32(std::uint32_t(net.params.size()));
  for (std::size_t p = 0; p < net.params.size(); ++p) {
    const auto& name = net.params.names[p];
    const auto& t = net.params.tensors[p];
    w.u32(std::uint32_t(name.size()));
    w.raw(name);
    w.u32(std::uint32_t(t.rank()));
    for (auto d : t.shape()) w.u32(std::uint32_t(d));
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4, "magic") != "NAUG") fail(ErrorKind::parse, "bad checkpoint magic at byte 0");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    fail(ErrorKind::parse, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto flags = r.u32("flags");
  if (flags & ~kFlagBaseModel) fail(ErrorKind::parse, "unknown checkpoint flags " + std::to_string(flags));
  const auto meta_len = r.u32("metadata length");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.raw(meta_len, "metadata"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("checkpoint metadata is not valid json: ") + e.what());
  }
  Checkpoint ck;
  ck.kind = (flags & kFlagBaseModel) ? CheckpointKind::base : CheckpointKind::supernet;
  AugmentOptions aug;
  try {
    aug.ratio = meta.at("r").get<double>();
    aug.diversity = meta.at("s").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("checkpoint metadata: ") + e.what());
  }
  ck.net = Supernet{arch_from_json(meta.at("arch")), aug, {}, {}};
  ck.net.grid = build_grid(ck.net.arch, aug);
  const auto expected = ck.net.slices(ck.net.max());
  const auto names = param_names(ck.net.arch);

  const auto count = r.u32("tensor count");
  if (count != expected.size()) {
    fail(ErrorKind::parse, "checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                               std::to_string(expected.size()));
  }
  for (std::size_t p = 0; p < count; ++p) {
    const auto name_len = r.u32("tensor name length");
    std::string name = r.raw(name_len, "tensor name");
    if (name != names[p]) fail(ErrorKind::parse, "unexpected tensor '" + name + "', wanted '" + names[p] + "'");
    const auto rank = r.u32("tensor rank");
    if (rank != expected[p].size()) fail(ErrorKind::parse, "tensor '" + name + "' has wrong rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("tensor dim"));
    if (shape != expected[p]) {
      fail(ErrorKind::parse, "tensor '" + name + "' shape " + shape_str(shape) + ", expected " +
                                 shape_str(expected[p]));
    }
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) fail(ErrorKind::parse, "checkpoint truncated in payload of '" + name + "'");
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32("payload");
    ck.net.params.names.push_back(std::move(name));
    ck.net.params.tensors.emplace_back(std::move(shape), std::move(data));
  }
  if (r.remaining() != 0) fail(ErrorKind::parse, "trailing bytes after checkpoint at byte " + std::to_string(r.offset()));
  return ck;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline void save_checkpoint(const std::string& path, const Supernet& net, CheckpointKind kind) {
  write_file_bytes(path, encode_checkpoint(net, kind));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace netaug
