#pragma once

// Dataset provisioning: IDX image/label files, CSV tables, synthetic spirals,
// and shuffled mini-batching.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <iterator>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "netaug/error.hpp"
#include "netaug/random.hpp"
#include "netaug/tensor.hpp"

namespace netaug {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Dataset {
  Tensor inputs;  // [N x sample shape...]
  std::vector<int> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

  /// Same samples with every input flattened to a feature vector.
  Dataset flattened() const {
    Dataset d = *this;
    d.inputs = inputs.reshaped({size(), inputs.numel() / size()});
    return d;
  }
};

inline void validate(const Dataset& d) {
  if (d.labels.empty()) fail(ErrorKind::config, "dataset is empty");
  if (d.inputs.rank() < 2 || d.inputs.dim(0) != d.labels.size()) {
    fail(ErrorKind::dimension, "dataset inputs " + shape_str(d.inputs.shape()) + " do not match " +
                                   std::to_string(d.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] < 0 || std::size_t(d.labels[i]) >= d.classes) {
      fail(ErrorKind::index, "label " + std::to_string(d.labels[i]) + " of sample " + std::to_string(i) +
                                 " outside [0, " + std::to_string(d.classes) + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

/// Unsigned-byte IDX container: big-endian magic 0x000008RR, RR dims as u32 BE, payload.
struct IdxArray {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

inline IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  auto be32 = [&](std::size_t off) {
    return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
           (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
  };
  if (bytes.size() < 4) fail(ErrorKind::parse, "truncated header at byte " + std::to_string(bytes.size()));
  if (bytes[0] != 0 || bytes[1] != 0) fail(ErrorKind::parse, "bad magic at byte 0: leading bytes must be zero");
  if (bytes[2] != 0x08) {
    fail(ErrorKind::parse, "bad magic at byte 2: only unsigned-byte (0x08) payloads are supported");
  }
  const std::size_t rank = bytes[3];
  if (rank == 0 || rank > 4) fail(ErrorKind::parse, "bad magic at byte 3: unsupported rank " + std::to_string(rank));
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header) fail(ErrorKind::parse, "truncated header at byte " + std::to_string(bytes.size()));
  IdxArray out;
  std::size_t total = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    const std::uint32_t v = be32(4 + 4 * d);
    if (v == 0) fail(ErrorKind::parse, "zero dimension at byte " + std::to_string(4 + 4 * d));
    if (total > (bytes.size() - header) / v) {
      fail(ErrorKind::parse, "dimension overflow at byte " + std::to_string(4 + 4 * d) +
                                 ": declared size exceeds payload of " + std::to_string(bytes.size() - header) +
                                 " bytes");
    }
    total *= v;
    out.dims.push_back(v);
  }
  if (bytes.size() - header != total) {
    fail(ErrorKind::parse, "payload length mismatch at byte " + std::to_string(header) + ": expected " +
                               std::to_string(total) + " bytes, found " + std::to_string(bytes.size() - header));
  }
  out.data.assign(bytes.begin() + std::ptrdiff_t(header), bytes.end());
  return out;
}

inline std::vector<std::uint8_t> encode_idx(const IdxArray& arr) {
  std::vector<std::uint8_t> out{0, 0, 0x08, std::uint8_t(arr.dims.size())};
  for (auto d : arr.dims)
    for (int s = 24; s >= 0; s -= 8) out.push_back(std::uint8_t(d >> s));
  out.insert(out.end(), arr.data.begin(), arr.data.end());
  return out;
}

/// Rank-3 image file -> [N x 1 x H x W] scaled to [0, 1].
inline Tensor idx_images(std::span<const std::uint8_t> bytes) {
  IdxArray a = parse_idx(bytes);
  if (a.dims.size() != 3) fail(ErrorKind::parse, "image file must have rank 3 (magic 0x00000803)");
  Tensor t({a.dims[0], 1, a.dims[1], a.dims[2]});
  for (std::size_t i = 0; i < a.data.size(); ++i) t[i] = float(a.data[i]) / 255.0f;
  return t;
}

/// Rank-1 label file; every label must be < classes.
inline std::vector<int> idx_labels(std::span<const std::uint8_t> bytes, std::size_t classes) {
  IdxArray a = parse_idx(bytes);
  if (a.dims.size() != 1) fail(ErrorKind::parse, "label file must have rank 1 (magic 0x00000801)");
  std::vector<int> labels;
  labels.reserve(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] >= classes) {
      fail(ErrorKind::index, "label " + std::to_string(a.data[i]) + " at byte " + std::to_string(8 + i) +
                                 " outside [0, " + std::to_string(classes) + ")");
    }
    labels.push_back(a.data[i]);
  }
  return labels;
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes,
                        Split split) {
  Dataset d;
  d.inputs = idx_images(read_bytes(images_path));
  d.labels = idx_labels(read_bytes(labels_path), classes);
  d.classes = classes;
  d.split = split;
  if (d.inputs.dim(0) != d.labels.size()) {
    fail(ErrorKind::parse, "image count " + std::to_string(d.inputs.dim(0)) + " differs from label count " +
                               std::to_string(d.labels.size()));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Synthetic spirals
// ---------------------------------------------------------------------------

struct SpiralOptions {
  std::size_t per_class = 300;
  std::size_t classes = 3;
  double noise = 0.25;  // stddev of the angular jitter, radians
  double sweep = 4.0;   // angle swept along each arm, radians
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline FeatureStats feature_stats(const Tensor& x) {
  const std::size_t n = x.dim(0), d = x.numel() / n;
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[i * d + j];
  for (auto& m : s.mean) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.stddev[j] += std::pow(x[i * d + j] - s.mean[j], 2);
  for (auto& v : s.stddev) v = std::sqrt(v / double(n));
  return s;
}

namespace detail {

// Arm k sweeps radius 0.2..1 while its angle advances by `sweep`; arms are
// rotated by 2*pi/K. Raw points are stored in double for standardization.
inline std::vector<double> spiral_points(const SpiralOptions& opt, Rng& rng, std::vector<int>& labels) {
  std::vector<double> xy;
  for (std::size_t k = 0; k < opt.classes; ++k) {
    for (std::size_t i = 0; i < opt.per_class; ++i) {
      const double t = rng.uniform();
      const double radius = 0.2 + 0.8 * t;
      const double theta = 2.0 * std::numbers::pi * double(k) / double(opt.classes) + opt.sweep * t +
                           (opt.noise > 0.0 ? rng.normal(0.0, opt.noise) : 0.0);
      xy.push_back(radius * std::cos(theta));
      xy.push_back(radius * std::sin(theta));
      labels.push_back(int(k));
    }
  }
  return xy;
}

inline Tensor standardize(const std::vector<double>& xy, std::size_t n, const std::vector<double>& mean,
                          const std::vector<double>& stddev) {
  Tensor t({n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 2; ++j) t[i * 2 + j] = float((xy[i * 2 + j] - mean[j]) / stddev[j]);
  return t;
}

inline std::pair<std::vector<double>, std::vector<double>> raw_stats(const std::vector<double>& xy) {
  const std::size_t n = xy.size() / 2;
  std::vector<double> mean(2, 0.0), sd(2, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 2; ++j) mean[j] += xy[i * 2 + j];
  for (auto& m : mean) m /= double(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 2; ++j) sd[j] += (xy[i * 2 + j] - mean[j]) * (xy[i * 2 + j] - mean[j]);
  for (auto& v : sd) v = std::sqrt(v / double(n));
  return {mean, sd};
}

inline void check_spiral_options(const SpiralOptions& opt) {
  if (opt.per_class == 0) fail(ErrorKind::config, "spirals need at least one point per class");
  if (opt.classes < 2) fail(ErrorKind::config, "spirals need at least 2 classes");
  if (!(opt.noise >= 0.0)) fail(ErrorKind::config, "spiral noise must be >= 0");
}

}  // namespace detail

/// K interleaved 2-D spiral arms with Gaussian angular noise, standardized to
/// zero mean and unit variance per feature. Deterministic in `seed`.
inline Dataset gen_spirals(const SpiralOptions& opt, std::uint64_t seed) {
  detail::check_spiral_options(opt);
  Rng rng(seed);
  Dataset d;
  const auto xy = detail::spiral_points(opt, rng, d.labels);
  const auto [mean, sd] = detail::raw_stats(xy);
  d.inputs = detail::standardize(xy, d.labels.size(), mean, sd);
  d.classes = opt.classes;
  return d;
}

/// Train split of `opt.per_class` points per class and a test split of
/// `test_per_class`, drawn from independent streams of `seed`; both are
/// standardized with the train split's statistics.
inline std::pair<Dataset, Dataset> gen_spirals_split(const SpiralOptions& opt, std::size_t test_per_class,
                                                     std::uint64_t seed) {
  detail::check_spiral_options(opt);
  Rng train_rng = Rng::derived(seed, 0);
  Rng test_rng = Rng::derived(seed, 1);
  Dataset train, test;
  SpiralOptions test_opt = opt;
  test_opt.per_class = test_per_class;
  const auto xy_train = detail::spiral_points(opt, train_rng, train.labels);
  const auto xy_test = detail::spiral_points(test_opt, test_rng, test.labels);
  const auto [mean, sd] = detail::raw_stats(xy_train);
  train.inputs = detail::standardize(xy_train, train.labels.size(), mean, sd);
  test.inputs = detail::standardize(xy_test, test.labels.size(), mean, sd);
  train.classes = test.classes = opt.classes;
  test.split = Split::test;
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace detail

/// Raw CSV contents: numeric features plus the label column as strings.
struct CsvTable {
  Tensor features;
  std::vector<std::string> labels;
};

/// Header row required. Every column other than `label_column` is a numeric feature.
inline CsvTable read_csv_table(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::parse, path + ": missing header row");
  const auto header = detail::split_csv_line(line);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) fail(ErrorKind::parse, path + ": missing label column '" + label_column + "'");
  const std::size_t label_col = std::size_t(it - header.begin());
  const std::size_t features = header.size() - 1;
  if (features == 0) fail(ErrorKind::parse, path + ": no feature columns");

  std::vector<float> values;
  std::vector<std::string> raw_labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      fail(ErrorKind::parse, path + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                 " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) {
        raw_labels.push_back(cells[c]);
        continue;
      }
      std::size_t pos = 0;
      float v = 0.0f;
      try {
        v = std::stof(cells[c], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (cells[c].empty() || pos != cells[c].size() || !std::isfinite(v)) {
        fail(ErrorKind::parse, path + ": non-numeric cell '" + cells[c] + "' at row " + std::to_string(row) +
                                   ", column " + std::to_string(c + 1));
      }
      values.push_back(v);
    }
  }
  if (raw_labels.empty()) fail(ErrorKind::parse, path + ": no data rows");
  return {Tensor({raw_labels.size(), features}, std::move(values)), std::move(raw_labels)};
}

/// Contiguous class ids for label strings, assigned in lexicographic order.
inline std::map<std::string, int> label_vocabulary(std::initializer_list<const CsvTable*> tables) {
  std::map<std::string, int> ids;
  for (const auto* t : tables)
    for (const auto& l : t->labels) ids.emplace(l, 0);
  int next = 0;
  for (auto& entry : ids) entry.second = next++;
  return ids;
}

inline Dataset to_dataset(CsvTable table, const std::map<std::string, int>& ids, Split split) {
  Dataset d;
  d.inputs = std::move(table.features);
  for (const auto& l : table.labels) d.labels.push_back(ids.at(l));
  d.classes = ids.size();
  d.split = split;
  return d;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column, Split split = Split::train) {
  CsvTable t = read_csv_table(path, label_column);
  const auto ids = label_vocabulary({&t});
  return to_dataset(std::move(t), ids, split);
}

/// Train and test files sharing one label vocabulary.
inline std::pair<Dataset, Dataset> load_csv_splits(const std::string& train_path, const std::string& test_path,
                                                   const std::string& label_column) {
  CsvTable train = read_csv_table(train_path, label_column);
  CsvTable test = read_csv_table(test_path, label_column);
  if (train.features.dim(1) != test.features.dim(1)) {
    fail(ErrorKind::parse, "train and test CSV files have different feature counts");
  }
  const auto ids = label_vocabulary({&train, &test});
  return {to_dataset(std::move(train), ids, Split::train), to_dataset(std::move(test), ids, Split::test)};
}

/// Writes features f0..f{D-1} and a `label` column holding zero-padded class
/// ids, so that reloading assigns the same ids.
inline void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  const std::size_t n = d.size(), dim = d.inputs.numel() / n;
  const std::size_t digits = std::to_string(d.classes ? d.classes - 1 : 0).size();
  for (std::size_t j = 0; j < dim; ++j) out << 'f' << j << ',';
  out << "label\n";
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) out << d.inputs[i * dim + j] << ',';
    out << std::setw(int(digits)) << std::setfill('0') << d.labels[i] << std::setfill(' ') << '\n';
  }
  if (!out) fail(ErrorKind::io, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

inline Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  Shape shape = d.inputs.shape();
  shape[0] = indices.size();
  const std::size_t stride = d.inputs.numel() / d.size();
  Batch b{Tensor(shape), {}, {indices.begin(), indices.end()}};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = d.inputs.data().subspan(indices[i] * stride, stride);
    std::copy(src.begin(), src.end(), b.inputs.data().begin() + std::ptrdiff_t(i * stride));
    b.labels.push_back(d.labels[indices[i]]);
  }
  return b;
}

/// One epoch of mini-batches over a permutation drawn from `epoch_seed`.
class BatchIterator {
 public:
  BatchIterator(const Dataset& d, std::size_t batch_size, std::uint64_t epoch_seed, bool drop_last = false)
      : dataset_(&d), batch_size_(batch_size), drop_last_(drop_last) {
    if (batch_size == 0) fail(ErrorKind::config, "batch size must be positive");
    Rng rng(epoch_seed);
    order_ = rng.permutation(d.size());
  }

  std::size_t count() const {
    const std::size_t n = order_.size();
    return drop_last_ ? n / batch_size_ : (n + batch_size_ - 1) / batch_size_;
  }

  Batch operator[](std::size_t i) const {
    const std::size_t lo = i * batch_size_;
    const std::size_t hi = std::min(order_.size(), lo + batch_size_);
    return make_batch(*dataset_, std::span(order_).subspan(lo, hi - lo));
  }

  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* dataset_;
  std::size_t batch_size_;
  bool drop_last_;
  std::vector<std::size_t> order_;
};

inline std::vector<Batch> batches(const Dataset& d, std::size_t batch_size, std::uint64_t epoch_seed,
                                  bool drop_last = false) {
  BatchIterator it(d, batch_size, epoch_seed, drop_last);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < it.count(); ++i) out.push_back(it[i]);
  return out;
}

}  // namespace netaug
