#pragma once

// Experiment commands behind the `netaug` CLI. Each command writes human
// output to `out`, diagnostics to `err`, and returns a process exit code:
// 0 success, 2 config error, 3 runtime/numeric error, 4 I/O error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "netaug/checkpoint.hpp"
#include "netaug/error.hpp"
#include "netaug/manifest.hpp"
#include "netaug/supernet.hpp"
#include "netaug/trainer.hpp"

namespace netaug {

inline constexpr const char* kMetricsHeader =
    "run_id,mode,seed,epoch,train_loss,train_acc,eval_loss,eval_acc,lr,step_ms_compute,step_ms_total";

inline constexpr const char* kCompareHeader =
    "mode,runs,eval_acc_mean,eval_acc_std,train_loss_mean,train_loss_std,delta_eval_acc,delta_train_loss,"
    "sign_p_train_loss,sign_p_eval_acc,compute_ratio,total_ratio";

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "netaug: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "netaug: io error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

inline std::string format_metrics_row(const MetricsRecord& r) {
  using detail::num;
  std::ostringstream os;
  os << r.run_id << ',' << to_string(r.mode) << ',' << r.seed << ',' << r.epoch << ',' << num(r.train_loss) << ','
     << num(r.train_acc) << ',' << num(r.eval_loss) << ',' << num(r.eval_acc) << ',' << num(r.lr) << ','
     << num(r.step_ms_compute) << ',' << num(r.step_ms_total);
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path + "'");
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
  if (!out) fail(ErrorKind::io, "write failed for '" + path + "'");
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kMetricsHeader) {
    fail(ErrorKind::parse, path + ": missing or unexpected metrics header");
  }
  std::vector<MetricsRecord> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 11) fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + " needs 11 fields");
    auto number = [&](std::size_t i) {
      std::size_t pos = 0;
      double v = 0.0;
      try {
        v = std::stod(cells[i], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != cells[i].size()) {
        fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + ", field " + std::to_string(i + 1) +
                                   " is not a number");
      }
      return v;
    };
    MetricsRecord r;
    r.run_id = cells[0];
    try {
      r.mode = train_mode_from(cells[1]);
    } catch (const Error&) {
      fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + ": unknown mode '" + cells[1] + "'");
    }
    auto integer = [&](std::size_t i) -> std::uint64_t {
      const std::string& c = cells[i];
      if (c.empty() || c.find_first_not_of("0123456789") != std::string::npos || c.size() > 19) {
        fail(ErrorKind::parse, path + ": line " + std::to_string(lineno) + ", field " + std::to_string(i + 1) +
                                   " is not an unsigned integer");
      }
      return std::stoull(c);
    };
    r.seed = integer(2);
    r.epoch = integer(3);
    r.train_loss = number(4);
    r.train_acc = number(5);
    r.eval_loss = number(6);
    r.eval_acc = number(7);
    r.lr = number(8);
    r.step_ms_compute = number(9);
    r.step_ms_total = number(10);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline std::string run_id_for(const RunManifest& m, std::uint64_t seed) {
  return m.run_name + "-" + to_string(m.config.mode) + "-s" + std::to_string(seed);
}

struct RunPaths {
  std::string metrics;
  std::string supernet;
  std::string base;
};

inline RunPaths run_paths(const RunManifest& m, std::uint64_t seed) {
  const std::filesystem::path dir(m.out_dir);
  const std::string id = run_id_for(m, seed);
  return {(dir / (id + ".csv")).string(), (dir / (id + ".supernet.naug")).string(),
          (dir / (id + ".base.naug")).string()};
}

/// Trains one run per seed. Everything is validated (config, data, data/arch
/// compatibility) before the output directory is touched.
inline int cmd_train(const RunManifest& m, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    auto [train_data, test_data] = load_datasets(m.data);
    const ArchSpec arch = arch_for(m, train_data);
    check_compatible(arch, train_data);
    check_compatible(arch, test_data);
    m.config.validate();
    if (m.config.mode == TrainMode::netaug) build_grid(arch, {m.config.r, m.config.s});

    std::filesystem::create_directories(m.out_dir);
    for (std::uint64_t seed : m.seeds) {
      TrainRunConfig cfg = m.config;
      cfg.seed = seed;
      const std::string id = run_id_for(m, seed);
      const TrainResult res = train(arch, cfg, train_data, test_data, id);
      const RunPaths paths = run_paths(m, seed);
      write_metrics_csv(paths.metrics, res.history);
      save_checkpoint(paths.supernet, res.net, CheckpointKind::supernet);
      save_checkpoint(paths.base, res.base, CheckpointKind::base);
      out << id;
      if (!res.history.empty()) {
        const auto& last = res.history.back();
        out << "  train_loss=" << detail::num(last.train_loss) << " eval_acc=" << detail::num(last.eval_acc)
            << " step_ms=" << detail::num(last.step_ms_compute);
      }
      out << "  -> " << paths.metrics << '\n';
    }
    return 0;
  });
}

/// Parses a manifest map (plus NETAUG_SEED override) and trains; parse
/// failures exit with 2 before anything is written.
inline int cmd_train(const ManifestMap& map, const std::optional<std::string>& env_seed, std::ostream& out,
                     std::ostream& err) {
  RunManifest m;
  const int rc = detail::guarded(err, [&] {
    m = manifest_from_map(map, env_seed);
    return 0;
  });
  if (rc != 0) return rc;
  return cmd_train(m, out, err);
}

// ---------------------------------------------------------------------------
// eval / export / grid
// ---------------------------------------------------------------------------

/// Base-model loss (no label smoothing) and accuracy of a checkpoint on the
/// test split described by `data`.
inline int cmd_eval(const std::string& checkpoint, const DataSpec& data, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Dataset test = load_datasets(data).second;
    check_compatible(ck.net.arch, test);
    const EvalResult r = evaluate(ck.net, ck.net.base(), test);
    out << "accuracy=" << detail::num(r.accuracy) << " loss=" << detail::num(r.loss) << '\n';
    out << "{\"accuracy\":" << detail::num(r.accuracy) << ",\"loss\":" << detail::num(r.loss) << "}\n";
    return 0;
  });
}

struct ExportSummary {
  std::size_t base_params = 0;
  std::size_t supernet_params = 0;
  double ratio = 1.0;
};

inline ExportSummary export_summary(const Supernet& net) {
  ExportSummary s;
  s.base_params = param_count(net.arch, net.base());
  s.supernet_params = param_count(net.arch, net.max());
  s.ratio = double(s.supernet_params) / double(s.base_params);
  return s;
}

inline int cmd_export(const std::string& supernet_path, const std::string& out_path, std::ostream& out,
                      std::ostream& err) {
  return detail::guarded(err, [&] {
    const Checkpoint ck = load_checkpoint(supernet_path);
    const ExportSummary s = export_summary(ck.net);
    save_checkpoint(out_path, extract_base(ck.net), CheckpointKind::base);
    out << "base_params=" << s.base_params << " supernet_params=" << s.supernet_params
        << " ratio=" << detail::num(s.ratio) << '\n';
    return 0;
  });
}

inline int cmd_grid(const std::string& layers, double r, std::size_t s, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto specs = parse_layers(layers);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const auto& l = specs[i];
      const auto row = l.augmentable ? build_width_grid(l.base_aug_width(), r, s)
                                     : std::vector<std::size_t>{l.base_aug_width()};
      out << "layer" << i << ' ' << to_string(l.kind) << (l.kind == LayerKind::bottleneck ? " inner=" : " w=")
          << l.base_aug_width() << ":";
      for (auto w : row) out << ' ' << w;
      out << '\n';
    }
    return 0;
  });
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

/// Two-sided exact sign test: ties dropped, p = min(1, 2 * P[X <= min(wins, losses)]).
inline double sign_test_p(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1.0;
  const std::size_t k = std::min(wins, losses);
  double tail = 0.0;
  double binom = 1.0;  // C(n, i)
  for (std::size_t i = 0; i <= k; ++i) {
    if (i > 0) binom = binom * double(n - i + 1) / double(i);
    tail += binom;
  }
  return std::min(1.0, 2.0 * tail / std::pow(2.0, double(n)));
}

struct ModeSummary {
  TrainMode mode = TrainMode::baseline;
  std::size_t runs = 0;
  double eval_acc_mean = 0.0, eval_acc_std = 0.0;
  double train_loss_mean = 0.0, train_loss_std = 0.0;
  double delta_eval_acc = 0.0, delta_train_loss = 0.0;
  double sign_p_train_loss = 1.0, sign_p_eval_acc = 1.0;
  double compute_ratio = 1.0, total_ratio = 1.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= double(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0};
}

}  // namespace detail

/// Per-mode summary of final-epoch metrics, each compared with the baseline
/// mode. Sign tests pair runs by seed; mean step times give overhead ratios.
inline std::vector<ModeSummary> compare_runs(const std::vector<MetricsRecord>& rows) {
  // Final epoch of every run.
  std::map<std::string, MetricsRecord> finals;
  std::map<std::string, std::pair<double, std::size_t>> compute_ms, total_ms;
  for (const auto& r : rows) {
    auto it = finals.find(r.run_id);
    if (it == finals.end() || r.epoch > it->second.epoch) finals[r.run_id] = r;
  }
  std::map<TrainMode, std::map<std::uint64_t, MetricsRecord>> by_mode;
  std::map<TrainMode, std::pair<double, double>> step_time;  // summed compute, total
  std::map<TrainMode, std::size_t> step_rows;
  for (const auto& r : rows) {
    step_time[r.mode].first += r.step_ms_compute;
    step_time[r.mode].second += r.step_ms_total;
    ++step_rows[r.mode];
  }
  for (const auto& [id, r] : finals) {
    auto& seeds = by_mode[r.mode];
    if (seeds.count(r.seed)) fail(ErrorKind::config, "two runs of mode " + std::string(to_string(r.mode)) +
                                                         " share seed " + std::to_string(r.seed));
    seeds[r.seed] = r;
  }
  if (!by_mode.count(TrainMode::baseline)) fail(ErrorKind::config, "no baseline runs found");
  const auto& baseline = by_mode.at(TrainMode::baseline);
  const double base_compute = step_time[TrainMode::baseline].first / double(step_rows[TrainMode::baseline]);
  const double base_total = step_time[TrainMode::baseline].second / double(step_rows[TrainMode::baseline]);

  std::vector<ModeSummary> out;
  ModeSummary base_summary;
  for (const auto& [mode, seeds] : by_mode) {
    ModeSummary s;
    s.mode = mode;
    s.runs = seeds.size();
    std::vector<double> acc, loss;
    std::size_t loss_wins = 0, loss_losses = 0, acc_wins = 0, acc_losses = 0;
    for (const auto& [seed, r] : seeds) {
      acc.push_back(r.eval_acc);
      loss.push_back(r.train_loss);
      if (auto b = baseline.find(seed); b != baseline.end()) {
        if (r.train_loss < b->second.train_loss) ++loss_wins;
        if (r.train_loss > b->second.train_loss) ++loss_losses;
        if (r.eval_acc > b->second.eval_acc) ++acc_wins;
        if (r.eval_acc < b->second.eval_acc) ++acc_losses;
      }
    }
    std::tie(s.eval_acc_mean, s.eval_acc_std) = detail::mean_std(acc);
    std::tie(s.train_loss_mean, s.train_loss_std) = detail::mean_std(loss);
    s.sign_p_train_loss = sign_test_p(loss_wins, loss_losses);
    s.sign_p_eval_acc = sign_test_p(acc_wins, acc_losses);
    const double mc = step_time[mode].first / double(step_rows[mode]);
    const double mt = step_time[mode].second / double(step_rows[mode]);
    s.compute_ratio = base_compute > 0.0 ? mc / base_compute : 1.0;
    s.total_ratio = base_total > 0.0 ? mt / base_total : 1.0;
    out.push_back(s);
  }
  const auto base_it = std::find_if(out.begin(), out.end(), [](const auto& s) { return s.mode == TrainMode::baseline; });
  for (auto& s : out) {
    s.delta_eval_acc = s.eval_acc_mean - base_it->eval_acc_mean;
    s.delta_train_loss = s.train_loss_mean - base_it->train_loss_mean;
  }
  return out;
}

inline std::string format_compare_csv(const std::vector<ModeSummary>& rows) {
  using detail::num;
  std::ostringstream os;
  os << kCompareHeader << '\n';
  for (const auto& s : rows) {
    os << to_string(s.mode) << ',' << s.runs << ',' << num(s.eval_acc_mean) << ',' << num(s.eval_acc_std) << ','
       << num(s.train_loss_mean) << ',' << num(s.train_loss_std) << ',' << num(s.delta_eval_acc) << ','
       << num(s.delta_train_loss) << ',' << num(s.sign_p_train_loss) << ',' << num(s.sign_p_eval_acc) << ','
       << num(s.compute_ratio) << ',' << num(s.total_ratio) << '\n';
  }
  return os.str();
}

inline std::string format_compare_table(const std::vector<ModeSummary>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(9) << "mode" << std::right << std::setw(5) << "runs" << std::setw(20)
     << "eval_acc" << std::setw(10) << "d_acc" << std::setw(20) << "train_loss" << std::setw(10) << "d_loss"
     << std::setw(9) << "p_loss" << std::setw(9) << "p_acc" << std::setw(9) << "t_comp" << std::setw(9)
     << "t_total" << '\n';
  os << std::fixed;
  for (const auto& s : rows) {
    std::ostringstream acc, loss;
    acc << std::fixed << std::setprecision(4) << s.eval_acc_mean << " +- " << s.eval_acc_std;
    loss << std::fixed << std::setprecision(4) << s.train_loss_mean << " +- " << s.train_loss_std;
    os << std::left << std::setw(9) << to_string(s.mode) << std::right << std::setw(5) << s.runs << std::setw(20)
       << acc.str() << std::setw(10) << std::setprecision(4) << s.delta_eval_acc << std::setw(20) << loss.str()
       << std::setw(10) << s.delta_train_loss << std::setw(9) << std::setprecision(4) << s.sign_p_train_loss
       << std::setw(9) << s.sign_p_eval_acc << std::setw(9) << std::setprecision(3) << s.compute_ratio
       << std::setw(9) << s.total_ratio << '\n';
  }
  return os.str();
}

/// Reads metrics files, prints the summary table and optionally writes it as CSV.
inline int cmd_compare(const std::vector<std::string>& files, const std::string& out_csv, std::ostream& out,
                       std::ostream& err) {
  return detail::guarded(err, [&] {
    if (files.empty()) fail(ErrorKind::config, "compare needs at least one metrics file");
    std::vector<MetricsRecord> rows;
    for (const auto& f : files) {
      auto part = read_metrics_csv(f);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto summary = compare_runs(rows);
    out << format_compare_table(summary);
    if (!out_csv.empty()) {
      std::ofstream csv(out_csv, std::ios::trunc);
      if (!csv) fail(ErrorKind::io, "cannot write '" + out_csv + "'");
      csv << format_compare_csv(summary);
    }
    return 0;
  });
}

}  // namespace netaug
