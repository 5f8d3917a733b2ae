#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace netaug;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Metrics CSV with the timing columns cut off.
std::string without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    std::size_t pos = 0;
    for (int c = 0; c < 9 && pos != std::string::npos; ++c) pos = line.find(',', pos + (c ? 1 : 0));
    out += line.substr(0, pos) + '\n';
  }
  return out;
}

ManifestMap tiny_manifest(const fs::path& out, const std::string& mode = "baseline") {
  return {{"run_name", "t"},          {"mode", mode},
          {"epochs", "2"},            {"batch_size", "32"},
          {"spiral_per_class", "30"}, {"spiral_test_per_class", "20"},
          {"out_dir", out.string()},  {"seeds", "0,1"}};
}

MetricsRecord record(const std::string& mode, std::uint64_t seed, double loss, double acc, std::size_t epoch = 1) {
  MetricsRecord r;
  r.run_id = mode + "-" + std::to_string(seed);
  r.mode = train_mode_from(mode);
  r.seed = seed;
  r.epoch = epoch;
  r.train_loss = loss;
  r.eval_acc = acc;
  r.step_ms_compute = mode == "netaug" ? 2.0 : 1.0;
  r.step_ms_total = mode == "netaug" ? 3.0 : 2.0;
  return r;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(NETAUG_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Manifest, ParsesKeysCommentsAndDefaults) {
  ManifestMap m = default_manifest();
  parse_manifest_text("# comment\nmode = netaug   # trailing\n\n r=2.5\nseeds = 1, 2,3\n", m);
  const RunManifest rm = manifest_from_map(m);
  EXPECT_EQ(rm.config.mode, TrainMode::netaug);
  EXPECT_DOUBLE_EQ(rm.config.r, 2.5);
  EXPECT_EQ(rm.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(rm.config.batch_size, 64u);
  EXPECT_EQ(format_layers(rm.layers), "dense:8,dense:8");
}

TEST(Manifest, UnknownAndDuplicateKeysAreConfigErrors) {
  for (const char* text : {"aplha = 1\n", "alpha = 1\nalpha = 2\n", "just words\n"}) {
    ManifestMap m;
    try {
      parse_manifest_text(text, m);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config);
    }
  }
  EXPECT_THROW(manifest_from_map({{"aplha", "1"}}), Error);
}

TEST(Manifest, InvalidValuesAreConfigErrors) {
  const std::vector<ManifestMap> bad{
      {{"alpha", "-1"}},         {{"mode", "netaug"}, {"r", "1"}}, {{"epochs", "x"}},
      {{"nesterov", "maybe"}},   {{"seeds", ""}},                   {{"dataset", "imagenet"}},
      {{"dataset", "csv"}},      {{"lr", "0"}},                     {{"aug_weight_scale", "two"}},
      {{"run_name", "a/b"}},     {{"arch", "dense:0"}},             {{"dataset", "csv"}, {"train_csv", "a"}, {"test_csv", "a"}},
  };
  for (const auto& m : bad) {
    try {
      const RunManifest rm = manifest_from_map(m);
      // Architecture problems surface once the input shape is known.
      validate(ArchSpec{{2}, 3, rm.layers});
      ADD_FAILURE() << m.begin()->first << '=' << m.begin()->second;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config) << m.begin()->first;
    }
  }
}

TEST(Manifest, EnvironmentSeedOverride) {
  const RunManifest rm = manifest_from_map({{"seeds", "1,2"}}, std::string("7,8,9"));
  EXPECT_EQ(rm.seeds, (std::vector<std::uint64_t>{7, 8, 9}));
}

TEST(MetricsCsv, RoundTrip) {
  const auto dir = temp_dir("metrics");
  std::vector<MetricsRecord> rows{record("baseline", 3, 0.123456789, 0.5), record("netaug", 4, 1.5, 0.25, 2)};
  write_metrics_csv((dir / "m.csv").string(), rows);
  const std::string text = slurp(dir / "m.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), kMetricsHeader);
  const auto back = read_metrics_csv((dir / "m.csv").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].mode, TrainMode::netaug);
  EXPECT_EQ(back[1].epoch, 2u);
  EXPECT_NEAR(back[0].train_loss, 0.123456789, 1e-9);
}

TEST(MetricsCsv, MalformedIsParseError) {
  const auto dir = temp_dir("metrics_bad");
  std::ofstream(dir / "a.csv") << "run,mode\n";
  std::ofstream(dir / "b.csv") << kMetricsHeader << "\nr,baseline,0,1,x,0,0,0,0,0,0\n";
  std::ofstream(dir / "c.csv") << kMetricsHeader << "\nr,bogus,0,1,0,0,0,0,0,0,0\n";
  std::ofstream(dir / "d.csv") << kMetricsHeader << "\nr,baseline,-1,1,0,0,0,0,0,0,0\n";
  for (const char* f : {"a.csv", "b.csv", "c.csv", "d.csv"}) {
    try {
      read_metrics_csv((dir / f).string());
      ADD_FAILURE() << f;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parse) << f;
    }
  }
}

TEST(CmdTrain, OneEpochOneSeedGivesOneRow) {
  const auto dir = temp_dir("train_one");
  ManifestMap m = tiny_manifest(dir);
  m["epochs"] = "1";
  m["seeds"] = "5";
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(m, std::nullopt, out, err), 0) << err.str();
  const auto rows = read_metrics_csv((dir / "t-baseline-s5.csv").string());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].seed, 5u);
  EXPECT_EQ(rows[0].run_id, "t-baseline-s5");
  EXPECT_TRUE(fs::exists(dir / "t-baseline-s5.supernet.naug"));
  EXPECT_TRUE(fs::exists(dir / "t-baseline-s5.base.naug"));
}

TEST(CmdTrain, InvalidConfigWritesNothing) {
  const auto dir = temp_dir("train_invalid") / "out";
  ManifestMap m = tiny_manifest(dir, "netaug");
  m["alpha"] = "-0.5";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(m, std::nullopt, out, err), 2);
  EXPECT_FALSE(fs::exists(dir));
  EXPECT_NE(err.str().find("alpha"), std::string::npos);
}

TEST(CmdTrain, MissingDataFileIsIoErrorAndWritesNothing) {
  const auto dir = temp_dir("train_missing") / "out";
  ManifestMap m = tiny_manifest(dir);
  m["dataset"] = "csv";
  m["train_csv"] = "/nonexistent/train.csv";
  m["test_csv"] = "/nonexistent/test.csv";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(m, std::nullopt, out, err), 4);
  EXPECT_FALSE(fs::exists(dir));
}

TEST(CmdTrain, DivergenceExitsWithRuntimeCode) {
  const auto dir = temp_dir("train_nan");
  ManifestMap m = tiny_manifest(dir);
  m["lr"] = "1e30";
  m["epochs"] = "20";
  m["label_smoothing"] = "0";
  std::ostringstream out, err;
  EXPECT_EQ(cmd_train(m, std::nullopt, out, err), 3);
}

TEST(CmdTrain, RerunIsBitwiseIdenticalApartFromTiming) {
  const auto a = temp_dir("train_det_a"), b = temp_dir("train_det_b");
  for (const char* mode : {"baseline", "netaug", "dropout", "mixup"}) {
    std::ostringstream out, err;
    ASSERT_EQ(cmd_train(tiny_manifest(a, mode), std::nullopt, out, err), 0) << err.str();
    ASSERT_EQ(cmd_train(tiny_manifest(b, mode), std::nullopt, out, err), 0) << err.str();
    for (const char* seed : {"0", "1"}) {
      const std::string stem = std::string("t-") + mode + "-s" + seed;
      EXPECT_EQ(without_timing(slurp(a / (stem + ".csv"))), without_timing(slurp(b / (stem + ".csv")))) << stem;
      EXPECT_EQ(slurp(a / (stem + ".supernet.naug")), slurp(b / (stem + ".supernet.naug"))) << stem;
      EXPECT_EQ(slurp(a / (stem + ".base.naug")), slurp(b / (stem + ".base.naug"))) << stem;
    }
  }
}

TEST(CmdExport, RatioMatchesParamCount) {
  const auto dir = temp_dir("export");
  const ArchSpec arch = mlp_arch(2, {8}, 3);
  const Supernet net = build_supernet(arch, {3.0, 2}, {1});
  save_checkpoint((dir / "s.naug").string(), net, CheckpointKind::supernet);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_export((dir / "s.naug").string(), (dir / "b.naug").string(), out, err), 0) << err.str();
  const double ratio = double(param_count(arch, net.max())) / double(param_count(arch, net.base()));
  EXPECT_DOUBLE_EQ(export_summary(net).ratio, ratio);
  EXPECT_NE(out.str().find("base_params=" + std::to_string(param_count(arch, net.base()))), std::string::npos);
  const Checkpoint base = load_checkpoint((dir / "b.naug").string());
  EXPECT_EQ(base.kind, CheckpointKind::base);
  Rng rng(2);
  const Tensor x = random_tensor({20, 2}, rng);
  EXPECT_TRUE(bitwise_equal(forward_at(base.net, base.net.base(), x), forward_at(net, net.base(), x)));
}

TEST(CmdExport, UnaugmentedRatioIsOne) {
  const Supernet net = build_supernet(mlp_arch(2, {8}, 3), {1.0, 1});
  EXPECT_DOUBLE_EQ(export_summary(net).ratio, 1.0);
}

TEST(CmdEval, PerfectMemorizationAndUniformLogits) {
  const auto dir = temp_dir("eval");
  std::ofstream(dir / "train.csv") << "a,b,label\n1,0,0\n0,1,1\n";
  std::ofstream(dir / "test.csv") << "a,b,label\n1,0,0\n0,1,1\n2,0,0\n0,3,1\n";
  DataSpec data;
  data.kind = "csv";
  data.train_csv = (dir / "train.csv").string();
  data.test_csv = (dir / "test.csv").string();

  // Identity head: logit k = feature k.
  ArchSpec arch{{2}, 2, {}};
  Supernet net = build_supernet(arch, {1.0, 1});
  net.params.tensors[0] = Tensor::from_rows({{1, 0}, {0, 1}});
  save_checkpoint((dir / "id.naug").string(), net, CheckpointKind::base);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_eval((dir / "id.naug").string(), data, out, err), 0) << err.str();
  EXPECT_NE(out.str().find("accuracy=1 "), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("{\"accuracy\":1,"), std::string::npos);

  // All-zero weights give uniform logits; ties go to class 0, half the balanced set.
  net.params.tensors[0].fill(0.0f);
  save_checkpoint((dir / "zero.naug").string(), net, CheckpointKind::base);
  std::ostringstream out2;
  ASSERT_EQ(cmd_eval((dir / "zero.naug").string(), data, out2, err), 0);
  EXPECT_NE(out2.str().find("accuracy=0.5 "), std::string::npos) << out2.str();
}

TEST(CmdEval, LossMatchesTrainerEvalLoss) {
  const auto dir = temp_dir("eval_consistency");
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(tiny_manifest(dir, "netaug"), std::nullopt, out, err), 0) << err.str();
  const auto rows = read_metrics_csv((dir / "t-netaug-s0.csv").string());
  const RunManifest rm = manifest_from_map(tiny_manifest(dir, "netaug"));
  const Checkpoint ck = load_checkpoint((dir / "t-netaug-s0.supernet.naug").string());
  const EvalResult ev = evaluate(ck.net, ck.net.base(), load_datasets(rm.data).second);
  EXPECT_NEAR(ev.loss, rows.back().eval_loss, 1e-7);
  EXPECT_NEAR(ev.accuracy, rows.back().eval_acc, 1e-9);
  std::ostringstream eval_out;
  ASSERT_EQ(cmd_eval((dir / "t-netaug-s0.base.naug").string(), rm.data, eval_out, err), 0);
  const std::string s = eval_out.str();
  const double printed = std::stod(s.substr(s.find("loss=") + 5));
  EXPECT_NEAR(printed, rows.back().eval_loss, 1e-7);
}

TEST(SignTest, ExactBinomial) {
  EXPECT_DOUBLE_EQ(sign_test_p(5, 0), 0.0625);
  EXPECT_DOUBLE_EQ(sign_test_p(0, 5), 0.0625);
  EXPECT_DOUBLE_EQ(sign_test_p(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(sign_test_p(3, 3), 1.0);
  // 2 * (1 + 10 + 45) / 1024
  EXPECT_DOUBLE_EQ(sign_test_p(8, 2), 112.0 / 1024.0);
}

TEST(Compare, FiveSeedSweepGivesExactSignTest) {
  std::vector<MetricsRecord> rows;
  for (std::uint64_t s = 0; s < 5; ++s) {
    rows.push_back(record("baseline", s, 0.5 + 0.01 * double(s), 0.8));
    rows.push_back(record("netaug", s, 0.4 + 0.01 * double(s), 0.85));
  }
  const auto summary = compare_runs(rows);
  ASSERT_EQ(summary.size(), 2u);
  const ModeSummary& na = summary[1];
  EXPECT_EQ(na.mode, TrainMode::netaug);
  EXPECT_DOUBLE_EQ(na.sign_p_train_loss, 0.0625);
  EXPECT_NEAR(na.delta_train_loss, -0.1, 1e-12);
  EXPECT_NEAR(na.delta_eval_acc, 0.05, 1e-12);
  EXPECT_DOUBLE_EQ(na.compute_ratio, 2.0);
  EXPECT_DOUBLE_EQ(na.total_ratio, 1.5);
}

TEST(Compare, UsesFinalEpochOnly) {
  std::vector<MetricsRecord> rows{record("baseline", 0, 9.0, 0.1, 1), record("baseline", 0, 1.0, 0.9, 2)};
  const auto summary = compare_runs(rows);
  EXPECT_DOUBLE_EQ(summary[0].train_loss_mean, 1.0);
  EXPECT_DOUBLE_EQ(summary[0].eval_acc_mean, 0.9);
}

TEST(Compare, IdenticalFilesForTwoModesGiveZeroDelta) {
  const auto dir = temp_dir("compare_same");
  std::vector<MetricsRecord> base, drop;
  for (std::uint64_t s = 0; s < 3; ++s) {
    base.push_back(record("baseline", s, 0.3 + 0.1 * double(s), 0.7 - 0.05 * double(s)));
    MetricsRecord d = base.back();
    d.mode = TrainMode::dropout;
    d.run_id = "dropout-" + std::to_string(s);
    drop.push_back(d);
  }
  write_metrics_csv((dir / "b.csv").string(), base);
  write_metrics_csv((dir / "d.csv").string(), drop);
  std::ostringstream out, err;
  ASSERT_EQ(cmd_compare({(dir / "b.csv").string(), (dir / "d.csv").string()}, (dir / "sum.csv").string(), out, err),
            0)
      << err.str();
  std::vector<MetricsRecord> all = base;
  all.insert(all.end(), drop.begin(), drop.end());
  const auto s = compare_runs(all);
  EXPECT_EQ(s[1].delta_eval_acc, 0.0);
  EXPECT_EQ(s[1].delta_train_loss, 0.0);
  const std::string csv = slurp(dir / "sum.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCompareHeader);
  EXPECT_NE(csv.find("dropout,3,"), std::string::npos);
}

TEST(Compare, MissingBaselineIsReported) {
  const auto dir = temp_dir("compare_nobase");
  write_metrics_csv((dir / "n.csv").string(), {record("netaug", 0, 0.4, 0.8)});
  std::ostringstream out, err;
  EXPECT_EQ(cmd_compare({(dir / "n.csv").string()}, "", out, err), 2);
  EXPECT_NE(err.str().find("no baseline runs found"), std::string::npos);
}

TEST(Compare, IsAPureFunctionOfItsInputs) {
  std::vector<MetricsRecord> rows;
  for (std::uint64_t s = 0; s < 4; ++s) {
    rows.push_back(record("baseline", s, 0.5, 0.8));
    rows.push_back(record("mixup", s, 0.6 - 0.1 * double(s % 2), 0.7));
  }
  EXPECT_EQ(format_compare_csv(compare_runs(rows)), format_compare_csv(compare_runs(rows)));
  std::reverse(rows.begin(), rows.end());
  EXPECT_EQ(format_compare_table(compare_runs(rows)), format_compare_table(compare_runs(rows)));
}

TEST(CmdGrid, PrintsRows) {
  std::ostringstream out, err;
  ASSERT_EQ(cmd_grid("dense:8,dense:4:fixed", 3.0, 2, out, err), 0);
  EXPECT_EQ(out.str(), "layer0 dense w=8: 8 16 24\nlayer1 dense w=4: 4\n");
  EXPECT_EQ(cmd_grid("dense:8", 0.5, 2, out, err), 2);
}

TEST(Cli, ExitCodes) {
  const auto dir = temp_dir("cli");
  const std::string out = " --out_dir " + dir.string();
  EXPECT_EQ(run_cli("grid --arch dense:8 --r 3 --s 2"), 0);
  EXPECT_EQ(run_cli("train --epochs 1 --spiral_per_class 10 --spiral_test_per_class 5" + out), 0);
  EXPECT_TRUE(fs::exists(dir / "run-baseline-s0.csv"));
  EXPECT_EQ(run_cli("train --mode netaug --alpha -1" + out + "/x"), 2);
  EXPECT_FALSE(fs::exists(dir / "x"));
  EXPECT_EQ(run_cli("train --aplha 1"), 2);
  EXPECT_EQ(run_cli("train --manifest /nonexistent/m.txt"), 4);
  EXPECT_EQ(run_cli("eval /nonexistent/model.naug"), 4);
  EXPECT_EQ(run_cli("export " + (dir / "run-baseline-s0.supernet.naug").string() + " -o " +
                    (dir / "exported.naug").string()),
            0);
  EXPECT_EQ(run_cli("compare " + (dir / "run-baseline-s0.csv").string()), 0);
  EXPECT_EQ(run_cli(""), 2);
}

TEST(Cli, SeedEnvironmentOverride) {
  const auto dir = temp_dir("cli_env");
  const std::string cmd = "NETAUG_SEED=3,4 " + std::string(NETAUG_CLI) +
                          " train --epochs 1 --spiral_per_class 10 --spiral_test_per_class 5 --seeds 0 --out_dir " +
                          dir.string() + " >/dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "run-baseline-s3.csv"));
  EXPECT_TRUE(fs::exists(dir / "run-baseline-s4.csv"));
  EXPECT_FALSE(fs::exists(dir / "run-baseline-s0.csv"));
}

TEST(Cli, ManifestFileAndFlagOverride) {
  const auto dir = temp_dir("cli_manifest");
  std::ofstream(dir / "m.txt") << "run_name = fromfile\nmode = netaug\nepochs = 1\nspiral_per_class = 10\n"
                                  "spiral_test_per_class = 5\nout_dir = "
                               << dir.string() << "\n";
  EXPECT_EQ(run_cli("train --manifest " + (dir / "m.txt").string() + " --mode dropout"), 0);
  EXPECT_TRUE(fs::exists(dir / "fromfile-dropout-s0.csv"));
  EXPECT_FALSE(fs::exists(dir / "fromfile-netaug-s0.csv"));
}
