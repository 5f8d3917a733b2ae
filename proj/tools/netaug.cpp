#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "netaug/netaug.hpp"

namespace {

// Registers one `--<key>` option per manifest key on `cmd`.
void add_manifest_flags(CLI::App* cmd, std::string& manifest_path, std::map<std::string, std::string>& flags) {
  cmd->add_option("--manifest", manifest_path, "manifest file (key = value lines)");
  for (const auto& k : netaug::manifest_keys()) {
    cmd->add_option(std::string("--") + k.name, flags[k.name], k.help);
  }
}

netaug::ManifestMap collect(const CLI::App* cmd, const std::string& manifest_path,
                            const std::map<std::string, std::string>& flags) {
  netaug::ManifestMap m;
  if (!manifest_path.empty()) m = netaug::load_manifest_file(manifest_path);
  for (const auto& [k, v] : flags)
    if (cmd->count("--" + k) > 0) m[k] = v;
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"netaug: network augmentation for tiny models"};
  app.require_subcommand(1);

  std::string manifest_path;
  std::map<std::string, std::string> flags;

  auto* train = app.add_subcommand("train", "train every seed of a manifest, write metrics and checkpoints");
  add_manifest_flags(train, manifest_path, flags);

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint's base model on the manifest's test split");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  add_manifest_flags(eval, manifest_path, flags);

  std::string export_in, export_out;
  auto* exp = app.add_subcommand("export", "extract the base model from a supernet checkpoint");
  exp->add_option("supernet", export_in, "supernet checkpoint")->required();
  exp->add_option("-o,--out", export_out, "base checkpoint to write")->required();

  std::vector<std::string> compare_files;
  std::string compare_csv;
  auto* cmp = app.add_subcommand("compare", "summarize metrics CSVs per mode against the baseline");
  cmp->add_option("metrics", compare_files, "metrics CSV files")->required();
  cmp->add_option("--csv", compare_csv, "also write the summary as CSV");

  std::string grid_arch = "dense:8,dense:8";
  double grid_r = 3.0;
  std::size_t grid_s = 2;
  auto* grid = app.add_subcommand("grid", "print the width grid of every layer");
  grid->add_option("--arch", grid_arch, "hidden layers")->capture_default_str();
  grid->add_option("--r", grid_r, "augmentation factor")->capture_default_str();
  grid->add_option("--s", grid_s, "diversity factor")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  auto& out = std::cout;
  auto& err = std::cerr;
  try {
    if (*train) return netaug::cmd_train(collect(train, manifest_path, flags), netaug::env_seed_override(), out, err);
    if (*eval) {
      const auto m = netaug::manifest_from_map(collect(eval, manifest_path, flags));
      return netaug::cmd_eval(checkpoint, m.data, out, err);
    }
    if (*exp) return netaug::cmd_export(export_in, export_out, out, err);
    if (*cmp) return netaug::cmd_compare(compare_files, compare_csv, out, err);
    if (*grid) return netaug::cmd_grid(grid_arch, grid_r, grid_s, out, err);
  } catch (const netaug::Error& e) {
    err << "netaug: " << e.what() << '\n';
    return netaug::exit_code_for(e.kind());
  }
  return 2;
}
