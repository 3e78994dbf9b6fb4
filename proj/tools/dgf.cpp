// Command line front end: dataset generation, training, evaluation, the
// ablation grid, the gradient audit, and the loss oracle comparison.
//
// Config files are flat key = value with three sections by prefix:
//   scene.*   generator settings
//   model.*   architecture settings
//   loss.*    loss weights
// plus the bare trainer keys (steps, batch, lr, ...). DGF_OUT_ROOT, when
// set, reroots relative data_root/out_dir/output paths.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgf/errors.hpp"
#include "dgf/harness.hpp"
#include "dgf/losskit_oracle.hpp"

namespace fs = std::filesystem;
using namespace dgf;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::string resolve(const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  const char* root = std::getenv("DGF_OUT_ROOT");
  if (!root || !*root) return p;
  return (fs::path(root) / p).string();
}

KeyVal load_config(const std::string& path,
                   const std::vector<std::string>& sets) {
  KeyVal kv = KeyVal::parse(read_file(path), path);
  for (const std::string& s : sets) {
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ContractViolation("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

harness::TrainConfig train_config(const std::string& path,
                                  const std::vector<std::string>& sets) {
  KeyVal kv = load_config(path, sets);
  kv.take_prefix("scene.");  // generator section; not the trainer's business
  harness::TrainConfig cfg = harness::TrainConfig::from_keyval(kv);
  cfg.data_root = resolve(cfg.data_root);
  cfg.out_dir = resolve(cfg.out_dir);
  return cfg;
}

void print_metrics(const char* tag, const harness::MetricsReport& m) {
  std::printf("%s: miou %.4f  depth_mae %.4f  depth_log_rmse %.4f", tag,
              m.miou, m.depth_mae, m.depth_log_rmse);
  if (m.cond_accuracy >= 0.0) std::printf("  cond_acc %.4f", m.cond_accuracy);
  std::printf("  loss %.5f  (%d samples)\n", m.mean_loss_total, m.samples);
  std::printf("%s: class iou", tag);
  for (double v : m.class_iou)
    v < 0.0 ? std::printf("    - ") : std::printf(" %.3f", v);
  std::printf("\n");
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty()) seeds.push_back(std::strtoull(cur.c_str(), nullptr, 10));
  if (seeds.empty()) throw ContractViolation("no seeds in '" + s + "'");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depth-guided multimodal fusion toolkit"};
  app.require_subcommand(1);

  std::string cfg_path, out_path, ckpt_path, split = "val", seeds_arg = "1,2,3";
  std::vector<std::string> sets;
  int n_train = 200, n_val = 40, n_test = 40, cases = 25;
  std::uint64_t seed = 11;
  bool force = false;

  CLI::App* data = app.add_subcommand("data", "dataset commands");
  CLI::App* dmake = data->add_subcommand("make", "generate a dataset");
  dmake->add_option("--config", cfg_path, "config file (scene.* section)")
      ->required();
  dmake->add_option("--out", out_path, "dataset root")->required();
  dmake->add_option("--train", n_train, "training scenes");
  dmake->add_option("--val", n_val, "validation scenes");
  dmake->add_option("--test", n_test, "test scenes");
  dmake->add_flag("--force", force, "overwrite an existing dataset");

  CLI::App* train = app.add_subcommand("train", "train on a dataset");
  train->add_option("--config", cfg_path)->required();
  train->add_option("--set", sets, "override a config key (key=value)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", cfg_path)->required();
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--split", split, "train, val, or test");
  eval->add_option("--set", sets, "override a config key (key=value)");

  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");
  ablate->add_option("--config", cfg_path)->required();
  ablate->add_option("--seeds", seeds_arg, "comma separated seeds");
  ablate->add_option("--out", out_path, "json report path");
  ablate->add_option("--set", sets, "override a config key (key=value)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit");
  gradcheck->add_option("--seed", seed);

  CLI::App* oracle = app.add_subcommand("oracle", "loss oracle comparison");
  oracle->add_option("--cases", cases, "random cases per loss");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dmake->parsed()) {
      KeyVal kv = load_config(cfg_path, {});
      const scenegen::SceneConfig sc =
          scenegen::SceneConfig::from_keyval(kv.take_prefix("scene."));
      const scenegen::Manifest man = scenegen::make_dataset(
          sc, n_train, n_val, n_test, resolve(out_path), force);
      std::printf("wrote %zu samples (%dx%d, %d classes) under %s\n",
                  man.entries.size(), man.width, man.height, man.classes,
                  resolve(out_path).c_str());
    } else if (train->parsed()) {
      const harness::TrainConfig cfg = train_config(cfg_path, sets);
      const harness::TrainResult res = harness::train_from_disk(cfg);
      std::printf("trained %d steps, loss %.5f -> %.5f\n", cfg.steps,
                  res.curve.front().total, res.curve.back().total);
      print_metrics("train", res.train_metrics);
      if (res.val_metrics.samples > 0) print_metrics("val", res.val_metrics);
      if (!res.checkpoint_path.empty())
        std::printf("checkpoint %s\n", res.checkpoint_path.c_str());
    } else if (eval->parsed()) {
      const harness::TrainConfig cfg = train_config(cfg_path, sets);
      fusenet::Model model = fusenet::Model::build(cfg.model, cfg.seed);
      const std::int64_t at =
          fusenet::load_checkpoint(resolve(ckpt_path), model);
      const auto samples = harness::load_split(cfg.data_root, split);
      std::printf("checkpoint at step %lld, %zu '%s' samples\n",
                  static_cast<long long>(at), samples.size(), split.c_str());
      print_metrics(split.c_str(), harness::evaluate(model, samples, cfg));
    } else if (ablate->parsed()) {
      const harness::TrainConfig cfg = train_config(cfg_path, sets);
      const auto train_set = harness::load_split(cfg.data_root, "train");
      const auto val_set = harness::load_split(cfg.data_root, "val");
      // loss rows score depth under the heavy lidar-dropout conditions
      std::vector<scenegen::MultimodalSample> corrupted;
      for (const auto& s : val_set)
        if (s.condition.weather == scenegen::Weather::fog ||
            s.condition.weather == scenegen::Weather::snow)
          corrupted.push_back(s);
      const auto rows = harness::run_ablation(cfg, parse_seeds(seeds_arg),
                                              train_set, val_set,
                                              corrupted.empty() ? nullptr : &corrupted);
      for (const auto& r : rows) {
        if (r.table == "arch")
          std::printf("arch %d  ct=%c aux=%c dt=%c ", r.id, "ny"[r.ct],
                      "ny"[r.aux], "ny"[r.dt]);
        else
          std::printf("loss %d  smooth=%c tau=%c   ", r.id, "ny"[r.smooth],
                      "ny"[r.tau]);
        std::printf(" miou %.4f +- %.4f  log_rmse %.4f +- %.4f\n", r.miou_mean,
                    r.miou_sd, r.log_rmse_mean, r.log_rmse_sd);
      }
      if (!out_path.empty()) {
        const std::string dst = resolve(out_path);
        std::ofstream f(dst, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + dst);
        f << harness::ablation_json(rows);
        std::printf("report %s\n", dst.c_str());
      }
    } else if (gradcheck->parsed()) {
      const harness::GradCheckReport rep = harness::grad_check(seed);
      std::printf("worst %.3e in %s\n", rep.worst, rep.worst_param.c_str());
      std::printf("%s\n", rep.pass ? "pass" : "FAIL");
      return rep.pass ? 0 : 1;
    } else if (oracle->parsed()) {
      const double worst =
          losskit::oracle::run_comparison_suite(cases, &std::cout);
      const bool pass = worst <= 1e-12;
      std::printf("worst |deviation| %.3e: %s\n", worst,
                  pass ? "pass" : "FAIL");
      return pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
