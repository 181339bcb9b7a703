#pragma once

// Command-line surface. Subcommands: pretrain, eval-knn, eval-linear,
// export-policy, export-features, plot. Artifacts are written atomically and
// runs are reproducible from (inputs, seed).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vdg/checkpoint.hpp"
#include "vdg/cli_version.hpp"
#include "vdg/config.hpp"
#include "vdg/dataset.hpp"
#include "vdg/eval.hpp"
#include "vdg/svg.hpp"
#include "vdg/train.hpp"

namespace vdg {

namespace cli_detail {

inline Path parse_path_flag(const std::string& s) {
  if (s == "dense") return Path::dense;
  if (s == "gated") return Path::gated;
  throw ConfigError("--path must be dense or gated");
}

inline nlohmann::json policy_json(const PolicyHistogram& hist) {
  nlohmann::json j;
  j["threshold_always_on"] = hist.threshold_on;
  j["threshold_off"] = hist.threshold_off;
  j["overall_active_fraction"] = hist.overall_active_fraction;
  j["inference_flops_ratio"] = hist.inference_flops_ratio;
  j["inference_flops_reduction"] = 1.0 - hist.inference_flops_ratio;
  j["blocks"] = nlohmann::json::array();
  for (size_t i = 0; i < hist.blocks.size(); ++i) {
    const auto& b = hist.blocks[i];
    nlohmann::json jb;
    jb["block"] = i;
    jb["width"] = b.width;
    jb["always_on"] = b.always_on;
    jb["data_dependent"] = b.data_dependent;
    jb["off"] = b.off;
    jb["active_fraction"] = b.active_fraction;
    jb["probability"] = b.probability;
    j["blocks"].push_back(jb);
  }
  return j;
}

inline int run_pretrain(const std::string& config_path, const std::string& out) {
  namespace fs = std::filesystem;
  RunConfig cfg = RunConfig::parse_file(config_path);
  if (cfg.data_dir.empty())
    throw ConfigError("pretrain: config must set data_dir");
  Dataset data = load_image_folder(cfg.data_dir);
  auto enc = DualEncoder<float>::make(cfg.encoder_config(), cfg.seed,
                                      cfg.sampler_config());
  fs::path out_dir(out);
  auto result = pretrain(cfg, data, enc, out_dir);

  nlohmann::json report;
  report["epochs"] = cfg.epochs;
  report["t_d"] = cfg.t_d;
  report["branch_mode"] = cfg.branch_mode;
  report["final_train_flops_ratio"] = result.metrics.back().flops_ratio;
  report["last5_train_flops_ratio"] = result.final5_flops_ratio;

  auto policy = export_policy(enc, data);
  report["inference_flops_ratio"] = policy.inference_flops_ratio;
  report["flops_reduction"] = 1.0 - policy.inference_flops_ratio;
  report["policy_summary"] = nlohmann::json::array();
  for (size_t i = 0; i < policy.blocks.size(); ++i) {
    nlohmann::json jb;
    jb["block"] = i;
    jb["active_fraction"] = policy.blocks[i].active_fraction;
    report["policy_summary"].push_back(jb);
  }

  // labeled evaluation data is optional; when present the run report carries
  // nearest-neighbor accuracies for both paths
  if (!cfg.eval_train_dir.empty() && !cfg.eval_test_dir.empty()) {
    Dataset ev_train = load_image_folder(cfg.eval_train_dir);
    Dataset ev_test = load_image_folder(cfg.eval_test_dir);
    auto tr_d = extract_features(enc, Path::dense, ev_train, true);
    auto te_d = extract_features(enc, Path::dense, ev_test, true);
    auto tr_g = extract_features(enc, Path::gated, ev_train, true);
    auto te_g = extract_features(enc, Path::gated, ev_test, true);
    report["dense_knn_top1"] = knn_top1(tr_d, te_d);
    report["gated_knn_top1"] = knn_top1(tr_g, te_g);
  } else {
    report["dense_knn_top1"] = nullptr;
    report["gated_knn_top1"] = nullptr;
  }
  write_text_atomic(out_dir / "report.json", report.dump(2) + "\n");
  return 0;
}

inline int run_eval_knn(const std::string& ckpt, const std::string& train_dir,
                        const std::string& test_dir, const std::string& path_flag,
                        bool no_normalize, const std::string& out_json) {
  auto enc = load_encoder_from_checkpoint(ckpt);
  Path path = parse_path_flag(path_flag);
  Dataset train = load_image_folder(train_dir);
  Dataset test = load_image_folder(test_dir);
  auto ftr = extract_features(enc, path, train, !no_normalize);
  auto fte = extract_features(enc, path, test, !no_normalize);
  double acc = knn_top1(ftr, fte);
  std::printf("knn_top1 %.6f\n", acc);
  if (!out_json.empty()) {
    nlohmann::json j;
    j["metric"] = "knn_top1";
    j["path"] = path_flag;
    j["normalized"] = !no_normalize;
    j["accuracy"] = acc;
    write_text_atomic(out_json, j.dump(2) + "\n");
  }
  return 0;
}

inline int run_eval_linear(const std::string& ckpt, const std::string& train_dir,
                           const std::string& test_dir, const std::string& path_flag,
                           int repeats, int epochs, int batch_size, double lr,
                           std::vector<int> decay_epochs, uint64_t seed,
                           const std::string& out_json) {
  auto enc = load_encoder_from_checkpoint(ckpt);
  Path path = parse_path_flag(path_flag);
  Dataset train = load_image_folder(train_dir);
  Dataset test = load_image_folder(test_dir);
  auto ftr = extract_features(enc, path, train, false);
  auto fte = extract_features(enc, path, test, false);
  ProbeSchedule sched;
  sched.repeats = repeats;
  sched.epochs = epochs;
  sched.batch_size = batch_size;
  sched.lr = lr;
  if (!decay_epochs.empty()) sched.decay_epochs = std::move(decay_epochs);
  sched.seed = seed;
  double acc = linear_probe(ftr, fte, sched);
  std::printf("linear_top1 %.6f\n", acc);
  if (!out_json.empty()) {
    nlohmann::json j;
    j["metric"] = "linear_top1";
    j["path"] = path_flag;
    j["repeats"] = repeats;
    j["accuracy"] = acc;
    write_text_atomic(out_json, j.dump(2) + "\n");
  }
  return 0;
}

inline int run_export_policy(const std::string& ckpt, const std::string& probe_dir,
                             const std::string& out) {
  auto enc = load_encoder_from_checkpoint(ckpt);
  Dataset probe = load_image_folder(probe_dir);
  auto hist = export_policy(enc, probe);
  write_text_atomic(out, policy_json(hist).dump(2) + "\n");
  return 0;
}

inline int run_export_features(const std::string& ckpt, const std::string& data_dir,
                               const std::string& path_flag, bool no_normalize,
                               const std::string& out) {
  auto enc = load_encoder_from_checkpoint(ckpt);
  Dataset data = load_image_folder(data_dir);
  auto fs = extract_features(enc, parse_path_flag(path_flag), data, !no_normalize);
  write_featureset(out, fs);
  return 0;
}

inline int run_plot(const std::string& metrics_path, const std::string& out_dir,
                    double target_ratio) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw ConfigError("plot: cannot open " + metrics_path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto rows = parse_metrics_csv(ss.str());
  write_metric_charts(out_dir, rows, target_ratio);
  return 0;
}

}  // namespace cli_detail

inline int run_command(std::vector<std::string> args) {
  CLI::App app{"dual-path self-supervised pretraining with budgeted channel gating"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path, out_dir;
  auto* pre = app.add_subcommand("pretrain", "train the dual encoder from a config file");
  pre->add_option("--config", config_path, "key=value run configuration")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--out", out_dir, "output directory")->required();

  std::string ckpt, train_dir, test_dir, path_flag = "dense", out_json;
  bool no_normalize = false;
  auto* knn = app.add_subcommand("eval-knn", "nearest-neighbor top-1 on frozen features");
  knn->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  knn->add_option("--train-data", train_dir, "labeled reference images")->required();
  knn->add_option("--test-data", test_dir, "labeled query images")->required();
  knn->add_option("--path", path_flag, "dense|gated");
  knn->add_flag("--no-normalize", no_normalize, "skip l2 normalization");
  knn->add_option("--out", out_json, "optional JSON result file");

  std::string lin_ckpt, lin_train, lin_test, lin_path = "dense", lin_out;
  int repeats = 5, probe_epochs = 100, probe_batch = 512;
  double probe_lr = 0.3;
  std::vector<int> probe_decay;
  uint64_t probe_seed = 0;
  auto* lin = app.add_subcommand("eval-linear", "linear probe on frozen features");
  lin->add_option("--ckpt", lin_ckpt)->required()->check(CLI::ExistingFile);
  lin->add_option("--train-data", lin_train)->required();
  lin->add_option("--test-data", lin_test)->required();
  lin->add_option("--path", lin_path, "dense|gated");
  lin->add_option("--repeats", repeats, "probe seeds to average over");
  lin->add_option("--epochs", probe_epochs);
  lin->add_option("--batch-size", probe_batch);
  lin->add_option("--lr", probe_lr);
  lin->add_option("--decay-epochs", probe_decay, "step-decay epochs");
  lin->add_option("--seed", probe_seed);
  lin->add_option("--out", lin_out, "optional JSON result file");

  std::string pol_ckpt, probe_dir, pol_out;
  auto* pol = app.add_subcommand("export-policy", "per-channel activation histogram");
  pol->add_option("--ckpt", pol_ckpt)->required()->check(CLI::ExistingFile);
  pol->add_option("--probe-data", probe_dir)->required();
  pol->add_option("--out", pol_out)->required();

  std::string feat_ckpt, feat_data, feat_path = "dense", feat_out;
  bool feat_no_norm = false;
  auto* feat = app.add_subcommand("export-features", "raw feature matrix export");
  feat->add_option("--ckpt", feat_ckpt)->required()->check(CLI::ExistingFile);
  feat->add_option("--data", feat_data)->required();
  feat->add_option("--path", feat_path, "dense|gated");
  feat->add_flag("--no-normalize", feat_no_norm);
  feat->add_option("--out", feat_out)->required();

  std::string metrics_path, plot_out;
  double target_ratio = std::nan("");
  auto* plot = app.add_subcommand("plot", "render metrics.csv as SVG charts");
  plot->add_option("--metrics", metrics_path)->required()->check(CLI::ExistingFile);
  plot->add_option("--out", plot_out)->required();
  plot->add_option("--td", target_ratio, "draw the target ratio on the flops chart");

  std::vector<const char*> argv;
  argv.push_back("vdg");
  for (auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (pre->parsed()) return cli_detail::run_pretrain(config_path, out_dir);
    if (knn->parsed())
      return cli_detail::run_eval_knn(ckpt, train_dir, test_dir, path_flag,
                                      no_normalize, out_json);
    if (lin->parsed())
      return cli_detail::run_eval_linear(lin_ckpt, lin_train, lin_test, lin_path,
                                         repeats, probe_epochs, probe_batch,
                                         probe_lr, probe_decay, probe_seed, lin_out);
    if (pol->parsed()) return cli_detail::run_export_policy(pol_ckpt, probe_dir, pol_out);
    if (feat->parsed())
      return cli_detail::run_export_features(feat_ckpt, feat_data, feat_path,
                                             feat_no_norm, feat_out);
    if (plot->parsed()) return cli_detail::run_plot(metrics_path, plot_out, target_ratio);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::fprintf(stderr, "error: no subcommand\n");
  return 1;
}

}  // namespace vdg
