#pragma once

// Dual-branch pre-training: per step, two augmented views per anchor, a dense
// pass on view one and a gated pass on view two (both gated in gated_only
// mode), one summed loss, one backward, one LARS step. Deterministic given
// the config seed.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <malloc.h>

#include "vdg/checkpoint.hpp"
#include "vdg/config.hpp"
#include "vdg/dataset.hpp"
#include "vdg/encoder.hpp"
#include "vdg/objective.hpp"
#include "vdg/optim.hpp"

namespace vdg {

inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double loss_total = 0, loss_inv = 0, loss_var = 0, loss_cov = 0;
  double loss_budget = 0, flops_ratio = 0, lr = 0, tau = 0;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out =
      "epoch,loss_total,loss_inv,loss_var,loss_cov,loss_budget,flops_ratio,lr,tau\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.epoch, r.loss_total, r.loss_inv, r.loss_var, r.loss_cov,
                  r.loss_budget, r.flops_ratio, r.lr, r.tau);
    out += buf;
  }
  return out;
}

// HWC images to an NCHW batch tensor
inline Tensor images_to_batch(const std::vector<Image>& views) {
  int n = static_cast<int>(views.size());
  int s = views[0].height;
  std::vector<float> data(static_cast<size_t>(n) * 3 * s * s);
  for (int i = 0; i < n; ++i) {
    const Image& im = views[static_cast<size_t>(i)];
    if (im.height != s || im.width != s)
      throw ConfigError("batch: images disagree in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          data[((static_cast<size_t>(i) * 3 + c) * s + y) * s + x] = im.at(y, x, c);
  }
  return Tensor::from({n, 3, s, s}, std::move(data));
}

struct PretrainResult {
  std::vector<EpochMetrics> metrics;
  std::filesystem::path final_checkpoint;
  double final5_flops_ratio = 0;  // mean over the last (up to) 5 epochs
};

inline PretrainResult pretrain(const RunConfig& cfg, const Dataset& dataset,
                               DualEncoder<float>& enc,
                               const std::filesystem::path& out_dir,
                               bool verbose = true) {
  namespace fs = std::filesystem;
  cfg.validate();
  // activation buffers are tens of MB and churn every step; keeping them on
  // the heap instead of fresh mmaps roughly halves allocator time
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  if (dataset.size() == 0) throw ContractError("pretrain: dataset is empty");
  if (cfg.output_size != cfg.input_size)
    throw ConfigError("pretrain: augment output_size must equal encoder input_size");
  long n = static_cast<long>(dataset.size());
  long spe = n / cfg.batch_size;  // partial batches dropped
  if (spe < 1)
    throw ConfigError("pretrain: dataset smaller than one batch");
  long total_steps = spe * cfg.epochs;
  long warmup_steps = spe * cfg.warmup_epochs;

  fs::create_directories(out_dir / "checkpoints");
  std::string config_text = cfg.serialize();
  write_text_atomic(out_dir / "config.txt", config_text);

  AugmentConfig aug = cfg.augment_config();
  VICRegConfig vcfg = cfg.vicreg_config();
  BudgetConfig bcfg = cfg.budget_config();
  GateSamplerConfig sampler = cfg.sampler_config();
  enc.sampler = sampler;
  FlopsModel fm = enc.flops_model();
  bool dual = cfg.branch_mode == "dual";

  auto named_params = enc.parameters();
  std::vector<LarsParam<float>> params;
  for (auto& p : named_params) params.push_back({p.tensor, p.lars_scaled});
  LarsOptimizer<float> opt(cfg.optim_config());

  std::vector<long> order(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  PretrainResult result;
  fs::path last_ckpt;
  long global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle_rng(cfg.seed, mix64(0x5bf, static_cast<uint64_t>(epoch)));
    shuffle_indices(order.begin(), order.end(), shuffle_rng);

    EpochMetrics em;
    em.epoch = epoch + 1;
    for (long step = 0; step < spe; ++step, ++global_step) {
      double lr = lr_schedule(global_step, total_steps, warmup_steps, cfg.base_lr);
      double tau = sampler.tau_at(static_cast<double>(global_step) /
                                  static_cast<double>(total_steps));

      std::vector<Image> v1(static_cast<size_t>(cfg.batch_size));
      std::vector<Image> v2(static_cast<size_t>(cfg.batch_size));
      for (int b = 0; b < cfg.batch_size; ++b) {
        long idx = order[static_cast<size_t>(step * cfg.batch_size + b)];
        uint64_t stream_id =
            static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n) +
            static_cast<uint64_t>(idx);
        auto views = sample_views(dataset.images[static_cast<size_t>(idx)], aug, stream_id);
        v1[static_cast<size_t>(b)] = std::move(views.first);
        v2[static_cast<size_t>(b)] = std::move(views.second);
      }
      auto x1 = images_to_batch(v1);
      auto x2 = images_to_batch(v2);

      uint64_t gate_stream = mix64(cfg.seed, 0xd1ce0000ull + static_cast<uint64_t>(global_step));
      TensorT<float> z1, z2;
      std::vector<GateMask<float>> masks1, masks2;
      if (dual) {
        auto r1 = enc.forward(x1, Path::dense, Mode::training);
        z1 = enc.project(r1.features, Path::dense);
      } else {
        auto r1 = enc.forward(x1, Path::gated, Mode::training,
                              mix64(gate_stream, 1), static_cast<float>(tau));
        masks1 = std::move(r1.masks);
        z1 = enc.project(r1.features, Path::gated);
      }
      auto r2 = enc.forward(x2, Path::gated, Mode::training,
                            mix64(gate_stream, 2), static_cast<float>(tau));
      masks2 = std::move(r2.masks);
      z2 = enc.project(r2.features, Path::gated);

      auto terms = vicreg_loss(z1, z2, vcfg);
      TensorT<float> ratio = flops_ratio(masks2, fm);
      if (!dual)
        ratio = affine(add(ratio, flops_ratio(masks1, fm)), 0.5f, 0.0f);
      auto lbudget = budget_loss(ratio, bcfg);
      auto total = add(terms.total, lbudget);

      float loss_val = total.item();
      if (!std::isfinite(loss_val))
        throw NumericError("pretrain: non-finite loss at step " +
                           std::to_string(global_step) + "; last checkpoint: " +
                           (last_ckpt.empty() ? "none" : last_ckpt.string()));

      for (auto& p : params) p.tensor.zero_grad();
      total.backward();
      opt.step(params, lr);

      em.loss_total += loss_val;
      em.loss_inv += terms.invariance.item();
      em.loss_var += terms.variance.item();
      em.loss_cov += terms.covariance.item();
      em.loss_budget += lbudget.item();
      em.flops_ratio += ratio.item();
      em.lr = lr;
      em.tau = tau;
    }
    em.loss_total /= static_cast<double>(spe);
    em.loss_inv /= static_cast<double>(spe);
    em.loss_var /= static_cast<double>(spe);
    em.loss_cov /= static_cast<double>(spe);
    em.loss_budget /= static_cast<double>(spe);
    em.flops_ratio /= static_cast<double>(spe);
    result.metrics.push_back(em);

    if (verbose) {
      std::printf(
          "epoch %3d/%d  loss %.4f  inv %.4f  var %.4f  cov %.4f  budget %.4f  "
          "ratio %.4f  lr %.4f  tau %.3f\n",
          em.epoch, cfg.epochs, em.loss_total, em.loss_inv, em.loss_var,
          em.loss_cov, em.loss_budget, em.flops_ratio, em.lr, em.tau);
      std::fflush(stdout);
    }

    bool cadence = (epoch + 1) % cfg.checkpoint_every == 0;
    if (cadence || epoch + 1 == cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch + 1);
      fs::path p = out_dir / "checkpoints" / name;
      write_checkpoint_file(p, snapshot_model(enc, &opt, static_cast<uint32_t>(epoch + 1),
                                              static_cast<uint64_t>(global_step),
                                              config_text));
      last_ckpt = p;
    }
  }

  fs::path final_path = out_dir / "checkpoints" / "final.ckpt";
  write_checkpoint_file(final_path,
                        snapshot_model(enc, &opt, static_cast<uint32_t>(cfg.epochs),
                                       static_cast<uint64_t>(global_step), config_text));
  result.final_checkpoint = final_path;

  write_text_atomic(out_dir / "metrics.csv", metrics_csv(result.metrics));

  size_t tail = std::min<size_t>(5, result.metrics.size());
  double acc = 0;
  for (size_t i = result.metrics.size() - tail; i < result.metrics.size(); ++i)
    acc += result.metrics[i].flops_ratio;
  result.final5_flops_ratio = acc / static_cast<double>(tail);
  return result;
}

}  // namespace vdg
