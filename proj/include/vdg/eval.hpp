#pragma once

// Frozen-encoder evaluation: feature extraction with deterministic
// preprocessing, nearest-neighbor and linear-probe accuracy, learned-policy
// export, and the inference-mode compute ratio.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vdg/budget.hpp"
#include "vdg/dataset.hpp"
#include "vdg/encoder.hpp"
#include "vdg/rng.hpp"
#include "vdg/tensor.hpp"
#include "vdg/train.hpp"

namespace vdg {

struct FeatureSet {
  int dim = 0;
  std::vector<float> rows;  // count() x dim
  std::vector<int> labels;
  bool normalized = false;

  int count() const { return static_cast<int>(labels.size()); }
  const float* row(int i) const { return rows.data() + static_cast<size_t>(i) * dim; }
};

inline FeatureSet extract_features(DualEncoder<float>& enc, Path path,
                                   const Dataset& dataset, bool normalize,
                                   int batch_size = 256) {
  if (dataset.size() == 0) throw ContractError("extract_features: empty dataset");
  int size = enc.cfg.input_size;
  FeatureSet fs;
  fs.dim = enc.cfg.feature_dim();
  fs.labels = dataset.labels;
  fs.normalized = normalize;
  fs.rows.resize(dataset.size() * static_cast<size_t>(fs.dim));
  for (size_t start = 0; start < dataset.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(dataset.size(), start + static_cast<size_t>(batch_size));
    std::vector<Image> views;
    views.reserve(end - start);
    for (size_t i = start; i < end; ++i)
      views.push_back(center_crop_resize(dataset.images[i], size));
    auto x = images_to_batch(views);
    auto res = enc.forward(x, path, Mode::inference);
    const auto& fv = res.features.value();
    std::copy(fv.begin(), fv.end(), fs.rows.begin() + start * static_cast<size_t>(fs.dim));
  }
  if (normalize) {
    for (int i = 0; i < fs.count(); ++i) {
      float* r = fs.rows.data() + static_cast<size_t>(i) * fs.dim;
      double norm2 = 0;
      for (int j = 0; j < fs.dim; ++j) norm2 += static_cast<double>(r[j]) * r[j];
      if (norm2 > 0) {
        float inv = static_cast<float>(1.0 / std::sqrt(norm2));
        for (int j = 0; j < fs.dim; ++j) r[j] *= inv;
      }
    }
  }
  return fs;
}

// k-nearest-neighbor top-1. Cosine similarity on normalized features,
// Euclidean distance otherwise; ties resolve to the lowest sample index.
inline double knn_top1(const FeatureSet& train, const FeatureSet& test, int k = 1) {
  if (train.count() == 0) throw ContractError("knn: empty reference set");
  if (train.dim != test.dim) throw ContractError("knn: feature dimensions differ");
  if (train.normalized != test.normalized)
    throw ContractError("knn: mixed normalized and raw features");
  if (k < 1 || k > train.count()) throw ContractError("knn: bad k");

  int nt = test.count(), nr = train.count(), d = train.dim;
  // scores: similarity (cosine) or negated squared distance; argmax either way
  std::vector<float> scores(static_cast<size_t>(nt) * nr, 0.0f);
  detail::gemm(false, true, nt, nr, d, 1.0f, test.rows.data(), d,
               train.rows.data(), d, 0.0f, scores.data(), nr);
  std::vector<float> train_norm2(static_cast<size_t>(nr), 0.0f);
  if (!train.normalized) {
    for (int j = 0; j < nr; ++j) {
      const float* r = train.row(j);
      float s = 0;
      for (int c = 0; c < d; ++c) s += r[c] * r[c];
      train_norm2[static_cast<size_t>(j)] = s;
    }
  }

  int correct = 0;
  std::vector<int> top_idx(static_cast<size_t>(k));
  for (int i = 0; i < nt; ++i) {
    float* row = scores.data() + static_cast<size_t>(i) * nr;
    if (!train.normalized)
      for (int j = 0; j < nr; ++j)
        row[j] = 2.0f * row[j] - train_norm2[static_cast<size_t>(j)];  // -||a-b||^2 + const
    if (k == 1) {
      int best = 0;
      for (int j = 1; j < nr; ++j)
        if (row[j] > row[best]) best = j;  // strict: ties keep the lowest index
      if (train.labels[static_cast<size_t>(best)] == test.labels[static_cast<size_t>(i)]) ++correct;
      continue;
    }
    std::vector<int> idx(static_cast<size_t>(nr));
    for (int j = 0; j < nr; ++j) idx[static_cast<size_t>(j)] = j;
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    std::vector<int> votes;
    for (int j = 0; j < k; ++j)
      votes.push_back(train.labels[static_cast<size_t>(idx[static_cast<size_t>(j)])]);
    std::sort(votes.begin(), votes.end());
    int best_label = votes[0], best_count = 0, run = 0;
    for (size_t j = 0; j < votes.size(); ++j) {
      run = (j > 0 && votes[j] == votes[j - 1]) ? run + 1 : 1;
      if (run > best_count) {
        best_count = run;
        best_label = votes[j];
      }
    }
    if (best_label == test.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nt);
}

struct ProbeSchedule {
  int epochs = 100;
  int batch_size = 512;
  double lr = 0.3;
  std::vector<int> decay_epochs{60, 80};
  double decay = 0.1;
  double momentum = 0.9;
  int repeats = 5;
  uint64_t seed = 0;

  static ProbeSchedule toy() {
    ProbeSchedule s;
    s.epochs = 30;
    s.decay_epochs = {18, 24};
    return s;
  }
};

// trains a softmax linear classifier on frozen features, returns mean top-1
// over `repeats` probe seeds
inline double linear_probe(const FeatureSet& train, const FeatureSet& test,
                           const ProbeSchedule& sched) {
  if (train.count() < 2) throw ContractError("linear_probe: need at least 2 samples");
  if (train.dim != test.dim) throw ContractError("linear_probe: feature dims differ");
  int classes = 0;
  for (int l : train.labels) classes = std::max(classes, l + 1);
  for (int l : test.labels) classes = std::max(classes, l + 1);
  int distinct = 0;
  {
    std::vector<int> seen(static_cast<size_t>(classes), 0);
    for (int l : train.labels)
      if (!seen[static_cast<size_t>(l)]++) ++distinct;
  }
  if (distinct < 2) throw ContractError("linear_probe: training set has a single class");

  int n = train.count(), d = train.dim;
  double acc_sum = 0;
  for (int rep = 0; rep < sched.repeats; ++rep) {
    RngStream init_rng(sched.seed, mix64(0x980b, static_cast<uint64_t>(rep)));
    float bound = 1.0f / std::sqrt(static_cast<float>(d));
    std::vector<float> w0(static_cast<size_t>(classes) * d);
    for (auto& v : w0) v = static_cast<float>(init_rng.uniform(-bound, bound));
    auto w = Tensor::from({classes, d}, std::move(w0), true);
    auto b = Tensor::zeros({classes}, true);

    std::vector<long> order(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    double lr = sched.lr;
    std::vector<float> mom_w(w.numel(), 0.0f), mom_b(static_cast<size_t>(classes), 0.0f);
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
      for (int de : sched.decay_epochs)
        if (epoch == de) lr *= sched.decay;
      RngStream srng(sched.seed, mix64(0x5f0b, mix64(static_cast<uint64_t>(rep),
                                                     static_cast<uint64_t>(epoch))));
      shuffle_indices(order.begin(), order.end(), srng);
      for (long start = 0; start < n; start += sched.batch_size) {
        long end = std::min<long>(n, start + sched.batch_size);
        long bs = end - start;
        std::vector<float> xb(static_cast<size_t>(bs) * d);
        std::vector<int> yb(static_cast<size_t>(bs));
        for (long i = 0; i < bs; ++i) {
          long idx = order[static_cast<size_t>(start + i)];
          std::copy(train.row(static_cast<int>(idx)), train.row(static_cast<int>(idx)) + d,
                    xb.begin() + static_cast<size_t>(i) * d);
          yb[static_cast<size_t>(i)] = train.labels[static_cast<size_t>(idx)];
        }
        auto x = Tensor::from({static_cast<int>(bs), d}, std::move(xb));
        auto loss = softmax_cross_entropy(linear(x, w, b), yb);
        w.zero_grad();
        b.zero_grad();
        loss.backward();
        auto& wg = w.grad();
        auto& wv = w.value();
        for (size_t j = 0; j < wv.size(); ++j) {
          mom_w[j] = static_cast<float>(sched.momentum) * mom_w[j] +
                     static_cast<float>(lr) * wg[j];
          wv[j] -= mom_w[j];
        }
        auto& bg = b.grad();
        auto& bv = b.value();
        for (size_t j = 0; j < bv.size(); ++j) {
          mom_b[j] = static_cast<float>(sched.momentum) * mom_b[j] +
                     static_cast<float>(lr) * bg[j];
          bv[j] -= mom_b[j];
        }
      }
    }

    // test accuracy for this repeat
    int correct = 0;
    const auto& wv = w.value();
    const auto& bv = b.value();
    for (int i = 0; i < test.count(); ++i) {
      const float* r = test.row(i);
      int best = 0;
      float best_score = -1e30f;
      for (int c = 0; c < classes; ++c) {
        float s = bv[static_cast<size_t>(c)];
        for (int j = 0; j < d; ++j) s += wv[static_cast<size_t>(c) * d + j] * r[j];
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (best == test.labels[static_cast<size_t>(i)]) ++correct;
    }
    acc_sum += static_cast<double>(correct) / static_cast<double>(test.count());
  }
  return acc_sum / static_cast<double>(sched.repeats);
}

// ---------------------------------------------------------------------------
// learned policy
// ---------------------------------------------------------------------------

struct PolicyHistogram {
  struct Block {
    int width = 0;
    std::vector<double> probability;  // per-channel activation over the probe set
    int always_on = 0, data_dependent = 0, off = 0;
    double active_fraction = 0;
  };
  std::vector<Block> blocks;
  double overall_active_fraction = 0;
  double inference_flops_ratio = 0;
  double threshold_on = 0.99, threshold_off = 0.01;
};

inline PolicyHistogram export_policy(DualEncoder<float>& enc,
                                     const Dataset& probe, double threshold_on = 0.99,
                                     double threshold_off = 0.01,
                                     int batch_size = 256) {
  if (probe.size() == 0) throw ContractError("export_policy: empty probe set");
  int size = enc.cfg.input_size;
  FlopsModel fm = enc.flops_model();

  PolicyHistogram hist;
  hist.threshold_on = threshold_on;
  hist.threshold_off = threshold_off;
  hist.blocks.resize(enc.blocks.size());
  for (size_t l = 0; l < enc.blocks.size(); ++l) {
    hist.blocks[l].width = enc.blocks[l].out_channels;
    hist.blocks[l].probability.assign(static_cast<size_t>(enc.blocks[l].out_channels), 0.0);
  }

  unsigned long long ratio_num = 0, ratio_den = 0;
  for (size_t start = 0; start < probe.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(probe.size(), start + static_cast<size_t>(batch_size));
    std::vector<Image> views;
    for (size_t i = start; i < end; ++i)
      views.push_back(center_crop_resize(probe.images[i], size));
    auto x = images_to_batch(views);
    auto res = enc.forward(x, Path::gated, Mode::inference);
    auto exact = flops_ratio_exact(res.masks, fm);
    ratio_num += exact.num;
    ratio_den += exact.den;
    int nb = static_cast<int>(end - start);
    for (size_t l = 0; l < res.masks.size(); ++l) {
      const auto& mv = res.masks[l].mask.value();
      int c = hist.blocks[l].width;
      for (int i = 0; i < nb; ++i)
        for (int j = 0; j < c; ++j)
          hist.blocks[l].probability[static_cast<size_t>(j)] +=
              mv[static_cast<size_t>(i) * c + j] > 0.5f ? 1.0 : 0.0;
    }
  }

  double prob_sum = 0;
  long chan_total = 0;
  for (auto& blk : hist.blocks) {
    double frac = 0;
    for (auto& p : blk.probability) {
      p /= static_cast<double>(probe.size());
      frac += p;
      if (p >= threshold_on)
        ++blk.always_on;
      else if (p <= threshold_off)
        ++blk.off;
      else
        ++blk.data_dependent;
      prob_sum += p;
    }
    chan_total += blk.width;
    blk.active_fraction = frac / static_cast<double>(blk.width);
  }
  hist.overall_active_fraction = prob_sum / static_cast<double>(chan_total);
  hist.inference_flops_ratio =
      static_cast<double>(ratio_num) / static_cast<double>(ratio_den);
  return hist;
}

// hard-mask compute ratio over a dataset (inference preprocessing)
inline double inference_flops_ratio(DualEncoder<float>& enc, const Dataset& data,
                                    int batch_size = 256) {
  return export_policy(enc, data, 0.99, 0.01, batch_size).inference_flops_ratio;
}

// ---------------------------------------------------------------------------
// feature set binary format: n u32, dim u32, normalized u8, rows f32, labels u32
// ---------------------------------------------------------------------------

inline void write_featureset(const std::filesystem::path& path, const FeatureSet& fs) {
  namespace stdfs = std::filesystem;
  stdfs::path tmp = path;
  tmp += ".tmp";
  {
    detail::FilePtr f(std::fopen(tmp.string().c_str(), "wb"));
    if (!f) throw ConfigError("cannot write " + tmp.string());
    detail::write_u32(f.get(), static_cast<uint32_t>(fs.count()));
    detail::write_u32(f.get(), static_cast<uint32_t>(fs.dim));
    uint8_t norm = fs.normalized ? 1 : 0;
    detail::write_bytes(f.get(), &norm, 1);
    detail::write_bytes(f.get(), fs.rows.data(), fs.rows.size() * 4);
    for (int l : fs.labels) detail::write_u32(f.get(), static_cast<uint32_t>(l));
  }
  stdfs::rename(tmp, path);
}

inline FeatureSet read_featureset(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ConfigError("cannot open " + path.string());
  FeatureSet fs;
  uint32_t n = detail::read_u32(f.get());
  fs.dim = static_cast<int>(detail::read_u32(f.get()));
  uint8_t norm;
  detail::read_bytes(f.get(), &norm, 1);
  fs.normalized = norm != 0;
  fs.rows.resize(static_cast<size_t>(n) * fs.dim);
  detail::read_bytes(f.get(), fs.rows.data(), fs.rows.size() * 4);
  fs.labels.resize(n);
  for (auto& l : fs.labels) l = static_cast<int>(detail::read_u32(f.get()));
  return fs;
}

}  // namespace vdg
