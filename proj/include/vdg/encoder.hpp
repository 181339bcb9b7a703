#pragma once

// Weight-shared residual CNN with two forward paths: a dense path that runs
// every channel, and a gated path that masks conv1 outputs per block. The two
// paths share all convolution kernels but keep independent batch-norm
// statistics at every normalization site. Heads: per-path linear maps into a
// shared expander MLP (again with per-path batch norm).

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "vdg/batchnorm.hpp"
#include "vdg/budget.hpp"
#include "vdg/conv.hpp"
#include "vdg/gating.hpp"
#include "vdg/rng.hpp"
#include "vdg/tensor.hpp"

namespace vdg {

enum class Path { dense, gated };
enum class Mode { training, inference };

inline const char* path_name(Path p) { return p == Path::dense ? "dense" : "gated"; }

struct EncoderConfig {
  std::vector<int> stage_widths{64, 128, 256, 512};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  int input_size = 32;
  int proj_dim = 0;    // 0: feature_dim
  int expand_dim = 0;  // 0: 4 * feature_dim
  int gate_reduction = 4;

  int feature_dim() const { return stage_widths.back(); }
  int resolved_proj_dim() const { return proj_dim > 0 ? proj_dim : feature_dim(); }
  int resolved_expand_dim() const {
    return expand_dim > 0 ? expand_dim : 4 * feature_dim();
  }

  void validate() const {
    if (stage_widths.empty() || stage_widths.size() != blocks_per_stage.size())
      throw ConfigError("encoder: stage_widths and blocks_per_stage must align");
    int prev = 0;
    for (int w : stage_widths) {
      if (w <= 0 || w < prev)
        throw ConfigError("encoder: stage widths must be positive and non-decreasing");
      if (w % gate_reduction != 0)
        throw ConfigError("encoder: stage widths must be divisible by the gate reduction");
      prev = w;
    }
    for (int b : blocks_per_stage)
      if (b < 1) throw ConfigError("encoder: blocks_per_stage entries must be >= 1");
    if (input_size < 8) throw ConfigError("encoder: input_size too small");
    int min_spatial = input_size >> (static_cast<int>(stage_widths.size()) - 1);
    if (min_spatial < 1)
      throw ConfigError("encoder: too many stages for this input size");
  }
};

template <class T>
struct DualBatchNorm {
  BatchNormState<T> dense, gated;

  static DualBatchNorm make(int channels) {
    return {BatchNormState<T>::make(channels), BatchNormState<T>::make(channels)};
  }
  BatchNormState<T>& of(Path p) { return p == Path::dense ? dense : gated; }
};

template <class T>
struct LinearHead {
  TensorT<T> weight;  // [out, in]
  TensorT<T> bias;    // [out]

  static LinearHead make(int in, int out, RngStream& rng) {
    T bound = T(1) / std::sqrt(static_cast<T>(in));
    std::vector<T> w(static_cast<size_t>(out) * in), b(static_cast<size_t>(out));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : b) v = static_cast<T>(rng.uniform(-bound, bound));
    return {TensorT<T>::from({out, in}, std::move(w), true),
            TensorT<T>::from({out}, std::move(b), true)};
  }
};

template <class T>
struct BasicBlock {
  TensorT<T> conv1, conv2;           // storage shared by both paths
  DualBatchNorm<T> bn1, bn2;
  TensorT<T> downsample;             // 1x1 projection; undefined => identity
  int stride = 1;
  int in_channels = 0, out_channels = 0;
  int spatial_out = 0;
  GatingParams<T> gate;
};

template <class T>
struct DualEncoder {
  EncoderConfig cfg;
  GateSamplerConfig sampler;

  TensorT<T> stem;
  DualBatchNorm<T> stem_bn;
  std::vector<BasicBlock<T>> blocks;
  LinearHead<T> head_dense, head_gated;  // f_d and f_l, equal output dims
  LinearHead<T> expander_fc1, expander_fc2;
  DualBatchNorm<T> expander_bn;

  Mode mode = Mode::training;

  struct ForwardResult {
    TensorT<T> features;
    std::vector<GateMask<T>> masks;
  };

  static TensorT<T> conv_init(int c_out, int c_in, int k, RngStream& rng) {
    T std_dev = std::sqrt(T(2) / static_cast<T>(k * k * c_in));
    std::vector<T> w(static_cast<size_t>(c_out) * c_in * k * k);
    for (auto& v : w) v = static_cast<T>(rng.normal()) * std_dev;
    return TensorT<T>::from({c_out, c_in, k, k}, std::move(w), true);
  }

  static DualEncoder make(const EncoderConfig& config, uint64_t seed,
                          GateSamplerConfig sampler_cfg = {}) {
    config.validate();
    sampler_cfg.validate();
    RngStream rng(seed, 0xe0c0de);
    DualEncoder enc;
    enc.cfg = config;
    enc.sampler = sampler_cfg;

    int stem_width = config.stage_widths.front();
    enc.stem = conv_init(stem_width, 3, 3, rng);
    enc.stem_bn = DualBatchNorm<T>::make(stem_width);

    int c_prev = stem_width;
    int spatial = config.input_size;
    for (size_t stage = 0; stage < config.stage_widths.size(); ++stage) {
      int width = config.stage_widths[stage];
      for (int b = 0; b < config.blocks_per_stage[stage]; ++b) {
        BasicBlock<T> blk;
        blk.stride = (stage > 0 && b == 0) ? 2 : 1;
        blk.in_channels = c_prev;
        blk.out_channels = width;
        spatial = (blk.stride == 2) ? spatial / 2 : spatial;
        blk.spatial_out = spatial;
        blk.conv1 = conv_init(width, c_prev, 3, rng);
        blk.conv2 = conv_init(width, width, 3, rng);
        blk.bn1 = DualBatchNorm<T>::make(width);
        blk.bn2 = DualBatchNorm<T>::make(width);
        if (blk.stride != 1 || c_prev != width)
          blk.downsample = conv_init(width, c_prev, 1, rng);
        blk.gate = GatingParams<T>::make(c_prev, width, config.gate_reduction, rng);
        enc.blocks.push_back(std::move(blk));
        c_prev = width;
      }
    }

    int feat = config.feature_dim();
    int proj = config.resolved_proj_dim();
    int expand = config.resolved_expand_dim();
    enc.head_dense = LinearHead<T>::make(feat, proj, rng);
    enc.head_gated = LinearHead<T>::make(feat, proj, rng);
    enc.expander_fc1 = LinearHead<T>::make(proj, expand, rng);
    enc.expander_fc2 = LinearHead<T>::make(expand, expand, rng);
    enc.expander_bn = DualBatchNorm<T>::make(expand);
    return enc;
  }

  void set_mode(Mode m) {
    mode = m;
    bool training = (m == Mode::training);
    auto set = [&](DualBatchNorm<T>& dbn) {
      dbn.dense.training = training;
      dbn.gated.training = training;
    };
    set(stem_bn);
    for (auto& blk : blocks) {
      set(blk.bn1);
      set(blk.bn2);
      blk.gate.bn.training = training;
    }
    set(expander_bn);
  }

  // forced_masks (tests only): per gated block, empty = sample normally,
  // size c = broadcast over the batch, size n*c = explicit
  ForwardResult forward(const TensorT<T>& x, Path path, Mode m,
                        uint64_t rng_stream = 0, T tau = T(1),
                        const std::vector<std::vector<T>>* forced_masks = nullptr) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != cfg.input_size ||
        x.dim(3) != cfg.input_size)
      throw ConfigError("encoder: expected input [n,3," +
                        std::to_string(cfg.input_size) + "," +
                        std::to_string(cfg.input_size) + "], got " +
                        shape_str(x.shape()));
    if (m == Mode::training && path == Path::gated && !(tau > T(0)) && !forced_masks)
      throw ContractError("encoder: training-mode gated forward needs tau > 0");
    set_mode(m);
    int n = x.dim(0);

    ForwardResult res;
    auto h = relu(batch_norm(conv2d(x, stem, 1, 1), stem_bn.of(path)));
    for (size_t bi = 0; bi < blocks.size(); ++bi) {
      auto& blk = blocks[bi];
      auto out1 = conv2d(h, blk.conv1, blk.stride, 1);
      if (path == Path::gated) {
        GateMask<T> mask;
        const std::vector<T>* forced =
            (forced_masks && bi < forced_masks->size() && !(*forced_masks)[bi].empty())
                ? &(*forced_masks)[bi]
                : nullptr;
        if (forced) {
          std::vector<T> mv;
          if (static_cast<long>(forced->size()) == blk.out_channels) {
            mv.resize(static_cast<size_t>(n) * blk.out_channels);
            for (int i = 0; i < n; ++i)
              std::copy(forced->begin(), forced->end(),
                        mv.begin() + static_cast<size_t>(i) * blk.out_channels);
          } else if (static_cast<long>(forced->size()) ==
                     static_cast<long>(n) * blk.out_channels) {
            mv = *forced;
          } else {
            throw ContractError("encoder: forced mask size mismatch at block " +
                                std::to_string(bi));
          }
          mask.mask = TensorT<T>::from({n, blk.out_channels}, std::move(mv));
        } else {
          auto context = global_avg_pool(h);
          auto scores = gate_scores(context, blk.gate);
          mask = (m == Mode::training)
                     ? gumbel_mask(scores, tau, mix64(rng_stream, bi + 1), sampler)
                     : hard_mask(scores);
        }
        out1 = channel_scale(out1, mask.mask);
        res.masks.push_back(mask);
      }
      auto a1 = relu(batch_norm(out1, blk.bn1.of(path)));
      auto a2 = batch_norm(conv2d(a1, blk.conv2, 1, 1), blk.bn2.of(path));
      auto shortcut = blk.downsample.defined()
                          ? conv2d(h, blk.downsample, blk.stride, 0)
                          : h;
      h = relu(add(a2, shortcut));
    }
    res.features = global_avg_pool(h);
    return res;
  }

  // head + shared expander; path picks f_d/f_l and the expander BN statistics
  TensorT<T> project(const TensorT<T>& features, Path path) {
    auto& head = path == Path::dense ? head_dense : head_gated;
    auto z = linear(features, head.weight, head.bias);
    auto e = linear(z, expander_fc1.weight, expander_fc1.bias);
    e = relu(batch_norm(e, expander_bn.of(path)));
    return linear(e, expander_fc2.weight, expander_fc2.bias);
  }

  struct ParamRef {
    std::string name;
    TensorT<T> tensor;
    bool lars_scaled;  // false: plain SGD, no weight decay
  };

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    auto bn_params = [&](const std::string& prefix, DualBatchNorm<T>& dbn) {
      out.push_back({prefix + ".dense.gamma", dbn.dense.gamma, false});
      out.push_back({prefix + ".dense.beta", dbn.dense.beta, false});
      out.push_back({prefix + ".gated.gamma", dbn.gated.gamma, false});
      out.push_back({prefix + ".gated.beta", dbn.gated.beta, false});
    };
    out.push_back({"stem.conv", stem, true});
    bn_params("stem.bn", stem_bn);
    for (size_t i = 0; i < blocks.size(); ++i) {
      auto& blk = blocks[i];
      std::string p = "block" + std::to_string(i);
      out.push_back({p + ".conv1", blk.conv1, true});
      out.push_back({p + ".conv2", blk.conv2, true});
      bn_params(p + ".bn1", blk.bn1);
      bn_params(p + ".bn2", blk.bn2);
      if (blk.downsample.defined())
        out.push_back({p + ".downsample", blk.downsample, true});
      out.push_back({p + ".gate.w1", blk.gate.w1, false});
      out.push_back({p + ".gate.w2", blk.gate.w2, false});
      out.push_back({p + ".gate.bn.gamma", blk.gate.bn.gamma, false});
      out.push_back({p + ".gate.bn.beta", blk.gate.bn.beta, false});
    }
    auto head_params = [&](const std::string& prefix, LinearHead<T>& h) {
      out.push_back({prefix + ".weight", h.weight, true});
      out.push_back({prefix + ".bias", h.bias, false});
    };
    head_params("head.dense", head_dense);
    head_params("head.gated", head_gated);
    head_params("expander.fc1", expander_fc1);
    bn_params("expander.bn", expander_bn);
    head_params("expander.fc2", expander_fc2);
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    auto bn_buffers = [&](const std::string& prefix, BatchNormState<T>& bn) {
      out.push_back({prefix + ".running_mean", &bn.running_mean});
      out.push_back({prefix + ".running_var", &bn.running_var});
    };
    auto dual = [&](const std::string& prefix, DualBatchNorm<T>& dbn) {
      bn_buffers(prefix + ".dense", dbn.dense);
      bn_buffers(prefix + ".gated", dbn.gated);
    };
    dual("stem.bn", stem_bn);
    for (size_t i = 0; i < blocks.size(); ++i) {
      std::string p = "block" + std::to_string(i);
      dual(p + ".bn1", blocks[i].bn1);
      dual(p + ".bn2", blocks[i].bn2);
      bn_buffers(p + ".gate.bn", blocks[i].gate.bn);
    }
    dual("expander.bn", expander_bn);
    return out;
  }

  // conv-kernel checksum as observed from one path; shared storage means the
  // two paths must always agree
  uint64_t kernel_checksum(Path) const {
    uint64_t h = 1469598103934665603ull;
    auto feed = [&](const TensorT<T>& t) {
      for (const T& v : t.value()) {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        h = (h ^ bits) * 1099511628211ull;
      }
    };
    feed(stem);
    for (const auto& blk : blocks) {
      feed(blk.conv1);
      feed(blk.conv2);
      if (blk.downsample.defined()) feed(blk.downsample);
    }
    return h;
  }

  FlopsModel flops_model() const {
    FlopsModel m;
    for (const auto& blk : blocks) {
      BlockFlops f;
      f.conv1 = conv_macs(3, blk.in_channels, blk.out_channels, blk.spatial_out,
                          blk.spatial_out);
      f.conv2 = conv_macs(3, blk.out_channels, blk.out_channels, blk.spatial_out,
                          blk.spatial_out);
      f.gate = gate_macs(blk.in_channels, blk.gate.reduction, blk.out_channels);
      f.channels = blk.out_channels;
      m.blocks.push_back(f);
    }
    return m;
  }

  // parameter count of the single-path backbone (one BN set, no gates)
  long backbone_param_count() const {
    long n = stem.numel() + 2L * cfg.stage_widths.front();
    for (const auto& blk : blocks) {
      n += blk.conv1.numel() + blk.conv2.numel();
      n += 2L * blk.out_channels * 2;  // bn1 + bn2, gamma and beta each
      if (blk.downsample.defined()) n += blk.downsample.numel();
    }
    return n;
  }

  long gate_param_count() const {
    long n = 0;
    for (const auto& blk : blocks)
      n += blk.gate.w1.numel() + blk.gate.w2.numel() +
           2L * blk.gate.hidden_width();
    return n;
  }
};

}  // namespace vdg
