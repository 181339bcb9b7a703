#pragma once

// Checkpoint container. Layout (little-endian):
//   magic "VDG1"
//   repeated records: name_len u32, name bytes, dtype u8 (0 = f32), rank u8,
//                     dims u32 x rank, payload raw f32
//   sentinel record with name_len == 0
//   trailer: epoch u32, rng_state u64, config_len u32, config text
// Records cover parameters, batch-norm running statistics and optimizer
// momenta; a round trip restores them bit for bit.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vdg/config.hpp"
#include "vdg/encoder.hpp"
#include "vdg/optim.hpp"

namespace vdg {

struct CheckpointData {
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
  uint32_t epoch = 0;
  uint64_t rng_state = 0;
  std::string config_text;
};

namespace detail {

inline void write_bytes(std::FILE* f, const void* p, size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw NumericError("checkpoint: short write");
}

inline void read_bytes(std::FILE* f, void* p, size_t n) {
  if (std::fread(p, 1, n, f) != n) throw ConfigError("checkpoint: truncated file");
}

inline void write_u32(std::FILE* f, uint32_t v) { write_bytes(f, &v, 4); }
inline void write_u64(std::FILE* f, uint64_t v) { write_bytes(f, &v, 8); }
inline uint32_t read_u32(std::FILE* f) {
  uint32_t v;
  read_bytes(f, &v, 4);
  return v;
}
inline uint64_t read_u64(std::FILE* f) {
  uint64_t v;
  read_bytes(f, &v, 8);
  return v;
}

}  // namespace detail

inline void write_checkpoint_file(const std::filesystem::path& path,
                                  const CheckpointData& data) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    detail::FilePtr f(std::fopen(tmp.string().c_str(), "wb"));
    if (!f) throw ConfigError("checkpoint: cannot write " + tmp.string());
    detail::write_bytes(f.get(), "VDG1", 4);
    for (const auto& [name, entry] : data.tensors) {
      const auto& [shape, payload] = entry;
      detail::write_u32(f.get(), static_cast<uint32_t>(name.size()));
      detail::write_bytes(f.get(), name.data(), name.size());
      uint8_t dtype = 0, rank = static_cast<uint8_t>(shape.size());
      detail::write_bytes(f.get(), &dtype, 1);
      detail::write_bytes(f.get(), &rank, 1);
      for (int d : shape) detail::write_u32(f.get(), static_cast<uint32_t>(d));
      detail::write_bytes(f.get(), payload.data(), payload.size() * 4);
    }
    detail::write_u32(f.get(), 0);  // sentinel
    detail::write_u32(f.get(), data.epoch);
    detail::write_u64(f.get(), data.rng_state);
    detail::write_u32(f.get(), static_cast<uint32_t>(data.config_text.size()));
    detail::write_bytes(f.get(), data.config_text.data(), data.config_text.size());
  }
  fs::rename(tmp, path);
}

inline CheckpointData read_checkpoint_file(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw ConfigError("checkpoint: cannot open " + path.string());
  char magic[4];
  detail::read_bytes(f.get(), magic, 4);
  if (std::memcmp(magic, "VDG1", 4) != 0)
    throw ConfigError("checkpoint: bad magic in " + path.string());
  CheckpointData data;
  for (;;) {
    uint32_t name_len = detail::read_u32(f.get());
    if (name_len == 0) break;
    std::string name(name_len, '\0');
    detail::read_bytes(f.get(), name.data(), name_len);
    uint8_t dtype, rank;
    detail::read_bytes(f.get(), &dtype, 1);
    detail::read_bytes(f.get(), &rank, 1);
    if (dtype != 0) throw ConfigError("checkpoint: unknown dtype code");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(f.get()));
    std::vector<float> payload(static_cast<size_t>(numel_of(shape)));
    detail::read_bytes(f.get(), payload.data(), payload.size() * 4);
    data.tensors[name] = {std::move(shape), std::move(payload)};
  }
  data.epoch = detail::read_u32(f.get());
  data.rng_state = detail::read_u64(f.get());
  uint32_t cfg_len = detail::read_u32(f.get());
  data.config_text.resize(cfg_len);
  detail::read_bytes(f.get(), data.config_text.data(), cfg_len);
  return data;
}

// ---------------------------------------------------------------------------
// model <-> checkpoint
// ---------------------------------------------------------------------------

inline CheckpointData snapshot_model(DualEncoder<float>& enc,
                                     LarsOptimizer<float>* opt,
                                     uint32_t epoch, uint64_t rng_state,
                                     const std::string& config_text) {
  CheckpointData data;
  auto params = enc.parameters();
  for (auto& p : params)
    data.tensors[p.name] = {p.tensor.shape(), p.tensor.value()};
  for (auto& [name, buf] : enc.buffers())
    data.tensors[name] = {Shape{static_cast<int>(buf->size())}, *buf};
  if (opt && !opt->momenta().empty()) {
    auto& mom = opt->momenta();
    if (mom.size() != params.size())
      throw ContractError("checkpoint: momenta do not match the parameter list");
    for (size_t i = 0; i < params.size(); ++i)
      data.tensors["momentum/" + params[i].name] = {params[i].tensor.shape(), mom[i]};
  }
  data.epoch = epoch;
  data.rng_state = rng_state;
  data.config_text = config_text;
  return data;
}

inline void restore_model(DualEncoder<float>& enc, LarsOptimizer<float>* opt,
                          const CheckpointData& data) {
  auto params = enc.parameters();
  for (auto& p : params) {
    auto it = data.tensors.find(p.name);
    if (it == data.tensors.end())
      throw ConfigError("checkpoint: missing tensor " + p.name);
    if (it->second.first != p.tensor.shape())
      throw ConfigError("checkpoint: shape mismatch for " + p.name);
    p.tensor.value() = it->second.second;
  }
  for (auto& [name, buf] : enc.buffers()) {
    auto it = data.tensors.find(name);
    if (it == data.tensors.end())
      throw ConfigError("checkpoint: missing buffer " + name);
    if (it->second.second.size() != buf->size())
      throw ConfigError("checkpoint: size mismatch for " + name);
    *buf = it->second.second;
  }
  if (opt) {
    auto& mom = opt->momenta();
    mom.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = data.tensors.find("momentum/" + params[i].name);
      mom[i] = it != data.tensors.end()
                   ? it->second.second
                   : std::vector<float>(params[i].tensor.value().size(), 0.0f);
    }
  }
}

// checkpoints are self-describing: the trailer carries the run configuration
inline DualEncoder<float> load_encoder_from_checkpoint(
    const std::filesystem::path& path, RunConfig* out_config = nullptr) {
  CheckpointData data = read_checkpoint_file(path);
  RunConfig cfg = RunConfig::parse(data.config_text);
  auto enc = DualEncoder<float>::make(cfg.encoder_config(), cfg.seed,
                                      cfg.sampler_config());
  restore_model(enc, nullptr, data);
  if (out_config) *out_config = cfg;
  return enc;
}

}  // namespace vdg
