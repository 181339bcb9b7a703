#pragma once

// Flat key=value run configuration. Every tunable of the pipeline lives here;
// unknown keys are rejected so typos fail loudly. serialize() emits a
// canonical snapshot that parses back to the same configuration.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vdg/augment.hpp"
#include "vdg/budget.hpp"
#include "vdg/encoder.hpp"
#include "vdg/objective.hpp"
#include "vdg/optim.hpp"

namespace vdg {

struct RunConfig {
  // training
  int epochs = 500;
  int batch_size = 512;
  double base_lr = 0.3;
  int warmup_epochs = 10;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double lars_trust = 0.001;
  uint64_t seed = 0;
  double eta_override = -1.0;  // >= 0 replaces the invariance weight
  double t_d = 0.5;
  double lambda = 5.0;
  int checkpoint_every = 10;
  std::string data_dir;
  std::string eval_train_dir;  // optional: labeled data for the end-of-run report
  std::string eval_test_dir;
  std::string branch_mode = "dual";  // dual | gated_only

  // embedding loss
  std::string vicreg_preset = "paper";  // paper | reference
  double mu = 25.0;
  double nu = 25.0;
  double eta = 1.0;
  double gamma = 1.0;
  double vicreg_eps = 1e-4;

  // augmentation
  double crop_min = 0.2, crop_max = 1.0;
  int output_size = 32;
  double p_flip = 0.5, p_jitter = 0.8;
  double jitter_brightness = 0.4, jitter_contrast = 0.4;
  double jitter_saturation = 0.2, jitter_hue = 0.1;
  double p_gray = 0.2, p_solarize = 0.1;
  uint64_t aug_seed = 0;  // 0: derive from seed
  std::string input_normalization = "none";

  // encoder
  std::vector<int> stage_widths{64, 128, 256, 512};
  std::vector<int> blocks_per_stage{2, 2, 2, 2};
  int input_size = 32;
  int proj_dim = 0;
  int expand_dim = 0;
  int gate_reduction = 4;

  // gate sampler
  double tau_start = 5.0, tau_end = 0.1, anneal_fraction = 0.8;
  bool hard_forward = true;

  // ---- derived views ----
  AugmentConfig augment_config() const {
    AugmentConfig a;
    a.crop_min = static_cast<float>(crop_min);
    a.crop_max = static_cast<float>(crop_max);
    a.output_size = output_size;
    a.p_flip = static_cast<float>(p_flip);
    a.p_jitter = static_cast<float>(p_jitter);
    a.jitter_brightness = static_cast<float>(jitter_brightness);
    a.jitter_contrast = static_cast<float>(jitter_contrast);
    a.jitter_saturation = static_cast<float>(jitter_saturation);
    a.jitter_hue = static_cast<float>(jitter_hue);
    a.p_gray = static_cast<float>(p_gray);
    a.p_solarize = static_cast<float>(p_solarize);
    a.seed = aug_seed != 0 ? aug_seed : seed;
    return a;
  }

  EncoderConfig encoder_config() const {
    EncoderConfig e;
    e.stage_widths = stage_widths;
    e.blocks_per_stage = blocks_per_stage;
    e.input_size = input_size;
    e.proj_dim = proj_dim;
    e.expand_dim = expand_dim;
    e.gate_reduction = gate_reduction;
    return e;
  }

  VICRegConfig vicreg_config() const {
    VICRegConfig v;
    v.mu = static_cast<float>(mu);
    v.nu = static_cast<float>(nu);
    v.eta = static_cast<float>(eta_override >= 0.0 ? eta_override : eta);
    v.gamma = static_cast<float>(gamma);
    v.eps = static_cast<float>(vicreg_eps);
    return v;
  }

  BudgetConfig budget_config() const {
    BudgetConfig b;
    b.t_d = static_cast<float>(t_d);
    b.lambda = static_cast<float>(lambda);
    return b;
  }

  GateSamplerConfig sampler_config() const {
    GateSamplerConfig s;
    s.tau_start = static_cast<float>(tau_start);
    s.tau_end = static_cast<float>(tau_end);
    s.anneal_fraction = static_cast<float>(anneal_fraction);
    s.hard_forward = hard_forward;
    return s;
  }

  OptimConfig optim_config() const {
    OptimConfig o;
    o.base_lr = base_lr;
    o.weight_decay = weight_decay;
    o.momentum = momentum;
    o.lars_trust = lars_trust;
    return o;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("config: batch_size must be >= 2");
    if (warmup_epochs < 0 || warmup_epochs >= epochs)
      throw ConfigError("config: warmup_epochs must satisfy 0 <= warmup < epochs");
    if (checkpoint_every < 1) throw ConfigError("config: checkpoint_every must be >= 1");
    if (branch_mode != "dual" && branch_mode != "gated_only")
      throw ConfigError("config: branch_mode must be dual or gated_only");
    if (vicreg_preset != "paper" && vicreg_preset != "reference")
      throw ConfigError("config: vicreg_preset must be paper or reference");
    if (input_normalization != "none")
      throw ConfigError("config: input_normalization supports only 'none'");
    augment_config().validate();
    encoder_config().validate();
    vicreg_config().validate();
    budget_config().validate();
    sampler_config().validate();
  }

  static RunConfig parse(const std::string& text);
  static RunConfig parse_file(const std::string& path);
  std::string serialize() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("config: bad integer list for key '" + key + "'");
    }
  }
  if (out.empty()) throw ConfigError("config: empty list for key '" + key + "'");
  return out;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline RunConfig RunConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string val = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
    if (kv.count(key))
      throw ConfigError("config: duplicate key '" + key + "'");
    kv[key] = val;
  }

  RunConfig cfg;
  // the preset seeds the loss weights; explicit keys below still override
  if (auto it = kv.find("vicreg_preset"); it != kv.end()) {
    cfg.vicreg_preset = it->second;
    if (cfg.vicreg_preset == "reference") {
      cfg.mu = 25.0;
      cfg.nu = 1.0;
      cfg.eta = 25.0;
    } else if (cfg.vicreg_preset != "paper") {
      throw ConfigError("config: vicreg_preset must be paper or reference");
    }
    kv.erase(it);
  }

  auto take_int = [&](const char* key, int& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        out = std::stoi(it->second);
      } catch (const std::exception&) {
        throw ConfigError(std::string("config: bad integer for key '") + key + "'");
      }
      kv.erase(it);
    }
  };
  auto take_u64 = [&](const char* key, uint64_t& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        out = std::stoull(it->second);
      } catch (const std::exception&) {
        throw ConfigError(std::string("config: bad integer for key '") + key + "'");
      }
      kv.erase(it);
    }
  };
  auto take_double = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      try {
        out = std::stod(it->second);
      } catch (const std::exception&) {
        throw ConfigError(std::string("config: bad number for key '") + key + "'");
      }
      kv.erase(it);
    }
  };
  auto take_string = [&](const char* key, std::string& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = it->second;
      kv.erase(it);
    }
  };
  auto take_bool = [&](const char* key, bool& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      if (it->second == "true" || it->second == "1")
        out = true;
      else if (it->second == "false" || it->second == "0")
        out = false;
      else
        throw ConfigError(std::string("config: bad boolean for key '") + key + "'");
      kv.erase(it);
    }
  };
  auto take_list = [&](const char* key, std::vector<int>& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      out = detail::parse_int_list(it->second, key);
      kv.erase(it);
    }
  };

  take_int("epochs", cfg.epochs);
  take_int("batch_size", cfg.batch_size);
  take_double("base_lr", cfg.base_lr);
  take_int("warmup_epochs", cfg.warmup_epochs);
  take_double("weight_decay", cfg.weight_decay);
  take_double("momentum", cfg.momentum);
  take_double("lars_trust", cfg.lars_trust);
  take_u64("seed", cfg.seed);
  take_double("eta_override", cfg.eta_override);
  take_double("t_d", cfg.t_d);
  take_double("lambda", cfg.lambda);
  take_int("checkpoint_every", cfg.checkpoint_every);
  take_string("data_dir", cfg.data_dir);
  take_string("eval_train_dir", cfg.eval_train_dir);
  take_string("eval_test_dir", cfg.eval_test_dir);
  take_string("branch_mode", cfg.branch_mode);
  take_double("mu", cfg.mu);
  take_double("nu", cfg.nu);
  take_double("eta", cfg.eta);
  take_double("gamma", cfg.gamma);
  take_double("vicreg_eps", cfg.vicreg_eps);
  take_double("crop_min", cfg.crop_min);
  take_double("crop_max", cfg.crop_max);
  take_int("output_size", cfg.output_size);
  take_double("p_flip", cfg.p_flip);
  take_double("p_jitter", cfg.p_jitter);
  take_double("jitter_brightness", cfg.jitter_brightness);
  take_double("jitter_contrast", cfg.jitter_contrast);
  take_double("jitter_saturation", cfg.jitter_saturation);
  take_double("jitter_hue", cfg.jitter_hue);
  take_double("p_gray", cfg.p_gray);
  take_double("p_solarize", cfg.p_solarize);
  take_u64("aug_seed", cfg.aug_seed);
  take_string("input_normalization", cfg.input_normalization);
  take_list("stage_widths", cfg.stage_widths);
  take_list("blocks_per_stage", cfg.blocks_per_stage);
  take_int("input_size", cfg.input_size);
  take_int("proj_dim", cfg.proj_dim);
  take_int("expand_dim", cfg.expand_dim);
  take_int("gate_reduction", cfg.gate_reduction);
  take_double("tau_start", cfg.tau_start);
  take_double("tau_end", cfg.tau_end);
  take_double("anneal_fraction", cfg.anneal_fraction);
  take_bool("hard_forward", cfg.hard_forward);

  if (!kv.empty())
    throw ConfigError("config: unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

inline RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

inline std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "epochs=" << epochs << "\n";
  out << "batch_size=" << batch_size << "\n";
  out << "base_lr=" << detail::format_double(base_lr) << "\n";
  out << "warmup_epochs=" << warmup_epochs << "\n";
  out << "weight_decay=" << detail::format_double(weight_decay) << "\n";
  out << "momentum=" << detail::format_double(momentum) << "\n";
  out << "lars_trust=" << detail::format_double(lars_trust) << "\n";
  out << "seed=" << seed << "\n";
  out << "eta_override=" << detail::format_double(eta_override) << "\n";
  out << "t_d=" << detail::format_double(t_d) << "\n";
  out << "lambda=" << detail::format_double(lambda) << "\n";
  out << "checkpoint_every=" << checkpoint_every << "\n";
  out << "data_dir=" << data_dir << "\n";
  out << "eval_train_dir=" << eval_train_dir << "\n";
  out << "eval_test_dir=" << eval_test_dir << "\n";
  out << "branch_mode=" << branch_mode << "\n";
  out << "vicreg_preset=" << vicreg_preset << "\n";
  out << "mu=" << detail::format_double(mu) << "\n";
  out << "nu=" << detail::format_double(nu) << "\n";
  out << "eta=" << detail::format_double(eta) << "\n";
  out << "gamma=" << detail::format_double(gamma) << "\n";
  out << "vicreg_eps=" << detail::format_double(vicreg_eps) << "\n";
  out << "crop_min=" << detail::format_double(crop_min) << "\n";
  out << "crop_max=" << detail::format_double(crop_max) << "\n";
  out << "output_size=" << output_size << "\n";
  out << "p_flip=" << detail::format_double(p_flip) << "\n";
  out << "p_jitter=" << detail::format_double(p_jitter) << "\n";
  out << "jitter_brightness=" << detail::format_double(jitter_brightness) << "\n";
  out << "jitter_contrast=" << detail::format_double(jitter_contrast) << "\n";
  out << "jitter_saturation=" << detail::format_double(jitter_saturation) << "\n";
  out << "jitter_hue=" << detail::format_double(jitter_hue) << "\n";
  out << "p_gray=" << detail::format_double(p_gray) << "\n";
  out << "p_solarize=" << detail::format_double(p_solarize) << "\n";
  out << "aug_seed=" << aug_seed << "\n";
  out << "input_normalization=" << input_normalization << "\n";
  out << "stage_widths=" << detail::format_int_list(stage_widths) << "\n";
  out << "blocks_per_stage=" << detail::format_int_list(blocks_per_stage) << "\n";
  out << "input_size=" << input_size << "\n";
  out << "proj_dim=" << proj_dim << "\n";
  out << "expand_dim=" << expand_dim << "\n";
  out << "gate_reduction=" << gate_reduction << "\n";
  out << "tau_start=" << detail::format_double(tau_start) << "\n";
  out << "tau_end=" << detail::format_double(tau_end) << "\n";
  out << "anneal_fraction=" << detail::format_double(anneal_fraction) << "\n";
  out << "hard_forward=" << (hard_forward ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace vdg
