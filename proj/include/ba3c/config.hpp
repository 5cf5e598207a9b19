#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ba3c/agent.hpp"
#include "ba3c/conv.hpp"
#include "ba3c/optim.hpp"

namespace ba3c {

struct PipelineConfig {
  std::size_t n_envs = 16;
  std::size_t train_queue_capacity = 3;
  std::size_t predict_min_batch = 8;
  double predict_timeout_ms = 2.0;
  std::size_t delay_k = 0;
  double watchdog_s = 30.0;
};

/// Full run configuration, one flat dotted key per field. Defaults are the
/// published table values; the desk profile rescales them for the built-in
/// toy environments.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";

  std::string env_name = "catch";
  std::size_t env_grid = 0;       // 0 = environment default
  std::size_t env_max_steps = 0;  // 0 = environment default

  std::string net_arch = "toy";

  AgentConfig agent;

  AdamConfig optim;

  std::size_t batch_size = 128;
  std::size_t frame_history = 4;
  std::size_t image_h = 84, image_w = 84;
  std::size_t total_frames = 200000;
  std::size_t eval_interval = 100;  // train steps between evaluation rounds
  std::size_t eval_games = 10;
  double stop_on_score = 0.0;  // stop early when mean_score_50 reaches this; 0 = off
  std::string conv_impl = "optimized";

  PipelineConfig pipeline;

  ConvImpl conv_impl_enum() const {
    if (conv_impl == "naive") return ConvImpl::NAIVE;
    if (conv_impl == "optimized") return ConvImpl::OPTIMIZED;
    throw std::invalid_argument("config: train.conv_impl must be naive|optimized");
  }

  void validate() const {
    if (batch_size < 1 || frame_history < 1 || agent.local_t_max < 1)
      throw std::invalid_argument("config: counts must be >= 1");
    if (agent.gamma <= 0.0 || agent.gamma > 1.0)
      throw std::invalid_argument("config: agent.gamma must be in (0,1]");
    if (pipeline.n_envs < 1 || pipeline.train_queue_capacity < 1)
      throw std::invalid_argument("config: pipeline sizes must be >= 1");
    if (pipeline.predict_min_batch > pipeline.n_envs)
      throw std::invalid_argument("config: predict_min_batch must be <= n_envs");
    conv_impl_enum();
  }
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto add = [&f](std::string key, auto setter, auto getter) {
      f.push_back({std::move(key), setter, getter});
    };
#define BA3C_FIELD(KEY, EXPR, TYPE)                                                       \
  add(KEY, [](RunConfig& c, const nlohmann::json& v) { c.EXPR = v.get<TYPE>(); },        \
      [](const RunConfig& c) { return nlohmann::json(c.EXPR); })
    BA3C_FIELD("seed", seed, std::uint64_t);
    BA3C_FIELD("output_dir", output_dir, std::string);
    BA3C_FIELD("env.name", env_name, std::string);
    BA3C_FIELD("env.grid", env_grid, std::size_t);
    BA3C_FIELD("env.max_steps", env_max_steps, std::size_t);
    BA3C_FIELD("net.arch", net_arch, std::string);
    BA3C_FIELD("agent.gamma", agent.gamma, double);
    BA3C_FIELD("agent.local_t_max", agent.local_t_max, std::size_t);
    BA3C_FIELD("agent.entropy_coef", agent.entropy_coef, double);
    BA3C_FIELD("agent.value_coef", agent.value_coef, double);
    BA3C_FIELD("optim.learning_rate", optim.learning_rate, double);
    BA3C_FIELD("optim.beta1", optim.beta1, double);
    BA3C_FIELD("optim.beta2", optim.beta2, double);
    BA3C_FIELD("optim.epsilon", optim.epsilon, double);
    BA3C_FIELD("optim.grad_clip", optim.grad_clip, double);
    BA3C_FIELD("train.batch_size", batch_size, std::size_t);
    BA3C_FIELD("train.frame_history", frame_history, std::size_t);
    BA3C_FIELD("train.image_h", image_h, std::size_t);
    BA3C_FIELD("train.image_w", image_w, std::size_t);
    BA3C_FIELD("train.total_frames", total_frames, std::size_t);
    BA3C_FIELD("train.eval_interval", eval_interval, std::size_t);
    BA3C_FIELD("train.eval_games", eval_games, std::size_t);
    BA3C_FIELD("train.stop_on_score", stop_on_score, double);
    BA3C_FIELD("train.conv_impl", conv_impl, std::string);
    BA3C_FIELD("pipeline.n_envs", pipeline.n_envs, std::size_t);
    BA3C_FIELD("pipeline.train_queue_capacity", pipeline.train_queue_capacity, std::size_t);
    BA3C_FIELD("pipeline.predict_min_batch", pipeline.predict_min_batch, std::size_t);
    BA3C_FIELD("pipeline.predict_timeout_ms", pipeline.predict_timeout_ms, double);
    BA3C_FIELD("pipeline.delay_k", pipeline.delay_k, std::size_t);
    BA3C_FIELD("pipeline.watchdog_s", pipeline.watchdog_s, double);
#undef BA3C_FIELD
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Applies a flat {dotted key: value} object. Unknown keys are an error.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    bool matched = false;
    for (const auto& f : detail::config_fields()) {
      if (f.key == key) {
        try {
          f.set(cfg, value);
        } catch (const nlohmann::json::exception& e) {
          throw std::invalid_argument("config: bad value for " + key + ": " + e.what());
        }
        matched = true;
        break;
      }
    }
    if (!matched) throw std::invalid_argument("config: unknown key " + key);
  }
}

inline nlohmann::ordered_json config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(cfg);
  return j;
}

/// Parses "key=value" strings (CLI overrides); values are parsed as JSON
/// when possible, else taken as strings.
inline void apply_config_override(RunConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  apply_config_json(cfg, nlohmann::json{{key, value}});
}

/// desk: toy-env scale (batch 32, 24x24 input, small net).
/// paper: the published table defaults verbatim.
inline void apply_profile(RunConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.batch_size = 32;
    cfg.image_h = cfg.image_w = 24;
    cfg.net_arch = "toy";
  } else if (profile == "paper") {
    cfg.optim.learning_rate = 0.001;
    cfg.batch_size = 128;
    cfg.frame_history = 4;
    cfg.agent.local_t_max = 5;
    cfg.image_h = cfg.image_w = 84;
    cfg.agent.gamma = 0.99;
    cfg.net_arch = "paper";
  } else {
    throw std::invalid_argument("unknown profile: " + profile);
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  nlohmann::json j;
  is >> j;
  RunConfig cfg;
  apply_profile(cfg, "desk");
  apply_config_json(cfg, j);
  return cfg;
}

}  // namespace ba3c
