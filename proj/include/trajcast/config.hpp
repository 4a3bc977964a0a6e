// Copyright 2026 trajcast contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <string>

#include "json.hpp"
#include "trajcast/common.hpp"
#include "trajcast/scene_gen.hpp"

namespace trajcast {

/// Architecture knobs; everything here changes parameter shapes or forward
/// semantics and therefore feeds the config hash checked on checkpoint load.
struct ModelConfig {
  int embed_dim = 64;
  int num_heads = 4;
  int t_sub = 10;
  int num_modes = 6;  // K
  int rounds = 2;
  double radius = 50.0;
  double dropout = 0.1;
  int t_hist = 50;
  int t_fut = 60;
  bool line_attention = true;
  bool overprediction = true;
  bool refinement = true;
  int fourier_bands = 64;

  int history_steps() const { return t_hist / t_sub; }
  int future_steps() const { return t_fut / t_sub; }

  void validate() const {
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw ConfigError("model: embed_dim must be a positive multiple of num_heads");
    if (t_sub < 2) throw ConfigError("model: t_sub must be at least 2");
    if (t_hist % t_sub != 0) throw ConfigError("model: t_hist must be divisible by t_sub");
    if (t_fut % t_sub != 0) throw ConfigError("model: t_fut must be divisible by t_sub");
    if (num_modes < 1) throw ConfigError("model: num_modes must be at least 1");
    if (rounds < 1) throw ConfigError("model: rounds must be at least 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
    if (fourier_bands < 1) throw ConfigError("model: fourier_bands must be positive");
    if (radius <= 0.0) throw ConfigError("model: radius must be positive");
  }
};

enum class WinnerMode { kPerStep, kFullHorizon };

inline const char* to_string(WinnerMode m) {
  return m == WinnerMode::kPerStep ? "per_step" : "full_horizon";
}

template <>
inline std::optional<WinnerMode> enum_from_string<WinnerMode>(const std::string& s) {
  if (s == "per_step") return WinnerMode::kPerStep;
  if (s == "full_horizon") return WinnerMode::kFullHorizon;
  return std::nullopt;
}

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-4;
  int epochs = 30;
  int batch = 4;  // virtual batch via gradient accumulation
  int max_steps = 0;  // optimizer step cap; 0 = no cap
  WinnerMode winner_mode = WinnerMode::kPerStep;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
    if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
    if (batch < 1) throw ConfigError("train: batch must be at least 1");
  }
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  int jobs = 1;
  ModelConfig model;
  TrainConfig train;
  GeneratorConfig generator;

  /// Keeps the generator's time axis in lockstep with the model's.
  void resolve() {
    generator.t_hist = model.t_hist;
    generator.t_fut = model.t_fut;
    model.validate();
    train.validate();
    generator.validate();
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
  }
};

inline void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg = RunConfig{};
  } else if (name == "tiny") {
    cfg = RunConfig{};
    cfg.model.embed_dim = 32;
    cfg.model.num_heads = 4;
    cfg.model.t_sub = 5;
    cfg.model.num_modes = 2;
    cfg.model.t_hist = 10;
    cfg.model.t_fut = 20;
    cfg.train.epochs = 200;
    cfg.train.batch = 1;
    cfg.train.max_steps = 2000;
    cfg.generator.agents_min = 2;
    cfg.generator.agents_max = 3;
    cfg.generator.speed_min = 2.5;
    cfg.generator.speed_max = 7.5;
    cfg.generator.parked_prob = 0.0;
    cfg.generator.partial_history_prob = 0.0;
  } else if (name == "paper") {
    cfg = RunConfig{};
    cfg.model.embed_dim = 128;
    cfg.model.num_heads = 8;
    cfg.train.epochs = 60;
    cfg.train.batch = 64;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  cfg.preset = name;
}

// ---- JSON round trip ---------------------------------------------------------

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& m) {
  nlohmann::ordered_json j;
  j["embed_dim"] = m.embed_dim;
  j["num_heads"] = m.num_heads;
  j["t_sub"] = m.t_sub;
  j["num_modes"] = m.num_modes;
  j["rounds"] = m.rounds;
  j["radius"] = m.radius;
  j["dropout"] = m.dropout;
  j["t_hist"] = m.t_hist;
  j["t_fut"] = m.t_fut;
  j["line_attention"] = m.line_attention;
  j["overprediction"] = m.overprediction;
  j["refinement"] = m.refinement;
  j["fourier_bands"] = m.fourier_bands;
  return j;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["preset"] = cfg.preset;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["model"] = model_config_to_json(cfg.model);
  nlohmann::ordered_json jt;
  jt["lr"] = cfg.train.lr;
  jt["weight_decay"] = cfg.train.weight_decay;
  jt["epochs"] = cfg.train.epochs;
  jt["batch"] = cfg.train.batch;
  jt["max_steps"] = cfg.train.max_steps;
  jt["winner_mode"] = to_string(cfg.train.winner_mode);
  j["train"] = jt;
  nlohmann::ordered_json jg;
  jg["topology"] = to_string(cfg.generator.topology);
  jg["agents_min"] = cfg.generator.agents_min;
  jg["agents_max"] = cfg.generator.agents_max;
  jg["speed_min"] = cfg.generator.speed_min;
  jg["speed_max"] = cfg.generator.speed_max;
  jg["parked_prob"] = cfg.generator.parked_prob;
  jg["partial_history_prob"] = cfg.generator.partial_history_prob;
  j["generator"] = jg;
  return j;
}

template <class T>
void maybe_get(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void run_config_from_json(const nlohmann::ordered_json& j, RunConfig& cfg) {
  try {
    std::string preset = cfg.preset;
    maybe_get(j, "preset", preset);
    if (preset != cfg.preset) apply_preset(cfg, preset);
    maybe_get(j, "seed", cfg.seed);
    maybe_get(j, "jobs", cfg.jobs);
    if (j.contains("model")) {
      const auto& jm = j.at("model");
      maybe_get(jm, "embed_dim", cfg.model.embed_dim);
      maybe_get(jm, "num_heads", cfg.model.num_heads);
      maybe_get(jm, "t_sub", cfg.model.t_sub);
      maybe_get(jm, "num_modes", cfg.model.num_modes);
      maybe_get(jm, "rounds", cfg.model.rounds);
      maybe_get(jm, "radius", cfg.model.radius);
      maybe_get(jm, "dropout", cfg.model.dropout);
      maybe_get(jm, "t_hist", cfg.model.t_hist);
      maybe_get(jm, "t_fut", cfg.model.t_fut);
      maybe_get(jm, "line_attention", cfg.model.line_attention);
      maybe_get(jm, "overprediction", cfg.model.overprediction);
      maybe_get(jm, "refinement", cfg.model.refinement);
      maybe_get(jm, "fourier_bands", cfg.model.fourier_bands);
    }
    if (j.contains("train")) {
      const auto& jt = j.at("train");
      maybe_get(jt, "lr", cfg.train.lr);
      maybe_get(jt, "weight_decay", cfg.train.weight_decay);
      maybe_get(jt, "epochs", cfg.train.epochs);
      maybe_get(jt, "batch", cfg.train.batch);
      maybe_get(jt, "max_steps", cfg.train.max_steps);
      if (jt.contains("winner_mode")) {
        const auto w = enum_from_string<WinnerMode>(jt.at("winner_mode").get<std::string>());
        if (!w) throw ConfigError("train.winner_mode: unknown value");
        cfg.train.winner_mode = *w;
      }
    }
    if (j.contains("generator")) {
      const auto& jg = j.at("generator");
      if (jg.contains("topology")) {
        const auto t = enum_from_string<LaneTopology>(jg.at("topology").get<std::string>());
        if (!t) throw ConfigError("generator.topology: unknown value");
        cfg.generator.topology = *t;
      }
      maybe_get(jg, "agents_min", cfg.generator.agents_min);
      maybe_get(jg, "agents_max", cfg.generator.agents_max);
      maybe_get(jg, "speed_min", cfg.generator.speed_min);
      maybe_get(jg, "speed_max", cfg.generator.speed_max);
      maybe_get(jg, "parked_prob", cfg.generator.parked_prob);
      maybe_get(jg, "partial_history_prob", cfg.generator.partial_history_prob);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

/// Stable hash of everything that determines parameter shapes and meaning.
inline std::string config_hash(const ModelConfig& m) {
  return hex64(fnv1a64(model_config_to_json(m).dump()));
}

}  // namespace trajcast
