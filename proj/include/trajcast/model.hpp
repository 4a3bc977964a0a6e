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

#include <memory>
#include <string>
#include <vector>

#include "trajcast/config.hpp"
#include "trajcast/nn.hpp"
#include "trajcast/scene.hpp"

namespace trajcast {

template <class S>
struct MapEncoderParams {
  Mlp<S> point_mlp;
  Embedding<S> point_cat_emb;
  Embedding<S> poly_cat_emb;
  RelEncoder<S> rel_pool;
  AttentionBlock<S> pool_block;
  RelEncoder<S> rel_self;
  Embedding<S> relation_emb;
  std::vector<AttentionBlock<S>> self_blocks;
};

/// One decoder module (the proposer and the refiner share this layout).
template <class S>
struct DecoderModuleParams {
  Mlp<S> tok_step_mlp;   // per-step feature embedding
  Mlp<S> tok_merge_mlp;  // merges the per-step embeddings into one token
  Embedding<S> type_emb;
  RelEncoder<S> rel_temporal, rel_map, rel_social, rel_mode;
  struct Round {
    AttentionBlock<S> temporal, map, social, mode;
  };
  std::vector<Round> rounds;
  Embedding<S> mode_emb;
  Embedding<S> time_emb;
  Mlp<S> detok_traj;
  Mlp<S> detok_logit;
};

template <class S>
struct Model {
  ModelConfig cfg;
  FourierBands bands;
  ParamStore<S> params;
  MapEncoderParams<S> map_enc;
  DecoderModuleParams<S> proposer;
  std::unique_ptr<DecoderModuleParams<S>> refiner;  // null when refinement off

  int pair_feature_dim() const {
    return static_cast<int>(bands.feature_dim(4));
  }
  int map_pair_feature_dim() const {
    return pair_feature_dim() * (cfg.line_attention ? 2 : 1);
  }

  /// Trajectory head width: Laplace loc/scale (2T each) + von-Mises loc/conc
  /// (T each) for the main window, doubled when overprediction is on.
  int detok_width() const {
    const int main_w = 6 * cfg.t_sub;
    return cfg.overprediction ? 2 * main_w : main_w;
  }
};

namespace model_detail {

template <class S>
DecoderModuleParams<S> build_module(ParamStore<S>& store, const std::string& prefix,
                                    const ModelConfig& cfg, const FourierBands& bands,
                                    int map_pair_dim, Rng& rng) {
  const int d = cfg.embed_dim;
  const int step_feat = static_cast<int>(bands.feature_dim(8));
  const int pair_dim = static_cast<int>(bands.feature_dim(4));
  DecoderModuleParams<S> m;
  m.tok_step_mlp = Mlp<S>::create(store, prefix + ".tok.step", {step_feat, d, d}, rng);
  m.tok_merge_mlp =
      Mlp<S>::create(store, prefix + ".tok.merge", {(cfg.t_sub - 1) * d, d, d}, rng);
  m.type_emb = Embedding<S>::create(store, prefix + ".type_emb", kNumAgentTypes, d, rng);
  m.rel_temporal = RelEncoder<S>::create(store, prefix + ".rel.temporal", pair_dim, d, rng);
  m.rel_map = RelEncoder<S>::create(store, prefix + ".rel.map", map_pair_dim, d, rng);
  m.rel_social = RelEncoder<S>::create(store, prefix + ".rel.social", pair_dim, d, rng);
  m.rel_mode = RelEncoder<S>::create(store, prefix + ".rel.mode", pair_dim, d, rng);
  AttentionSpec spec{d, cfg.num_heads, cfg.dropout, cfg.radius};
  for (int r = 0; r < cfg.rounds; ++r) {
    const std::string rp = prefix + ".r" + std::to_string(r);
    typename DecoderModuleParams<S>::Round round;
    round.temporal = AttentionBlock<S>::create(store, rp + ".temporal", spec, rng);
    round.map = AttentionBlock<S>::create(store, rp + ".map", spec, rng);
    round.social = AttentionBlock<S>::create(store, rp + ".social", spec, rng);
    round.mode = AttentionBlock<S>::create(store, rp + ".mode", spec, rng);
    m.rounds.push_back(std::move(round));
  }
  m.mode_emb = Embedding<S>::create(store, prefix + ".mode_emb", cfg.num_modes, d, rng);
  m.time_emb =
      Embedding<S>::create(store, prefix + ".time_emb", cfg.future_steps(), d, rng);
  const int out_w = cfg.overprediction ? 12 * cfg.t_sub : 6 * cfg.t_sub;
  m.detok_traj = Mlp<S>::create(store, prefix + ".detok.traj", {d, 2 * d, out_w}, rng);
  m.detok_logit = Mlp<S>::create(store, prefix + ".detok.logit", {d, d, 1}, rng);
  return m;
}

}  // namespace model_detail

/// Builds the full parameter set in a fixed registration order; the same seed
/// yields the same values for float and double instantiations.
template <class S>
Model<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<S> model;
  model.cfg = cfg;
  model.bands = FourierBands::log_spaced(cfg.fourier_bands);
  Rng rng(seed ^ 0x6d6f64656c000000ull);
  auto& store = model.params;
  const int d = cfg.embed_dim;
  const int pair_dim = model.pair_feature_dim();
  const int point_feat = static_cast<int>(model.bands.feature_dim(2));
  AttentionSpec spec{d, cfg.num_heads, cfg.dropout, cfg.radius};

  model.map_enc.point_mlp = Mlp<S>::create(store, "map.point", {point_feat, d, d}, rng);
  model.map_enc.point_cat_emb =
      Embedding<S>::create(store, "map.point_cat_emb", kNumPointCategories, d, rng);
  model.map_enc.poly_cat_emb =
      Embedding<S>::create(store, "map.poly_cat_emb", kNumPolylineCategories, d, rng);
  model.map_enc.rel_pool = RelEncoder<S>::create(store, "map.rel.pool", pair_dim, d, rng);
  model.map_enc.pool_block = AttentionBlock<S>::create(store, "map.pool", spec, rng);
  model.map_enc.rel_self = RelEncoder<S>::create(store, "map.rel.self", pair_dim, d, rng);
  model.map_enc.relation_emb =
      Embedding<S>::create(store, "map.relation_emb", kNumRelationTypes, d, rng);
  for (int r = 0; r < cfg.rounds; ++r)
    model.map_enc.self_blocks.push_back(
        AttentionBlock<S>::create(store, "map.self" + std::to_string(r), spec, rng));

  model.proposer = model_detail::build_module<S>(store, "prop", cfg, model.bands,
                                                 model.map_pair_feature_dim(), rng);
  if (cfg.refinement)
    model.refiner = std::make_unique<DecoderModuleParams<S>>(model_detail::build_module<S>(
        store, "ref", cfg, model.bands, model.map_pair_feature_dim(), rng));
  return model;
}

}  // namespace trajcast
