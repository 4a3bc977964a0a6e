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

#include <vector>

#include "trajcast/model.hpp"

namespace trajcast {

/// One token and one frame per polyline; tokens are SE(2)-invariant, frames
/// carry the pose. Computed once per scene (the map is static).
template <class S>
struct MapTokens {
  typename Graph<S>::Id tokens = -1;  // [M, D]
  std::vector<ReferenceFrame> frames;
  const MapGraph* map = nullptr;

  int count() const { return static_cast<int>(frames.size()); }
};

namespace map_detail {

inline ReferenceFrame point_frame(const Polyline& pl, std::size_t i) {
  const std::size_t j = i + 1 < pl.points.size() ? i + 1 : i;
  const std::size_t k = j == i ? i - 1 : i;
  ReferenceFrame f;
  f.x = pl.points[i].x;
  f.y = pl.points[i].y;
  f.heading = wrap_angle(
      std::atan2(pl.points[j].y - pl.points[k].y, pl.points[j].x - pl.points[k].x));
  f.t = 0;
  return f;
}

}  // namespace map_detail

/// Per-point tokens of one polyline: Fourier features of the offset to the
/// next point (in the polyline frame) through an MLP, plus the point-category
/// embedding. A polyline with P points yields P-1 tokens.
template <class S>
typename Graph<S>::Id encode_points(const Model<S>& model, Graph<S>& g,
                                    const Polyline& pl) {
  const ReferenceFrame frame = pl.frame();
  const int n = static_cast<int>(pl.points.size()) - 1;
  const int fdim = static_cast<int>(model.bands.feature_dim(2));
  std::vector<double> rows(static_cast<std::size_t>(n) * fdim);
  std::vector<int> cats(static_cast<std::size_t>(n));
  const double c = std::cos(frame.heading), s = std::sin(frame.heading);
  for (int i = 0; i < n; ++i) {
    const double dx = pl.points[static_cast<std::size_t>(i) + 1].x -
                      pl.points[static_cast<std::size_t>(i)].x;
    const double dy = pl.points[static_cast<std::size_t>(i) + 1].y -
                      pl.points[static_cast<std::size_t>(i)].y;
    const double local[2] = {c * dx + s * dy, -s * dx + c * dy};
    model.bands.compute(std::span<const double>(local, 2),
                        std::span<double>(rows.data() + static_cast<std::size_t>(i) * fdim,
                                          static_cast<std::size_t>(fdim)));
    cats[static_cast<std::size_t>(i)] =
        static_cast<int>(pl.point_categories[static_cast<std::size_t>(i)]);
  }
  auto tokens = model.map_enc.point_mlp.apply(g, g.input(n, fdim, rows));
  return g.add_gathered_rows(tokens, g.param(*model.map_enc.point_cat_emb.table),
                             std::move(cats));
}

/// Category-query pooling over one polyline's point tokens.
template <class S>
typename Graph<S>::Id pool_polyline(const Model<S>& model, Graph<S>& g,
                                    typename Graph<S>::Id point_tokens,
                                    const Polyline& pl, const ForwardCtx& fctx) {
  const ReferenceFrame frame = pl.frame();
  const int n = g.rows(point_tokens);
  const int fdim = model.pair_feature_dim();
  std::vector<double> rows(static_cast<std::size_t>(n) * fdim);
  AttnPattern pat;
  pat.keys_of.resize(1);
  for (int i = 0; i < n; ++i) {
    const auto desc =
        relative_descriptor(frame, map_detail::point_frame(pl, static_cast<std::size_t>(i)));
    const auto arr = desc.as_array();
    model.bands.compute(arr, std::span<double>(rows.data() + static_cast<std::size_t>(i) * fdim,
                                               static_cast<std::size_t>(fdim)));
    pat.keys_of[0].push_back({i, i});
  }
  pat.n_pairs = n;
  const auto rel = model.map_enc.rel_pool.apply(g, g.input(n, fdim, rows));
  const auto query =
      model.map_enc.poly_cat_emb.lookup(g, {static_cast<int>(pl.category)});
  return model.map_enc.pool_block.apply(g, query, point_tokens, rel, pat, fctx);
}

/// Full map encoding: point tokens -> pooled polyline tokens -> relation-aware
/// self-attention among polylines within the interaction radius.
template <class S>
MapTokens<S> encode_map(const Model<S>& model, Graph<S>& g, const MapGraph& map,
                        const ForwardCtx& fctx) {
  MapTokens<S> out;
  out.map = &map;
  const int m = static_cast<int>(map.polylines.size());
  for (const auto& pl : map.polylines) out.frames.push_back(pl.frame());

  if (m == 0) {
    out.tokens = g.zeros(0, model.cfg.embed_dim);
    return out;
  }

  std::vector<typename Graph<S>::Id> pooled;
  for (const auto& pl : map.polylines) {
    const auto pts = encode_points(model, g, pl);
    pooled.push_back(pool_polyline(model, g, pts, pl, fctx));
  }
  auto tokens = g.concat_rows(pooled);

  // Pair set: self plus every polyline whose frame origin lies within radius.
  AttnPattern pat;
  pat.keys_of.resize(static_cast<std::size_t>(m));
  std::vector<double> rows;
  std::vector<int> rel_types;
  const int fdim = model.pair_feature_dim();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!within_radius(out.frames[static_cast<std::size_t>(i)].x -
                             out.frames[static_cast<std::size_t>(j)].x,
                         out.frames[static_cast<std::size_t>(i)].y -
                             out.frames[static_cast<std::size_t>(j)].y,
                         model.cfg.radius))
        continue;
      const int pair = pat.n_pairs++;
      pat.keys_of[static_cast<std::size_t>(i)].push_back({j, pair});
      const auto desc = relative_descriptor(out.frames[static_cast<std::size_t>(i)],
                                            out.frames[static_cast<std::size_t>(j)]);
      const auto arr = desc.as_array();
      rows.resize(static_cast<std::size_t>(pat.n_pairs) * fdim);
      model.bands.compute(arr,
                          std::span<double>(rows.data() + static_cast<std::size_t>(pair) * fdim,
                                            static_cast<std::size_t>(fdim)));
      RelationType type = RelationType::kNearby;
      for (const auto& r : map.relations)
        if (r.src == i && r.dst == j) {
          type = r.type;
          break;
        }
      rel_types.push_back(static_cast<int>(type));
    }
  }

  typename Graph<S>::Id rel = -1;
  if (pat.n_pairs > 0) {
    rel = model.map_enc.rel_self.apply(g, g.input(pat.n_pairs, fdim, rows));
    rel = g.add_gathered_rows(rel, g.param(*model.map_enc.relation_emb.table),
                              std::move(rel_types));
  }
  for (const auto& blk : model.map_enc.self_blocks)
    tokens = blk.apply(g, tokens, tokens, rel, pat, fctx);

  out.tokens = tokens;
  return out;
}

}  // namespace trajcast
