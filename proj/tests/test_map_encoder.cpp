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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "trajcast/map_encoder.hpp"

using namespace trajcast;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.num_heads = 4;
  cfg.t_sub = 5;
  cfg.num_modes = 2;
  cfg.t_hist = 10;
  cfg.t_fut = 20;
  cfg.dropout = 0.0;
  return cfg;
}

Polyline straight_polyline(double x0, double y0, double dx, double dy, int n,
                           PolylineCategory cat = PolylineCategory::kLane) {
  Polyline pl;
  pl.category = cat;
  for (int i = 0; i < n; ++i) {
    pl.points.push_back({x0 + i * dx, y0 + i * dy});
    pl.point_categories.push_back(PointCategory::kCenterline);
  }
  return pl;
}

MapGraph transform_map(const MapGraph& map, double tx, double ty, double th) {
  MapGraph out = map;
  const double c = std::cos(th), s = std::sin(th);
  for (auto& pl : out.polylines)
    for (auto& p : pl.points) {
      const double x = tx + c * p.x - s * p.y;
      const double y = ty + s * p.x + c * p.y;
      p = {x, y};
    }
  return out;
}

}  // namespace

TEST_CASE("encode_points") {
  auto model = build_model<double>(small_cfg(), 11);

  SECTION("2-point polyline yields one point token of width D") {
    Graph<double> g;
    const auto pl = straight_polyline(0, 0, 5, 0, 2);
    const auto pts = encode_points(model, g, pl);
    CHECK(g.rows(pts) == 1);
    CHECK(g.cols(pts) == 32);
  }

  SECTION("equally spaced straight polyline gives identical point tokens") {
    Graph<double> g;
    const auto pl = straight_polyline(3.0, -2.0, 4.0, 1.0, 6);
    const auto pts = encode_points(model, g, pl);
    REQUIRE(g.rows(pts) == 5);
    const auto& v = g.val(pts);
    for (int r = 1; r < 5; ++r)
      for (int c = 0; c < 32; ++c)
        CHECK(v[static_cast<std::size_t>(r) * 32 + c] ==
              Catch::Approx(v[static_cast<std::size_t>(c)]).margin(1e-12));
  }

  SECTION("matches a step-by-step composition of fourier + mlp") {
    Graph<double> g;
    const auto pl = straight_polyline(1.0, 2.0, 3.0, -1.0, 4);
    const auto pts = encode_points(model, g, pl);

    const auto frame = pl.frame();
    Graph<double> g2;
    const int fdim = static_cast<int>(model.bands.feature_dim(2));
    for (int i = 0; i < 3; ++i) {
      const double dx = pl.points[static_cast<std::size_t>(i) + 1].x -
                        pl.points[static_cast<std::size_t>(i)].x;
      const double dy = pl.points[static_cast<std::size_t>(i) + 1].y -
                        pl.points[static_cast<std::size_t>(i)].y;
      const Vec2 local = ReferenceFrame{0, 0, frame.heading, 0}.to_local(dx, dy);
      std::vector<double> feat(static_cast<std::size_t>(fdim));
      const double in[2] = {local.x, local.y};
      model.bands.compute(std::span<const double>(in, 2), feat);
      auto tok = model.map_enc.point_mlp.apply(g2, g2.input(1, fdim, feat));
      tok = g2.add_gathered_rows(
          tok, g2.param(*model.map_enc.point_cat_emb.table),
          {static_cast<int>(pl.point_categories[static_cast<std::size_t>(i)])});
      for (int c = 0; c < 32; ++c)
        CHECK(g.val(pts)[static_cast<std::size_t>(i) * 32 + c] ==
              Catch::Approx(g2.val(tok)[static_cast<std::size_t>(c)]).margin(1e-12));
    }
  }
}

TEST_CASE("pool_polyline") {
  auto model = build_model<double>(small_cfg(), 12);
  ForwardCtx fctx;

  SECTION("single point token pools to a finite D-vector") {
    Graph<double> g;
    const auto pl = straight_polyline(0, 0, 2, 0, 2);
    const auto pts = encode_points(model, g, pl);
    const auto tok = pool_polyline(model, g, pts, pl, fctx);
    CHECK(g.rows(tok) == 1);
    CHECK(g.cols(tok) == 32);
    for (double v : g.val(tok)) CHECK(std::isfinite(v));
  }

  SECTION("pooled token is invariant to point-token permutation") {
    Graph<double> g;
    const auto pl = straight_polyline(0, 0, 3, 1, 5);
    const auto pts = encode_points(model, g, pl);
    const auto pooled = pool_polyline(model, g, pts, pl, fctx);

    // Manual pool with key rows visited in reverse order.
    Graph<double> g2;
    const auto pts2 = encode_points(model, g2, pl);
    const int n = g2.rows(pts2);
    std::vector<int> perm;
    for (int i = n - 1; i >= 0; --i) perm.push_back(i);
    const auto shuffled = g2.gather_rows(pts2, perm);
    const auto frame = pl.frame();
    const int fdim = model.pair_feature_dim();
    std::vector<double> rows(static_cast<std::size_t>(n) * fdim);
    AttnPattern pat;
    pat.keys_of.resize(1);
    for (int i = 0; i < n; ++i) {
      const auto desc = relative_descriptor(
          frame,
          map_detail::point_frame(pl, static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])));
      const auto arr = desc.as_array();
      model.bands.compute(arr,
                          std::span<double>(rows.data() + static_cast<std::size_t>(i) * fdim,
                                            static_cast<std::size_t>(fdim)));
      pat.keys_of[0].push_back({i, i});
    }
    pat.n_pairs = n;
    const auto rel = model.map_enc.rel_pool.apply(g2, g2.input(n, fdim, rows));
    const auto query =
        model.map_enc.poly_cat_emb.lookup(g2, {static_cast<int>(pl.category)});
    const auto pooled2 = model.map_enc.pool_block.apply(g2, query, shuffled, rel, pat, fctx);
    for (int c = 0; c < 32; ++c)
      CHECK(std::abs(g.val(pooled)[static_cast<std::size_t>(c)] -
                     g2.val(pooled2)[static_cast<std::size_t>(c)]) < 1e-6);
  }
}

TEST_CASE("encode_map") {
  auto model = build_model<double>(small_cfg(), 13);
  ForwardCtx fctx;

  SECTION("two polylines beyond the radius match isolated encodings") {
    MapGraph joint;
    joint.polylines.push_back(straight_polyline(0, 0, 5, 0, 4));
    joint.polylines.push_back(straight_polyline(500, 0, 5, 0, 4));
    Graph<double> g;
    const auto tokens = encode_map(model, g, joint, fctx);

    for (int which = 0; which < 2; ++which) {
      MapGraph alone;
      alone.polylines.push_back(joint.polylines[static_cast<std::size_t>(which)]);
      Graph<double> g2;
      const auto t2 = encode_map(model, g2, alone, fctx);
      for (int c = 0; c < 32; ++c)
        CHECK(g.val(tokens.tokens)[static_cast<std::size_t>(which) * 32 + c] ==
              Catch::Approx(g2.val(t2.tokens)[static_cast<std::size_t>(c)]).margin(1e-12));
    }
  }

  SECTION("SE(2) invariance of map tokens; frames transform covariantly") {
    MapGraph map;
    map.polylines.push_back(straight_polyline(0, 0, 5, 0.5, 5));
    map.polylines.push_back(straight_polyline(3, 4, 4, -0.5, 5, PolylineCategory::kBusLane));
    map.polylines.push_back(straight_polyline(-5, 8, 3, 2, 3, PolylineCategory::kCrosswalk));
    map.relations.push_back({0, 1, RelationType::kAdjacent});
    map.relations.push_back({1, 0, RelationType::kAdjacent});
    map.relations.push_back({0, 2, RelationType::kNearby});

    Graph<double> g;
    const auto base = encode_map(model, g, map, fctx);

    const MapGraph moved = transform_map(map, 120.0, -40.0, 2.1);
    Graph<double> g2;
    const auto transformed = encode_map(model, g2, moved, fctx);

    for (std::size_t i = 0; i < g.val(base.tokens).size(); ++i)
      CHECK(std::abs(g.val(base.tokens)[i] - g2.val(transformed.tokens)[i]) < 1e-5);
    for (int m = 0; m < base.count(); ++m) {
      const auto& f0 = base.frames[static_cast<std::size_t>(m)];
      const auto& f1 = transformed.frames[static_cast<std::size_t>(m)];
      const double c = std::cos(2.1), s = std::sin(2.1);
      CHECK(std::abs(120.0 + c * f0.x - s * f0.y - f1.x) < 1e-9);
      CHECK(std::abs(-40.0 + s * f0.x + c * f0.y - f1.y) < 1e-9);
      CHECK(std::abs(wrap_angle(f0.heading + 2.1 - f1.heading)) < 1e-9);
    }
  }

  SECTION("relation types feed the encodings: removing one changes tokens") {
    MapGraph map;
    map.polylines.push_back(straight_polyline(0, 0, 5, 0, 4));
    map.polylines.push_back(straight_polyline(0, 3.5, 5, 0, 4));
    map.relations.push_back({0, 1, RelationType::kAdjacent});
    Graph<double> ga, gb;
    const auto with_rel = encode_map(model, ga, map, fctx);
    MapGraph stripped = map;
    stripped.relations.clear();
    const auto without_rel = encode_map(model, gb, stripped, fctx);
    double diff = 0.0;
    for (std::size_t i = 0; i < ga.val(with_rel.tokens).size(); ++i)
      diff = std::max(diff,
                      std::abs(ga.val(with_rel.tokens)[i] - gb.val(without_rel.tokens)[i]));
    CHECK(diff > 1e-8);
  }
}
