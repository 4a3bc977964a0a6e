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

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "trajcast/scene.hpp"

namespace trajcast {

enum class LaneTopology { kStraight, kCurved, kTIntersection, kMixed };

inline const char* to_string(LaneTopology t) {
  switch (t) {
    case LaneTopology::kStraight: return "straight";
    case LaneTopology::kCurved: return "curved";
    case LaneTopology::kTIntersection: return "t_intersection";
    case LaneTopology::kMixed: return "mixed";
  }
  return "straight";
}

template <>
inline std::optional<LaneTopology> enum_from_string<LaneTopology>(const std::string& s) {
  for (int i = 0; i < 4; ++i)
    if (s == to_string(static_cast<LaneTopology>(i))) return static_cast<LaneTopology>(i);
  return std::nullopt;
}

struct GeneratorConfig {
  LaneTopology topology = LaneTopology::kMixed;
  int t_hist = 50;
  int t_fut = 60;
  int agents_min = 2;
  int agents_max = 4;
  double speed_min = 3.0;   // m/s
  double speed_max = 12.0;  // m/s
  double parked_prob = 0.1;
  double partial_history_prob = 0.15;

  void validate() const {
    if (t_hist <= 0 || t_fut <= 0) throw ConfigError("generator: t_hist/t_fut must be positive");
    if (agents_min < 1 || agents_max < agents_min)
      throw ConfigError("generator: invalid agent count range");
    if (!(speed_min > 0.0) || speed_max < speed_min)
      throw ConfigError("generator: invalid speed range");
    if (parked_prob < 0.0 || parked_prob >= 1.0 || partial_history_prob < 0.0 ||
        partial_history_prob >= 1.0)
      throw ConfigError("generator: probabilities must lie in [0, 1)");
  }
};

namespace gen_detail {

/// Dense centerline with arclength lookup; extrapolates straight past both ends.
struct RoutePath {
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cumulative arclength, cum[0] = 0

  void finalize() {
    cum.resize(pts.size());
    cum[0] = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      cum[i] = cum[i - 1] + norm2(pts[i].x - pts[i - 1].x, pts[i].y - pts[i - 1].y);
  }
  double length() const { return cum.back(); }

  Vec2 sample(double s) const {
    if (s <= 0.0) {
      const double dx = pts[1].x - pts[0].x, dy = pts[1].y - pts[0].y;
      const double d = norm2(dx, dy);
      return {pts[0].x + s * dx / d, pts[0].y + s * dy / d};
    }
    if (s >= length()) {
      const std::size_t n = pts.size();
      const double dx = pts[n - 1].x - pts[n - 2].x, dy = pts[n - 1].y - pts[n - 2].y;
      const double d = norm2(dx, dy);
      const double e = s - length();
      return {pts[n - 1].x + e * dx / d, pts[n - 1].y + e * dy / d};
    }
    const auto it = std::upper_bound(cum.begin(), cum.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - cum.begin());
    const double seg = cum[i] - cum[i - 1];
    const double u = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
    return {pts[i - 1].x + u * (pts[i].x - pts[i - 1].x),
            pts[i - 1].y + u * (pts[i].y - pts[i - 1].y)};
  }
};

inline RoutePath straight_path(Vec2 from, Vec2 to, double spacing = 5.0) {
  RoutePath p;
  const double len = norm2(to.x - from.x, to.y - from.y);
  const int n = std::max(2, static_cast<int>(std::ceil(len / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / (n - 1);
    p.pts.push_back({from.x + u * (to.x - from.x), from.y + u * (to.y - from.y)});
  }
  p.finalize();
  return p;
}

inline RoutePath arc_path(Vec2 center, double radius, double a0, double a1,
                          double spacing = 2.5) {
  RoutePath p;
  const double arc = std::abs(a1 - a0) * radius;
  const int n = std::max(3, static_cast<int>(std::ceil(arc / spacing)) + 1);
  for (int i = 0; i < n; ++i) {
    const double a = a0 + (a1 - a0) * static_cast<double>(i) / (n - 1);
    p.pts.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  p.finalize();
  return p;
}

inline RoutePath concat_paths(const std::vector<RoutePath>& parts) {
  RoutePath p;
  for (const auto& part : parts) {
    for (const auto& pt : part.pts) {
      if (!p.pts.empty()) {
        const auto& last = p.pts.back();
        if (norm2(pt.x - last.x, pt.y - last.y) < 1e-9) continue;
      }
      p.pts.push_back(pt);
    }
  }
  p.finalize();
  return p;
}

/// Splits a dense path into map polylines of at most `chunk_pts` points with
/// shared boundary points, chained by successor/predecessor relations.
inline void chunk_into_map(const RoutePath& path, PolylineCategory cat,
                           PointCategory pt_cat, int chunk_pts, MapGraph& map) {
  int prev_index = -1;
  std::size_t i = 0;
  while (i + 1 < path.pts.size()) {
    Polyline pl;
    pl.category = cat;
    const std::size_t end = std::min(path.pts.size(), i + static_cast<std::size_t>(chunk_pts));
    for (std::size_t k = i; k < end; ++k) {
      pl.points.push_back(path.pts[k]);
      pl.point_categories.push_back(pt_cat);
    }
    const int index = static_cast<int>(map.polylines.size());
    map.polylines.push_back(std::move(pl));
    if (prev_index >= 0) {
      map.relations.push_back({prev_index, index, RelationType::kSuccessor});
      map.relations.push_back({index, prev_index, RelationType::kPredecessor});
    }
    prev_index = index;
    if (end == path.pts.size()) break;
    i = end - 1;  // share the boundary point
  }
}

struct SceneLayout {
  std::vector<RoutePath> routes;
  MapGraph map;
  // Index of a route that turns, plus the arclength where its turn begins and
  // the turn length; negative when no turning route exists.
  int turn_route = -1;
  double turn_entry = 0.0;
  double turn_len = 0.0;
};

inline SceneLayout build_straight(double route_len) {
  SceneLayout lay;
  const double half = route_len / 2.0;
  lay.routes.push_back(straight_path({-half, 0.0}, {half, 0.0}));
  lay.routes.push_back(straight_path({-half, 3.5}, {half, 3.5}));
  const int before = 0;
  chunk_into_map(lay.routes[0], PolylineCategory::kLane, PointCategory::kCenterline, 6, lay.map);
  const int mid = static_cast<int>(lay.map.polylines.size());
  chunk_into_map(lay.routes[1], PolylineCategory::kLane, PointCategory::kCenterline, 6, lay.map);
  const int n0 = mid - before, n1 = static_cast<int>(lay.map.polylines.size()) - mid;
  for (int i = 0; i < std::min(n0, n1); ++i) {
    lay.map.relations.push_back({before + i, mid + i, RelationType::kAdjacent});
    lay.map.relations.push_back({mid + i, before + i, RelationType::kAdjacent});
  }
  // Crosswalk near the middle of the road.
  Polyline cw;
  cw.category = PolylineCategory::kCrosswalk;
  cw.points = {{10.0, -2.0}, {10.0, 5.5}};
  cw.point_categories = {PointCategory::kCrossingEdge, PointCategory::kCrossingEdge};
  lay.map.polylines.push_back(std::move(cw));
  return lay;
}

inline SceneLayout build_curved(double route_len) {
  SceneLayout lay;
  const double r0 = 25.0, r1 = 28.5;
  const double span = std::min(1.5 * kPi, route_len / r0);
  lay.routes.push_back(arc_path({0.0, 0.0}, r0, -kPi / 2.0, -kPi / 2.0 + span));
  lay.routes.push_back(arc_path({0.0, 0.0}, r1, -kPi / 2.0, -kPi / 2.0 + span * r0 / r1));
  const int before = 0;
  chunk_into_map(lay.routes[0], PolylineCategory::kLane, PointCategory::kCenterline, 8, lay.map);
  const int mid = static_cast<int>(lay.map.polylines.size());
  chunk_into_map(lay.routes[1], PolylineCategory::kLane, PointCategory::kCenterline, 8, lay.map);
  const int n0 = mid - before, n1 = static_cast<int>(lay.map.polylines.size()) - mid;
  for (int i = 0; i < std::min(n0, n1); ++i) {
    lay.map.relations.push_back({before + i, mid + i, RelationType::kAdjacent});
    lay.map.relations.push_back({mid + i, before + i, RelationType::kAdjacent});
  }
  lay.turn_route = 0;
  lay.turn_entry = 0.0;
  lay.turn_len = lay.routes[0].length();
  return lay;
}

inline SceneLayout build_t_intersection(double route_len, double turn_radius) {
  SceneLayout lay;
  const double approach = std::max(30.0, route_len);
  const double exit_len = std::max(30.0, route_len);
  // Straight-through route along y = 0.
  lay.routes.push_back(straight_path({-approach, 0.0}, {approach, 0.0}));
  // Turning route: approach eastbound, quarter turn left, leave northbound.
  const RoutePath in = straight_path({-approach, 0.0}, {0.0, 0.0});
  const RoutePath arc = arc_path({0.0, turn_radius}, turn_radius, -kPi / 2.0, 0.0);
  const RoutePath out =
      straight_path({turn_radius, turn_radius}, {turn_radius, turn_radius + exit_len});
  lay.routes.push_back(concat_paths({in, arc, out}));
  lay.turn_route = 1;
  lay.turn_entry = in.length();
  lay.turn_len = arc.length();

  chunk_into_map(lay.routes[0], PolylineCategory::kLane, PointCategory::kCenterline, 6, lay.map);
  const int arc_first = static_cast<int>(lay.map.polylines.size());
  chunk_into_map(arc, PolylineCategory::kIntersectionLane, PointCategory::kCenterline, 8, lay.map);
  chunk_into_map(out, PolylineCategory::kLane, PointCategory::kCenterline, 6, lay.map);
  if (arc_first < static_cast<int>(lay.map.polylines.size()) && arc_first > 0) {
    lay.map.relations.push_back({arc_first - 1, arc_first, RelationType::kNearby});
  }
  Polyline cw;
  cw.category = PolylineCategory::kCrosswalk;
  cw.points = {{turn_radius - 2.0, turn_radius + 4.0}, {turn_radius + 2.0, turn_radius + 4.0}};
  cw.point_categories = {PointCategory::kCrossingEdge, PointCategory::kCrossingEdge};
  lay.map.polylines.push_back(std::move(cw));
  return lay;
}

}  // namespace gen_detail

/// Hand-built smallest interesting scene: two vehicles on parallel straight
/// lanes plus a crosswalk (3 polylines). All states valid; used by the
/// gradient-check harness and as a tiny fixture.
inline Scene make_minimal_scene(int t_hist, int t_fut) {
  Scene s;
  s.id = "minimal";
  s.t_hist = t_hist;
  s.t_fut = t_fut;
  const int horizon = t_hist + t_fut;
  const double reach = 4.0 + 5.5 * kStepSeconds * horizon;

  auto lane = [&](double y) {
    Polyline pl;
    pl.category = PolylineCategory::kLane;
    const int pts = 6;
    for (int i = 0; i < pts; ++i) {
      pl.points.push_back({-16.0 + (reach + 24.0) * i / (pts - 1), y});
      pl.point_categories.push_back(PointCategory::kCenterline);
    }
    return pl;
  };
  s.map.polylines.push_back(lane(0.0));
  s.map.polylines.push_back(lane(3.5));
  Polyline cw;
  cw.category = PolylineCategory::kCrosswalk;
  cw.points = {{8.0, -2.0}, {8.0, 5.5}};
  cw.point_categories = {PointCategory::kCrossingEdge, PointCategory::kCrossingEdge};
  s.map.polylines.push_back(cw);
  s.map.relations.push_back({0, 1, RelationType::kAdjacent});
  s.map.relations.push_back({1, 0, RelationType::kAdjacent});

  auto agent = [&](const std::string& id, double x0, double y, double speed) {
    Agent a;
    a.id = id;
    a.type = AgentType::kVehicle;
    for (int t = 0; t < horizon; ++t)
      a.states.push_back({t, x0 + speed * kStepSeconds * t, y, 0.0, true});
    return a;
  };
  s.agents.push_back(agent("a0", -10.0, 0.0, 4.0));
  s.agents.push_back(agent("a1", -14.0, 3.5, 5.5));
  s.focal_agent_ids = {"a0", "a1"};
  return s;
}

/// Deterministic synthetic scene: agents follow lane centerlines at constant
/// speed; headings are the forward motion direction. The turning topologies
/// place the first agent so its turn falls inside the future window.
inline Scene generate_synthetic_scene(const GeneratorConfig& config, std::uint64_t seed,
                                      const std::string& id = "") {
  config.validate();
  Rng rng(seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto uniform_int = [&rng](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  LaneTopology topo = config.topology;
  if (topo == LaneTopology::kMixed) {
    const int pick = uniform_int(0, 2);
    topo = pick == 0 ? LaneTopology::kStraight
                     : (pick == 1 ? LaneTopology::kCurved : LaneTopology::kTIntersection);
  }

  const int horizon = config.t_hist + config.t_fut;
  const double max_travel = config.speed_max * kStepSeconds * horizon;
  const double route_len = max_travel + 40.0;

  gen_detail::SceneLayout lay;
  const double focal_speed = uniform(config.speed_min, config.speed_max);
  switch (topo) {
    case LaneTopology::kStraight:
      lay = gen_detail::build_straight(route_len);
      break;
    case LaneTopology::kCurved:
      lay = gen_detail::build_curved(route_len);
      break;
    default: {
      // Radius chosen so the quarter turn fits in ~60% of the future window.
      const double turn_dist = 0.6 * focal_speed * kStepSeconds * config.t_fut;
      const double radius = std::clamp(turn_dist / (kPi / 2.0), 4.0, 25.0);
      lay = gen_detail::build_t_intersection(route_len / 2.0, radius);
      break;
    }
  }

  Scene scene;
  scene.id = id.empty() ? "scene_seed_" + std::to_string(seed) : id;
  scene.t_hist = config.t_hist;
  scene.t_fut = config.t_fut;
  scene.map = std::move(lay.map);

  const int n_agents = uniform_int(config.agents_min, config.agents_max);
  const AgentType type_pool[4] = {AgentType::kVehicle, AgentType::kVehicle,
                                  AgentType::kBus, AgentType::kCyclist};

  for (int n = 0; n < n_agents; ++n) {
    Agent agent;
    agent.id = "agent_" + std::to_string(n);
    agent.type = type_pool[uniform_int(0, 3)];

    const bool is_focal_candidate = n == 0;
    const bool parked = !is_focal_candidate && uniform(0.0, 1.0) < config.parked_prob;
    const bool partial =
        !is_focal_candidate && !parked && uniform(0.0, 1.0) < config.partial_history_prob;

    int route_idx;
    double speed;
    if (is_focal_candidate && lay.turn_route >= 0 && topo != LaneTopology::kStraight) {
      route_idx = lay.turn_route;
      speed = focal_speed;
    } else {
      route_idx = uniform_int(0, static_cast<int>(lay.routes.size()) - 1);
      speed = uniform(config.speed_min, config.speed_max);
    }
    const auto& route = lay.routes[static_cast<std::size_t>(route_idx)];

    double s0;
    if (is_focal_candidate && route_idx == lay.turn_route && topo == LaneTopology::kTIntersection) {
      // Enter the turn shortly after the history window ends.
      s0 = lay.turn_entry - speed * kStepSeconds * (config.t_hist + 0.2 * config.t_fut);
    } else {
      s0 = uniform(0.0, std::max(1.0, route.length() - speed * kStepSeconds * horizon));
      s0 -= static_cast<double>(n) * 8.0;  // stagger agents sharing a route
    }

    std::vector<Vec2> pos(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t)
      pos[static_cast<std::size_t>(t)] =
          parked ? route.sample(s0) : route.sample(s0 + speed * kStepSeconds * t);
    if (parked) {
      // Offset a parked agent to the roadside.
      const Vec2 a = route.sample(s0), b = route.sample(s0 + 1.0);
      const double d = norm2(b.x - a.x, b.y - a.y);
      const double nx = -(b.y - a.y) / d, ny = (b.x - a.x) / d;
      for (auto& p : pos) {
        p.x += 2.2 * nx;
        p.y += 2.2 * ny;
      }
    }

    agent.states.resize(static_cast<std::size_t>(horizon));
    for (int t = 0; t < horizon; ++t) {
      AgentState& st = agent.states[static_cast<std::size_t>(t)];
      st.t = t;
      st.x = pos[static_cast<std::size_t>(t)].x;
      st.y = pos[static_cast<std::size_t>(t)].y;
      st.valid = true;
    }
    // Headings: forward motion direction; a never-moving agent keeps 0.
    double last_heading = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const int tn = std::min(t + 1, horizon - 1);
      const int tp = tn == t ? t - 1 : t;
      const double dx = pos[static_cast<std::size_t>(tn)].x - pos[static_cast<std::size_t>(tp)].x;
      const double dy = pos[static_cast<std::size_t>(tn)].y - pos[static_cast<std::size_t>(tp)].y;
      if (norm2(dx, dy) > 1e-9) last_heading = wrap_angle(std::atan2(dy, dx));
      agent.states[static_cast<std::size_t>(t)].heading = last_heading;
    }

    if (partial) {
      const int missing = uniform_int(1, std::max(1, config.t_hist / 2));
      for (int t = 0; t < missing; ++t) {
        AgentState& st = agent.states[static_cast<std::size_t>(t)];
        st.valid = false;
        st.x = agent.states[static_cast<std::size_t>(missing)].x;
        st.y = agent.states[static_cast<std::size_t>(missing)].y;
        st.heading = agent.states[static_cast<std::size_t>(missing)].heading;
      }
    }

    scene.agents.push_back(std::move(agent));
  }

  scene.focal_agent_ids.push_back(scene.agents[0].id);
  if (scene.agents.size() > 1 && scene.agents[1].states[0].valid) {
    bool moving = norm2(scene.agents[1].states[1].x - scene.agents[1].states[0].x,
                        scene.agents[1].states[1].y - scene.agents[1].states[0].y) > 1e-9;
    if (moving) scene.focal_agent_ids.push_back(scene.agents[1].id);
  }
  return scene;
}

}  // namespace trajcast
