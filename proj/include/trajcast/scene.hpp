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
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "trajcast/geometry.hpp"

namespace trajcast {

enum class AgentType { kVehicle, kPedestrian, kCyclist, kBus, kOther };
inline constexpr int kNumAgentTypes = 5;

enum class PolylineCategory { kLane, kBusLane, kIntersectionLane, kCrosswalk };
inline constexpr int kNumPolylineCategories = 4;

enum class PointCategory { kCenterline, kBoundary, kCrossingEdge };
inline constexpr int kNumPointCategories = 3;

enum class RelationType { kSuccessor, kPredecessor, kAdjacent, kNearby };
inline constexpr int kNumRelationTypes = 4;

inline const char* to_string(AgentType t) {
  switch (t) {
    case AgentType::kVehicle: return "vehicle";
    case AgentType::kPedestrian: return "pedestrian";
    case AgentType::kCyclist: return "cyclist";
    case AgentType::kBus: return "bus";
    case AgentType::kOther: return "other";
  }
  return "other";
}

inline const char* to_string(PolylineCategory c) {
  switch (c) {
    case PolylineCategory::kLane: return "lane";
    case PolylineCategory::kBusLane: return "bus_lane";
    case PolylineCategory::kIntersectionLane: return "intersection_lane";
    case PolylineCategory::kCrosswalk: return "crosswalk";
  }
  return "lane";
}

inline const char* to_string(PointCategory c) {
  switch (c) {
    case PointCategory::kCenterline: return "centerline";
    case PointCategory::kBoundary: return "boundary";
    case PointCategory::kCrossingEdge: return "crossing_edge";
  }
  return "centerline";
}

inline const char* to_string(RelationType r) {
  switch (r) {
    case RelationType::kSuccessor: return "successor";
    case RelationType::kPredecessor: return "predecessor";
    case RelationType::kAdjacent: return "adjacent";
    case RelationType::kNearby: return "nearby";
  }
  return "nearby";
}

template <class E>
std::optional<E> enum_from_string(const std::string& s);

template <>
inline std::optional<AgentType> enum_from_string<AgentType>(const std::string& s) {
  for (int i = 0; i < kNumAgentTypes; ++i)
    if (s == to_string(static_cast<AgentType>(i))) return static_cast<AgentType>(i);
  return std::nullopt;
}

template <>
inline std::optional<PolylineCategory> enum_from_string<PolylineCategory>(const std::string& s) {
  for (int i = 0; i < kNumPolylineCategories; ++i)
    if (s == to_string(static_cast<PolylineCategory>(i))) return static_cast<PolylineCategory>(i);
  return std::nullopt;
}

template <>
inline std::optional<PointCategory> enum_from_string<PointCategory>(const std::string& s) {
  for (int i = 0; i < kNumPointCategories; ++i)
    if (s == to_string(static_cast<PointCategory>(i))) return static_cast<PointCategory>(i);
  return std::nullopt;
}

template <>
inline std::optional<RelationType> enum_from_string<RelationType>(const std::string& s) {
  for (int i = 0; i < kNumRelationTypes; ++i)
    if (s == to_string(static_cast<RelationType>(i))) return static_cast<RelationType>(i);
  return std::nullopt;
}

/// One observation at a 10 Hz time index. `valid == false` marks a padded
/// step (agent not tracked there); coordinates are still carried.
struct AgentState {
  int t = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // wrapped to (-pi, pi]
  bool valid = true;
};

struct Agent {
  std::string id;
  AgentType type = AgentType::kVehicle;
  std::vector<AgentState> states;  // exactly t_hist + t_fut entries, t ascending
};

struct Polyline {
  std::vector<Vec2> points;  // >= 2, consecutive points distinct
  PolylineCategory category = PolylineCategory::kLane;
  std::vector<PointCategory> point_categories;  // one per point

  /// Local frame: first point, first-segment tangent.
  ReferenceFrame frame() const {
    ReferenceFrame f;
    f.x = points[0].x;
    f.y = points[0].y;
    f.heading = wrap_angle(std::atan2(points[1].y - points[0].y,
                                      points[1].x - points[0].x));
    f.t = 0;
    return f;
  }
};

struct Relation {
  int src = 0;
  int dst = 0;
  RelationType type = RelationType::kNearby;
};

struct MapGraph {
  std::vector<Polyline> polylines;
  std::vector<Relation> relations;
};

struct Scene {
  std::string id;
  MapGraph map;
  std::vector<Agent> agents;
  int t_hist = 50;
  int t_fut = 60;
  std::vector<std::string> focal_agent_ids;

  int horizon() const { return t_hist + t_fut; }

  const Agent* find_agent(const std::string& agent_id) const {
    for (const auto& a : agents)
      if (a.id == agent_id) return &a;
    return nullptr;
  }
};

/// Checks every scene invariant; returns one message per violation, each
/// naming the offending field. Empty means the scene is well formed.
inline std::vector<std::string> validate_scene(const Scene& scene) {
  std::vector<std::string> out;
  auto fail = [&out](std::string msg) { out.push_back(std::move(msg)); };

  if (scene.t_hist <= 0) fail("t_hist: must be positive");
  if (scene.t_fut <= 0) fail("t_fut: must be positive");

  for (std::size_t m = 0; m < scene.map.polylines.size(); ++m) {
    const Polyline& pl = scene.map.polylines[m];
    const std::string where = "map.polylines[" + std::to_string(m) + "]";
    if (pl.points.size() < 2) fail(where + ".points: needs at least 2 points");
    if (pl.point_categories.size() != pl.points.size())
      fail(where + ".point_categories: size mismatch with points");
    for (std::size_t i = 0; i + 1 < pl.points.size(); ++i) {
      if (pl.points[i].x == pl.points[i + 1].x && pl.points[i].y == pl.points[i + 1].y)
        fail(where + ".points[" + std::to_string(i + 1) + "]: identical to previous point");
    }
  }

  const int m_count = static_cast<int>(scene.map.polylines.size());
  for (std::size_t r = 0; r < scene.map.relations.size(); ++r) {
    const Relation& rel = scene.map.relations[r];
    const std::string where = "map.relations[" + std::to_string(r) + "]";
    if (rel.src < 0 || rel.src >= m_count) fail(where + ".src: index out of range");
    if (rel.dst < 0 || rel.dst >= m_count) fail(where + ".dst: index out of range");
    if (rel.src == rel.dst) fail(where + ": self-relation not allowed");
  }

  for (std::size_t a = 0; a < scene.agents.size(); ++a) {
    const Agent& ag = scene.agents[a];
    const std::string where = "agents[" + std::to_string(a) + "] (" + ag.id + ")";
    if (ag.states.size() != static_cast<std::size_t>(scene.horizon()))
      fail(where + ".states: expected " + std::to_string(scene.horizon()) +
           " states, got " + std::to_string(ag.states.size()));
    for (std::size_t s = 0; s < ag.states.size(); ++s) {
      const AgentState& st = ag.states[s];
      if (st.t != static_cast<int>(s))
        fail(where + ".states[" + std::to_string(s) + "].t: expected " +
             std::to_string(s) + ", got " + std::to_string(st.t));
      if (!(st.heading > -kPi - 1e-12 && st.heading <= kPi + 1e-12))
        fail(where + ".states[" + std::to_string(s) + "].heading: not wrapped to (-pi, pi]");
      if (!std::isfinite(st.x) || !std::isfinite(st.y) || !std::isfinite(st.heading))
        fail(where + ".states[" + std::to_string(s) + "]: non-finite value");
    }
    for (std::size_t b = 0; b < a; ++b)
      if (scene.agents[b].id == ag.id) fail(where + ".id: duplicate agent id");
  }

  for (const auto& fid : scene.focal_agent_ids)
    if (scene.find_agent(fid) == nullptr)
      fail("focal: agent id '" + fid + "' does not exist");

  return out;
}

/// Views over the shared time axis; history covers t < t_hist, future the
/// remaining t_fut steps.
struct SceneSplit {
  const Scene* scene = nullptr;

  int history_len() const { return scene->t_hist; }
  int future_len() const { return scene->t_fut; }

  std::span<const AgentState> history(const Agent& a) const {
    return {a.states.data(), static_cast<std::size_t>(scene->t_hist)};
  }
  std::span<const AgentState> future(const Agent& a) const {
    return {a.states.data() + scene->t_hist, static_cast<std::size_t>(scene->t_fut)};
  }
};

inline SceneSplit split_history_future(const Scene& scene) { return SceneSplit{&scene}; }

inline bool angles_equal_mod_2pi(double a, double b, double tol) {
  return std::abs(wrap_angle(a - b)) <= tol;
}

/// Field-by-field semantic equality; angles compared modulo 2*pi.
inline bool scenes_equal(const Scene& a, const Scene& b, double tol = 1e-12) {
  if (a.id != b.id || a.t_hist != b.t_hist || a.t_fut != b.t_fut) return false;
  if (a.focal_agent_ids != b.focal_agent_ids) return false;
  if (a.map.polylines.size() != b.map.polylines.size()) return false;
  if (a.map.relations.size() != b.map.relations.size()) return false;
  for (std::size_t m = 0; m < a.map.polylines.size(); ++m) {
    const auto& pa = a.map.polylines[m];
    const auto& pb = b.map.polylines[m];
    if (pa.category != pb.category || pa.points.size() != pb.points.size()) return false;
    if (pa.point_categories != pb.point_categories) return false;
    for (std::size_t i = 0; i < pa.points.size(); ++i)
      if (std::abs(pa.points[i].x - pb.points[i].x) > tol ||
          std::abs(pa.points[i].y - pb.points[i].y) > tol)
        return false;
  }
  for (std::size_t r = 0; r < a.map.relations.size(); ++r) {
    const auto& ra = a.map.relations[r];
    const auto& rb = b.map.relations[r];
    if (ra.src != rb.src || ra.dst != rb.dst || ra.type != rb.type) return false;
  }
  if (a.agents.size() != b.agents.size()) return false;
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    const auto& aa = a.agents[i];
    const auto& ab = b.agents[i];
    if (aa.id != ab.id || aa.type != ab.type || aa.states.size() != ab.states.size())
      return false;
    for (std::size_t s = 0; s < aa.states.size(); ++s) {
      const auto& sa = aa.states[s];
      const auto& sb = ab.states[s];
      if (sa.t != sb.t || sa.valid != sb.valid) return false;
      if (std::abs(sa.x - sb.x) > tol || std::abs(sa.y - sb.y) > tol) return false;
      if (!angles_equal_mod_2pi(sa.heading, sb.heading, tol)) return false;
    }
  }
  return true;
}

}  // namespace trajcast
