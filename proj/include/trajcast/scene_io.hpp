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

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "trajcast/scene.hpp"

namespace trajcast {

using ordered_json = nlohmann::ordered_json;

namespace detail {

template <class E>
E parse_enum(const std::string& s, const std::string& field) {
  const auto e = enum_from_string<E>(s);
  if (!e) throw ParseError(field + ": unknown value '" + s + "'");
  return *e;
}

}  // namespace detail

inline ordered_json scene_to_json(const Scene& scene) {
  ordered_json j;
  j["id"] = scene.id;
  j["t_hist"] = scene.t_hist;
  j["t_fut"] = scene.t_fut;
  ordered_json jmap;
  jmap["polylines"] = ordered_json::array();
  for (const auto& pl : scene.map.polylines) {
    ordered_json jp;
    jp["points"] = ordered_json::array();
    for (const auto& p : pl.points) jp["points"].push_back({p.x, p.y});
    jp["category"] = to_string(pl.category);
    jp["point_categories"] = ordered_json::array();
    for (auto c : pl.point_categories) jp["point_categories"].push_back(to_string(c));
    jmap["polylines"].push_back(std::move(jp));
  }
  jmap["relations"] = ordered_json::array();
  for (const auto& r : scene.map.relations)
    jmap["relations"].push_back({r.src, r.dst, to_string(r.type)});
  j["map"] = std::move(jmap);
  j["agents"] = ordered_json::array();
  for (const auto& a : scene.agents) {
    ordered_json ja;
    ja["id"] = a.id;
    ja["type"] = to_string(a.type);
    ja["states"] = ordered_json::array();
    for (const auto& s : a.states)
      ja["states"].push_back({s.t, s.x, s.y, s.heading, s.valid ? 1 : 0});
    j["agents"].push_back(std::move(ja));
  }
  j["focal"] = scene.focal_agent_ids;
  return j;
}

/// Parses the scenario object. Headings are wrapped on load; all other
/// invariants are checked by validate_scene afterwards.
inline Scene scene_from_json(const ordered_json& j) {
  Scene scene;
  try {
    scene.id = j.at("id").get<std::string>();
    scene.t_hist = j.at("t_hist").get<int>();
    scene.t_fut = j.at("t_fut").get<int>();
    const auto& jmap = j.at("map");
    std::size_t mi = 0;
    for (const auto& jp : jmap.at("polylines")) {
      Polyline pl;
      for (const auto& pt : jp.at("points"))
        pl.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
      pl.category = detail::parse_enum<PolylineCategory>(
          jp.at("category").get<std::string>(),
          "map.polylines[" + std::to_string(mi) + "].category");
      for (const auto& pc : jp.at("point_categories"))
        pl.point_categories.push_back(detail::parse_enum<PointCategory>(
            pc.get<std::string>(),
            "map.polylines[" + std::to_string(mi) + "].point_categories"));
      scene.map.polylines.push_back(std::move(pl));
      ++mi;
    }
    std::size_t ri = 0;
    for (const auto& jr : jmap.at("relations")) {
      Relation r;
      r.src = jr.at(0).get<int>();
      r.dst = jr.at(1).get<int>();
      r.type = detail::parse_enum<RelationType>(
          jr.at(2).get<std::string>(), "map.relations[" + std::to_string(ri) + "].type");
      scene.map.relations.push_back(r);
      ++ri;
    }
    for (const auto& ja : j.at("agents")) {
      Agent a;
      a.id = ja.at("id").get<std::string>();
      a.type = detail::parse_enum<AgentType>(ja.at("type").get<std::string>(),
                                             "agents." + a.id + ".type");
      for (const auto& js : ja.at("states")) {
        AgentState s;
        s.t = js.at(0).get<int>();
        s.x = js.at(1).get<double>();
        s.y = js.at(2).get<double>();
        s.heading = wrap_angle(js.at(3).get<double>());
        s.valid = js.at(4).get<int>() != 0;
        a.states.push_back(s);
      }
      scene.agents.push_back(std::move(a));
    }
    for (const auto& f : j.at("focal")) scene.focal_agent_ids.push_back(f.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene parse error: ") + e.what());
  }
  return scene;
}

inline std::string scene_to_string(const Scene& scene) {
  return scene_to_json(scene).dump(1) + "\n";
}

inline Scene scene_from_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene parse error: ") + e.what());
  }
  Scene scene = scene_from_json(j);
  const auto violations = validate_scene(scene);
  if (!violations.empty()) {
    std::ostringstream msg;
    msg << "scene validation failed (" << violations.size() << " violation(s)):";
    for (const auto& v : violations) msg << "\n  " << v;
    throw ValidationError(msg.str());
  }
  return scene;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scene file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return scene_from_string(buf.str());
}

inline void save_scene(const Scene& scene, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open scene file for writing: " + path);
  out << scene_to_string(scene);
}

}  // namespace trajcast
