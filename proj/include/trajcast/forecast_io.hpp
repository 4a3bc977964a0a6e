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
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "trajcast/forecast.hpp"
#include "trajcast/scene.hpp"

namespace trajcast {

/// Prediction file: per focal agent, K rows of (x, y) pairs over the future
/// window plus one probability row (sums to 1 within 1e-6). Headings ride
/// along for visualization.
inline nlohmann::ordered_json forecast_to_json(const Forecast& fc, const Scene& scene) {
  nlohmann::ordered_json j;
  j["scene_id"] = fc.scene_id;
  j["t_fut"] = fc.t_fut;
  j["agents"] = nlohmann::ordered_json::array();
  for (const auto& fid : scene.focal_agent_ids) {
    const AgentForecast* af = fc.find(fid);
    if (af == nullptr) continue;
    nlohmann::ordered_json ja;
    ja["id"] = af->agent_id;
    ja["probabilities"] = af->probabilities;
    ja["modes"] = nlohmann::ordered_json::array();
    for (const auto& mode : af->modes) {
      nlohmann::ordered_json jm;
      jm["points"] = nlohmann::ordered_json::array();
      jm["headings"] = nlohmann::ordered_json::array();
      for (const auto& p : mode) {
        jm["points"].push_back({p.x, p.y});
        jm["headings"].push_back(p.heading);
      }
      ja["modes"].push_back(std::move(jm));
    }
    j["agents"].push_back(std::move(ja));
  }
  return j;
}

inline void write_forecast(const Forecast& fc, const Scene& scene,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open forecast file for writing: " + path);
  out << forecast_to_json(fc, scene).dump(1) << "\n";
}

/// Static sketch of one scene: map polylines and ground truth as <polyline>
/// elements, predictions as <path> elements (exactly K per focal agent).
inline std::string forecast_svg(const Forecast& fc, const Scene& scene) {
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  auto grow = [&](double x, double y) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  };
  for (const auto& pl : scene.map.polylines)
    for (const auto& p : pl.points) grow(p.x, p.y);
  for (const auto& a : scene.agents)
    for (const auto& st : a.states)
      if (st.valid) grow(st.x, st.y);
  for (const auto& af : fc.agents)
    for (const auto& mode : af.modes)
      for (const auto& p : mode) grow(p.x, p.y);
  const double margin = 5.0;
  min_x -= margin;
  min_y -= margin;
  max_x += margin;
  max_y += margin;
  const double scale = 8.0;
  const double w = (max_x - min_x) * scale, h = (max_y - min_y) * scale;
  auto sx = [&](double x) { return (x - min_x) * scale; };
  auto sy = [&](double y) { return (max_y - y) * scale; };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (const auto& pl : scene.map.polylines) {
    os << "<polyline fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : pl.points) os << sx(p.x) << ',' << sy(p.y) << ' ';
    os << "\"/>\n";
  }
  for (const auto& fid : scene.focal_agent_ids) {
    const Agent* agent = scene.find_agent(fid);
    if (agent == nullptr) continue;
    os << "<polyline fill=\"none\" stroke=\"#2e8b57\" stroke-width=\"2\" points=\"";
    for (const auto& st : agent->states)
      if (st.valid) os << sx(st.x) << ',' << sy(st.y) << ' ';
    os << "\"/>\n";
  }
  for (const auto& fid : scene.focal_agent_ids) {
    const AgentForecast* af = fc.find(fid);
    if (af == nullptr) continue;
    for (const auto& mode : af->modes) {
      os << "<path class=\"pred\" fill=\"none\" stroke=\"#d22b2b\" stroke-width=\"1.5\" d=\"";
      for (std::size_t i = 0; i < mode.size(); ++i)
        os << (i == 0 ? 'M' : 'L') << sx(mode[i].x) << ' ' << sy(mode[i].y);
      os << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace trajcast
