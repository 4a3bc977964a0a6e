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

#include <cmath>
#include <string>
#include <vector>

#include "trajcast/geometry.hpp"

namespace trajcast {

/// K alternative futures for one agent, in global coordinates, with one
/// probability per mode.
struct AgentForecast {
  std::string agent_id;
  std::vector<std::vector<PosePoint>> modes;  // K x T_fut
  std::vector<double> probabilities;          // K, sums to 1

  int num_modes() const { return static_cast<int>(modes.size()); }
};

struct Forecast {
  std::string scene_id;
  int t_fut = 0;
  std::vector<AgentForecast> agents;

  const AgentForecast* find(const std::string& agent_id) const {
    for (const auto& a : agents)
      if (a.agent_id == agent_id) return &a;
    return nullptr;
  }
};

inline bool probabilities_normalized(const AgentForecast& af, double tol = 1e-6) {
  double sum = 0.0;
  for (double p : af.probabilities) {
    if (p < 0.0) return false;
    sum += p;
  }
  return std::abs(sum - 1.0) <= tol;
}

}  // namespace trajcast
