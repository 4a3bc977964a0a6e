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

#include "trajcast/metrics.hpp"
#include "trajcast/scene_gen.hpp"
#include "trajcast/scene_io.hpp"

using namespace trajcast;

namespace {

std::string minimal_scene_text(double heading = 0.25) {
  Scene s;
  s.id = "mini";
  s.t_hist = 2;
  s.t_fut = 3;
  Polyline pl;
  pl.points = {{0.0, 0.0}, {5.0, 0.0}};
  pl.point_categories = {PointCategory::kCenterline, PointCategory::kCenterline};
  s.map.polylines.push_back(pl);
  Agent a;
  a.id = "a0";
  a.type = AgentType::kVehicle;
  for (int t = 0; t < 5; ++t) a.states.push_back({t, 0.5 * t, 0.0, heading, true});
  s.agents.push_back(a);
  s.focal_agent_ids = {"a0"};
  return scene_to_string(s);
}

}  // namespace

TEST_CASE("load_scene on the smallest legal scene") {
  const Scene s = scene_from_string(minimal_scene_text());
  CHECK(s.agents.size() == 1);
  CHECK(s.map.polylines.size() == 1);
  CHECK(s.t_hist == 2);
  CHECK(s.t_fut == 3);
}

TEST_CASE("load_scene wraps headings") {
  // heading = 4.0 rad is accepted and stored wrapped to 4.0 - 2*pi.
  const Scene s = scene_from_string(minimal_scene_text(4.0));
  CHECK(s.agents[0].states[0].heading == Catch::Approx(4.0 - 2.0 * kPi));
}

TEST_CASE("load_scene rejects a 1-point polyline, naming it") {
  Scene s = scene_from_string(minimal_scene_text());
  s.map.polylines[0].points.resize(1);
  s.map.polylines[0].point_categories.resize(1);
  const std::string text = scene_to_string(s);
  try {
    scene_from_string(text);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("map.polylines[0]") != std::string::npos);
  }
}

TEST_CASE("validate_scene reports specific violations") {
  Scene s = scene_from_string(minimal_scene_text());
  CHECK(validate_scene(s).empty());

  SECTION("relation referencing polyline index M") {
    s.map.relations.push_back({0, 1, RelationType::kNearby});
    const auto v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("relations[0].dst") != std::string::npos);
  }

  SECTION("wrong state count") {
    s.agents[0].states.pop_back();
    const auto v = validate_scene(s);
    REQUIRE(v.size() == 1);
    CHECK(v[0].find("states") != std::string::npos);
  }
}

TEST_CASE("split_history_future") {
  GeneratorConfig cfg;
  cfg.topology = LaneTopology::kStraight;

  SECTION("default config gives (50, 60)") {
    const Scene s = generate_synthetic_scene(cfg, 3);
    const auto split = split_history_future(s);
    CHECK(split.history(s.agents[0]).size() == 50);
    CHECK(split.future(s.agents[0]).size() == 60);
  }

  SECTION("custom config gives (5, 10); concatenation is identity") {
    cfg.t_hist = 5;
    cfg.t_fut = 10;
    const Scene s = generate_synthetic_scene(cfg, 3);
    const auto split = split_history_future(s);
    const auto h = split.history(s.agents[0]);
    const auto f = split.future(s.agents[0]);
    REQUIRE(h.size() == 5);
    REQUIRE(f.size() == 10);
    std::vector<AgentState> cat(h.begin(), h.end());
    cat.insert(cat.end(), f.begin(), f.end());
    for (std::size_t i = 0; i < cat.size(); ++i) {
      CHECK(cat[i].t == s.agents[0].states[i].t);
      CHECK(cat[i].x == s.agents[0].states[i].x);
    }
  }
}

TEST_CASE("generator determinism: identical (config, seed) => identical bytes") {
  GeneratorConfig cfg;
  cfg.topology = LaneTopology::kStraight;
  const Scene a = generate_synthetic_scene(cfg, 7);
  const Scene b = generate_synthetic_scene(cfg, 7);
  CHECK(scene_to_string(a) == scene_to_string(b));
  const Scene c = generate_synthetic_scene(cfg, 8);
  CHECK(scene_to_string(a) != scene_to_string(c));
}

TEST_CASE("generator kinematics on a straight road") {
  GeneratorConfig cfg;
  cfg.topology = LaneTopology::kStraight;
  cfg.parked_prob = 0.0;
  cfg.partial_history_prob = 0.0;
  const Scene s = generate_synthetic_scene(cfg, 42);
  for (const auto& agent : s.agents) {
    // Constant speed: displacement per step is v * 0.1 for some fixed v.
    const double v0 = norm2(agent.states[1].x - agent.states[0].x,
                            agent.states[1].y - agent.states[0].y);
    for (std::size_t t = 0; t + 1 < agent.states.size(); ++t) {
      const double d = norm2(agent.states[t + 1].x - agent.states[t].x,
                             agent.states[t + 1].y - agent.states[t].y);
      CHECK(std::abs(d - v0) < 1e-9);
    }
    // Heading aligned with the motion direction within 1e-6.
    for (std::size_t t = 0; t + 1 < agent.states.size(); ++t) {
      const double mdir = std::atan2(agent.states[t + 1].y - agent.states[t].y,
                                     agent.states[t + 1].x - agent.states[t].x);
      CHECK(std::abs(wrap_angle(agent.states[t].heading - mdir)) < 1e-6);
    }
  }
}

TEST_CASE("T-intersection scenes contain a >45 degree future turn") {
  GeneratorConfig cfg;
  cfg.topology = LaneTopology::kTIntersection;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = generate_synthetic_scene(cfg, seed);
    const auto kept = filter_turns({s}, 45.0 * kPi / 180.0);
    bool found = false;
    for (const auto& [scene_idx, agent_id] : kept) {
      if (scene_idx == 0) found = true;
    }
    CHECK(found);
  }
}

TEST_CASE("every generated scene passes validate_scene") {
  for (int topo = 0; topo < 3; ++topo) {
    GeneratorConfig cfg;
    cfg.topology = static_cast<LaneTopology>(topo);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Scene s = generate_synthetic_scene(cfg, seed);
      const auto violations = validate_scene(s);
      for (const auto& v : violations) UNSCOPED_INFO(v);
      CHECK(violations.empty());
    }
  }
}

TEST_CASE("scene file round trip is semantically equal") {
  GeneratorConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Scene s = generate_synthetic_scene(cfg, seed, "scene_rt");
    const Scene back = scene_from_string(scene_to_string(s));
    CHECK(scenes_equal(s, back, 1e-12));
  }
}

TEST_CASE("parse errors name the problem") {
  CHECK_THROWS_AS(scene_from_string("{not json"), ParseError);
  CHECK_THROWS_AS(scene_from_string("{\"id\": \"x\"}"), ParseError);
}
