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
#include <cstdio>
#include <filesystem>

#include "trajcast/train.hpp"
#include "trajcast/scene_gen.hpp"

using namespace trajcast;

namespace {

RunConfig tiny_run(std::uint64_t seed) {
  RunConfig cfg;
  apply_preset(cfg, "tiny");
  cfg.seed = seed;
  cfg.model.dropout = 0.1;
  cfg.train.epochs = 2;
  cfg.train.batch = 2;
  cfg.train.max_steps = 0;
  cfg.resolve();
  return cfg;
}

std::vector<Scene> tiny_scenes() {
  std::vector<Scene> scenes;
  scenes.push_back(make_minimal_scene(10, 20));
  Scene second = make_minimal_scene(10, 20);
  second.id = "minimal_b";
  for (auto& agent : second.agents)
    for (auto& st : agent.states) st.y += 1.0;
  scenes.push_back(second);
  return scenes;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0, 100, 5e-4) == Catch::Approx(5e-4));
  CHECK(cosine_lr(99, 100, 5e-4) < 1e-6);
  CHECK(cosine_lr(50, 100, 5e-4) < 5e-4);
  CHECK(cosine_lr(0, 1, 5e-4) == Catch::Approx(5e-4));
}

TEST_CASE("AdamW matches hand-computed updates on one parameter") {
  ParamStore<double> store;
  auto& p = store.create("theta", 1, 1);
  p.value[0] = 2.0;
  AdamW<double> opt(store, 0.01);

  // Loss 0.5 * theta^2, gradient = theta.
  double m = 0.0, v = 0.0, ref = 2.0;
  for (int t = 1; t <= 3; ++t) {
    p.grad[0] = p.value[0];
    const double g = ref;  // reference path uses its own copy
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    ref -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * ref);
    opt.step(store, 0.1);
    p.grad[0] = 0.0;
    CHECK(p.value[0] == Catch::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic and parallel-reduction invariant") {
  const auto scenes = tiny_scenes();

  auto run = [&](int jobs) {
    auto cfg = tiny_run(7);
    cfg.jobs = jobs;
    auto model = build_model<float>(cfg.model, cfg.seed);
    train(model, scenes, cfg);
    std::vector<float> flat;
    for (std::size_t i = 0; i < model.params.size(); ++i)
      for (float v : model.params.at(i).value) flat.push_back(v);
    return flat;
  };

  const auto a = run(1);
  const auto b = run(1);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bitwise

  const auto c = run(2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == c[i]);  // jobs-invariant
}

TEST_CASE("training writes logs and checkpoints; loss parts sum to total") {
  const auto scenes = tiny_scenes();
  auto cfg = tiny_run(9);
  auto model = build_model<float>(cfg.model, cfg.seed);
  const std::string dir = std::filesystem::temp_directory_path() / "trajcast_train_test";
  std::filesystem::create_directories(dir);
  const auto result = train(model, scenes, cfg, dir);

  CHECK(result.steps == 2);  // 2 scenes / batch 2 * 2 epochs
  REQUIRE(result.log.size() == 2);
  for (const auto& row : result.log) {
    double sum = 0.0;
    for (double p : row.loss.parts()) sum += p;
    CHECK(std::abs(sum - row.loss.total) < 1e-6);
    CHECK(row.lr >= 0.0);  // the cosine endpoint reaches 0 on the last step
  }
  CHECK(std::filesystem::exists(dir + "/checkpoint.bin"));
  CHECK(std::filesystem::exists(dir + "/train_log.csv"));

  SECTION("checkpoint round trip restores values and step") {
    auto model2 = build_model<float>(cfg.model, 999);  // different init
    const auto step = load_checkpoint(model2.params, config_hash(cfg.model),
                                      dir + "/checkpoint.bin");
    CHECK(step == 2);
    for (std::size_t i = 0; i < model.params.size(); ++i)
      for (std::size_t j = 0; j < model.params.at(i).size(); ++j)
        CHECK(model.params.at(i).value[j] == model2.params.at(i).value[j]);
  }

  SECTION("config hash mismatch rejected") {
    auto other = cfg.model;
    other.embed_dim = 64;
    auto model3 = build_model<float>(other, 1);
    CHECK_THROWS_AS(
        load_checkpoint(model3.params, config_hash(other), dir + "/checkpoint.bin"),
        ConfigError);
  }

  SECTION("resume continues the step counter") {
    auto model4 = build_model<float>(cfg.model, cfg.seed);
    const auto step = load_checkpoint(model4.params, config_hash(cfg.model),
                                      dir + "/checkpoint.bin");
    auto cfg2 = cfg;
    cfg2.train.epochs = 4;
    const auto res2 = train(model4, scenes, cfg2, "", step);
    CHECK(res2.steps == 4);
    REQUIRE(!res2.log.empty());
    CHECK(res2.log.front().step == 3);
  }
}

TEST_CASE("training loss decreases on a small overfit run") {
  // A short smoke run: total loss after a few dozen steps is below the
  // starting loss. The full overfit bar lives in the acceptance suite.
  auto cfg = tiny_run(11);
  cfg.model.dropout = 0.0;
  cfg.train.epochs = 30;
  cfg.train.batch = 2;
  cfg.resolve();
  const auto scenes = tiny_scenes();
  auto model = build_model<float>(cfg.model, cfg.seed);
  const auto result = train(model, scenes, cfg);
  REQUIRE(result.log.size() >= 20);
  const double first = result.log[0].loss.total;
  const double last = result.log.back().loss.total;
  CHECK(last < first);
}

TEST_CASE("forecast_scenes is parallel-invariant") {
  auto cfg = tiny_run(13);
  auto model = build_model<float>(cfg.model, cfg.seed);
  std::vector<Scene> scenes;
  for (std::uint64_t s = 0; s < 4; ++s) {
    GeneratorConfig gcfg = cfg.generator;
    gcfg.topology = LaneTopology::kStraight;
    scenes.push_back(generate_synthetic_scene(gcfg, s, "s" + std::to_string(s)));
  }
  const auto serial = forecast_scenes(model, scenes, 1);
  const auto parallel = forecast_scenes(model, scenes, 3);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    for (std::size_t a = 0; a < serial[i].agents.size(); ++a)
      for (std::size_t k = 0; k < serial[i].agents[a].modes.size(); ++k)
        for (std::size_t t = 0; t < serial[i].agents[a].modes[k].size(); ++t) {
          CHECK(serial[i].agents[a].modes[k][t].x == parallel[i].agents[a].modes[k][t].x);
          CHECK(serial[i].agents[a].modes[k][t].y == parallel[i].agents[a].modes[k][t].y);
        }
  }
}
