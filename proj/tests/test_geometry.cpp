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
#include <random>

#include "trajcast/geometry.hpp"

using namespace trajcast;

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(std::abs(wrap_angle(2.0 * kPi)) < 1e-12);
  CHECK(wrap_angle(-3.0 * kPi / 2.0) == Catch::Approx(kPi / 2.0));
  CHECK(wrap_angle(kPi) == Catch::Approx(kPi));
  CHECK(wrap_angle(-kPi) == Catch::Approx(kPi));
  CHECK(wrap_angle(4.0) == Catch::Approx(4.0 - 2.0 * kPi));
  CHECK_THROWS_AS(wrap_angle(std::numeric_limits<double>::quiet_NaN()), NumericError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> big(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double theta = big(rng);
    const double w = wrap_angle(theta);
    CHECK(w > -kPi - 1e-12);
    CHECK(w <= kPi + 1e-12);
    // Same angle modulo 2*pi.
    CHECK(std::abs(std::remainder(w - theta, 2.0 * kPi)) < 1e-9);
  }
}

TEST_CASE("relative_descriptor analytic cases") {
  ReferenceFrame a{0.0, 0.0, 0.0, 0};

  SECTION("identity") {
    const RelDescriptor d = relative_descriptor(a, a);
    CHECK(d.distance == 0.0);
    CHECK(d.direction == 0.0);
    CHECK(d.rel_orientation == 0.0);
    CHECK(d.dt == 0.0);
  }

  SECTION("unit diagonal") {
    ReferenceFrame b{1.0, 1.0, kPi / 2.0, 0};
    const RelDescriptor d = relative_descriptor(a, b);
    CHECK(d.distance == Catch::Approx(std::sqrt(2.0)));
    CHECK(d.direction == Catch::Approx(kPi / 4.0));
    CHECK(d.rel_orientation == Catch::Approx(kPi / 2.0));
    CHECK(d.dt == 0.0);
  }
}

TEST_CASE("relative_descriptor is SE(2) invariant") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-100.0, 100.0);
  std::uniform_real_distribution<double> ang(-kPi, kPi);
  std::uniform_int_distribution<int> ti(-20, 20);

  for (int trial = 0; trial < 200; ++trial) {
    ReferenceFrame a{pos(rng), pos(rng), wrap_angle(ang(rng)), ti(rng)};
    ReferenceFrame b{pos(rng), pos(rng), wrap_angle(ang(rng)), ti(rng)};
    const double gx = pos(rng), gy = pos(rng), gth = ang(rng);
    auto apply = [&](const ReferenceFrame& f) {
      ReferenceFrame out;
      out.x = gx + std::cos(gth) * f.x - std::sin(gth) * f.y;
      out.y = gy + std::sin(gth) * f.x + std::cos(gth) * f.y;
      out.heading = wrap_angle(f.heading + gth);
      out.t = f.t;
      return out;
    };
    const RelDescriptor d0 = relative_descriptor(a, b);
    const RelDescriptor d1 = relative_descriptor(apply(a), apply(b));
    CHECK(std::abs(d0.distance - d1.distance) < 1e-9);
    CHECK(std::abs(wrap_angle(d0.direction - d1.direction)) < 1e-9);
    CHECK(std::abs(wrap_angle(d0.rel_orientation - d1.rel_orientation)) < 1e-9);
    CHECK(d0.dt == d1.dt);
  }
}

TEST_CASE("transform_to_frame round trip") {
  SECTION("identity frame") {
    ReferenceFrame f{0.0, 0.0, 0.0, 0};
    std::vector<PosePoint> pts = {{1.0, 2.0, 0.5}, {-3.0, 0.25, -1.0}};
    const auto out = transform_to_frame(pts, f);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(out[i].x == Catch::Approx(pts[i].x));
      CHECK(out[i].y == Catch::Approx(pts[i].y));
      CHECK(out[i].heading == Catch::Approx(pts[i].heading));
    }
  }

  SECTION("point equal to frame origin") {
    ReferenceFrame f{3.0, -2.0, 1.1, 0};
    std::vector<PosePoint> pts = {{3.0, -2.0, 2.0}};
    const auto out = transform_to_frame(pts, f);
    CHECK(std::abs(out[0].x) < 1e-12);
    CHECK(std::abs(out[0].y) < 1e-12);
    CHECK(out[0].heading == Catch::Approx(wrap_angle(2.0 - 1.1)));
  }

  SECTION("random round trip within 1e-9") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(-200.0, 200.0);
    std::uniform_real_distribution<double> ang(-kPi, kPi);
    for (int trial = 0; trial < 100; ++trial) {
      ReferenceFrame f{pos(rng), pos(rng), wrap_angle(ang(rng)), 0};
      std::vector<PosePoint> pts;
      for (int i = 0; i < 10; ++i) pts.push_back({pos(rng), pos(rng), wrap_angle(ang(rng))});
      const auto local = transform_to_frame(pts, f);
      const auto back = transform_from_frame(local, f);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(std::abs(back[i].x - pts[i].x) < 1e-9);
        CHECK(std::abs(back[i].y - pts[i].y) < 1e-9);
        CHECK(std::abs(wrap_angle(back[i].heading - pts[i].heading)) < 1e-9);
      }
    }
  }
}

TEST_CASE("fourier_features") {
  SECTION("zero input: sin 0, cos 1") {
    const auto bands = FourierBands::log_spaced(8, 0.5, 4.0, true);
    const std::vector<double> x(3, 0.0);
    const auto f = bands(x);
    REQUIRE(f.size() == bands.feature_dim(3));
    for (std::size_t i = 0; i < 2 * 3 * 8; i += 2) {
      CHECK(f[i] == 0.0);
      CHECK(f[i + 1] == 1.0);
    }
    for (std::size_t i = 2 * 3 * 8; i < f.size(); ++i) CHECK(f[i] == 0.0);
  }

  SECTION("d=1, x=1, bands {1,2} -> [0,1,0,1]") {
    FourierBands bands;
    bands.freqs = {1.0, 2.0};
    bands.append_raw = false;
    const std::vector<double> x = {1.0};
    const auto f = bands(x);
    REQUIRE(f.size() == 4);
    CHECK(std::abs(f[0]) < 1e-12);
    CHECK(f[1] == Catch::Approx(1.0));
    CHECK(std::abs(f[2]) < 1e-12);
    CHECK(f[3] == Catch::Approx(1.0));
  }

  SECTION("matches scalar-by-scalar oracle, bounded in [-1,1]") {
    const auto bands = FourierBands::log_spaced(64, 1.0 / 64.0, 8.0, true);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> val(-30.0, 30.0);
    for (int trial = 0; trial < 50; ++trial) {
      const std::vector<double> x = {val(rng), val(rng)};
      const auto f = bands(x);
      std::size_t k = 0;
      for (double xi : x) {
        for (double fr : bands.freqs) {
          CHECK(f[k] == std::sin(2.0 * kPi * fr * xi));
          CHECK(f[k] >= -1.0);
          CHECK(f[k] <= 1.0);
          ++k;
          CHECK(f[k] == std::cos(2.0 * kPi * fr * xi));
          ++k;
        }
      }
      CHECK(f[k] == x[0]);
      CHECK(f[k + 1] == x[1]);
    }
  }
}

TEST_CASE("closest_point_descriptor") {
  SECTION("agent on the polyline") {
    std::vector<Vec2> pts = {{-1.0, 0.0}, {1.0, 0.0}};
    ReferenceFrame agent{0.5, 0.0, 0.3, 0};
    const auto d = closest_point_descriptor(agent, pts);
    CHECK(d.distance < 1e-12);
    CHECK(d.direction == 0.0);
  }

  SECTION("analytic projection") {
    std::vector<Vec2> pts = {{-1.0, 0.0}, {1.0, 0.0}};
    ReferenceFrame agent{0.0, 1.0, 0.0, 0};
    const auto cp = closest_point_on_polyline(pts, agent.x, agent.y);
    CHECK(cp.distance == Catch::Approx(1.0));
    CHECK(std::abs(cp.point.x) < 1e-12);
    CHECK(std::abs(cp.point.y) < 1e-12);
    CHECK(cp.tangent_heading == Catch::Approx(0.0));
  }

  SECTION("matches dense-sampling oracle within 1e-4") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> pos(-20.0, 20.0);
    for (int trial = 0; trial < 25; ++trial) {
      std::vector<Vec2> pts;
      double x = pos(rng), y = pos(rng);
      pts.push_back({x, y});
      for (int i = 0; i < 4; ++i) {
        x += std::uniform_real_distribution<double>(0.5, 6.0)(rng);
        y += pos(rng) * 0.2;
        pts.push_back({x, y});
      }
      ReferenceFrame agent{pos(rng), pos(rng), 0.0, 0};
      const auto d = closest_point_descriptor(agent, pts);

      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        for (int k = 0; k <= 10000; ++k) {
          const double u = k / 10000.0;
          const double cx = pts[i].x + u * (pts[i + 1].x - pts[i].x);
          const double cy = pts[i].y + u * (pts[i + 1].y - pts[i].y);
          best = std::min(best, norm2(agent.x - cx, agent.y - cy));
        }
      }
      CHECK(std::abs(d.distance - best) < 1e-4);
      // Closest distance never exceeds the distance to any vertex.
      for (const auto& p : pts)
        CHECK(d.distance <= norm2(agent.x - p.x, agent.y - p.y) + 1e-12);
    }
  }
}
