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

#include "trajcast/loss.hpp"
#include "trajcast/scene_gen.hpp"

using namespace trajcast;

namespace {

ModelConfig tiny_cfg() {
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

/// Exponentially accurate trapezoid quadrature of the von-Mises normalizer:
/// I0(k) = (1 / 2 pi) * integral exp(k cos t) dt over a period.
double bessel_i0_quadrature(double kappa, int points = 4096) {
  double sum = 0.0;
  for (int i = 0; i < points; ++i) {
    const double t = -kPi + 2.0 * kPi * i / points;
    sum += std::exp(kappa * std::cos(t));
  }
  return sum / points;
}

/// Simpson quadrature of the Laplace density over [loc - 50b, loc + 50b],
/// split at the kink.
double laplace_density_integral(double loc, double scale, int half_points = 2000) {
  auto density = [&](double x) {
    return std::exp(-std::abs(x - loc) / scale) / (2.0 * scale);
  };
  auto simpson = [&](double a, double b) {
    const int n = half_points;  // even
    const double h = (b - a) / n;
    double s = density(a) + density(b);
    for (int i = 1; i < n; ++i) s += density(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return s * h / 3.0;
  };
  return simpson(loc - 50.0 * scale, loc) + simpson(loc, loc + 50.0 * scale);
}

}  // namespace

TEST_CASE("bessel I0 against quadrature oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> small(1e-3, 10.0);
  std::uniform_real_distribution<double> large(10.0, 60.0);
  for (int i = 0; i < 200; ++i) {
    const double k = i % 2 == 0 ? small(rng) : large(rng);
    const double quad = bessel_i0_quadrature(k);
    const double mine = std::exp(log_bessel_i0(k));
    CHECK(std::abs(mine - quad) / quad < 1e-8);
  }
  // continuity across the series/asymptotic boundary
  CHECK(std::abs(log_bessel_i0(10.0 - 1e-9) - log_bessel_i0(10.0 + 1e-9)) < 1e-7);
}

TEST_CASE("laplace_nll") {
  SECTION("zero residual, unit scale: log 2") {
    CHECK(laplace_nll(0.0, 1.0, 0.0) == Catch::Approx(std::log(2.0)));
  }
  SECTION("unit residual, unit scale: log 2 + 1") {
    CHECK(laplace_nll(3.0, 1.0, 4.0) == Catch::Approx(std::log(2.0) + 1.0));
  }
  SECTION("nonpositive scale throws") {
    CHECK_THROWS_AS(laplace_nll(0.0, 0.0, 1.0), NumericError);
  }
  SECTION("density integrates to 1 and point evaluations match") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> locd(-5.0, 5.0);
    std::uniform_real_distribution<double> scaled(0.05, 4.0);
    for (int i = 0; i < 50; ++i) {
      const double loc = locd(rng), sc = scaled(rng), x = locd(rng);
      CHECK(std::abs(laplace_density_integral(loc, sc) - 1.0) < 1e-6);
      const double density = std::exp(-std::abs(x - loc) / sc) / (2.0 * sc);
      CHECK(std::abs(laplace_nll(loc, sc, x) - (-std::log(density))) < 1e-9);
    }
  }
}

TEST_CASE("von_mises_nll") {
  SECTION("conc -> 0 limit: log(2 pi)") {
    CHECK(von_mises_nll(0.0, 1e-12, 1.3) == Catch::Approx(std::log(2.0 * kPi)).epsilon(1e-9));
  }
  SECTION("conc = 2 at the location") {
    const double i0_2 = bessel_i0_series(2.0);
    CHECK(i0_2 == Catch::Approx(2.2795853).epsilon(1e-6));
    CHECK(von_mises_nll(0.7, 2.0, 0.7) ==
          Catch::Approx(std::log(2.0 * kPi * i0_2) - 2.0).epsilon(1e-10));
  }
  SECTION("even symmetry in the offset") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::uniform_real_distribution<double> kd(0.01, 30.0);
    for (int i = 0; i < 100; ++i) {
      const double delta = d(rng), k = kd(rng), mu = d(rng);
      CHECK(von_mises_nll(mu, k, mu + delta) ==
            Catch::Approx(von_mises_nll(mu, k, mu - delta)).epsilon(1e-12));
    }
  }
  SECTION("density normalizes to 1 via quadrature; point evaluations match") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> mud(-kPi, kPi);
    std::uniform_real_distribution<double> kd(1e-3, 50.0);
    for (int i = 0; i < 100; ++i) {
      const double mu = mud(rng), k = kd(rng), x = mud(rng);
      const double i0 = bessel_i0_quadrature(k);
      // normalization: integral of exp(k cos) / (2 pi I0) over a period is 1
      CHECK(std::abs(bessel_i0_quadrature(k) / i0 - 1.0) < 1e-12);
      const double nll_oracle = std::log(2.0 * kPi * i0) - k * std::cos(x - mu);
      CHECK(std::abs(von_mises_nll(mu, k, x) - nll_oracle) /
                std::max(1.0, std::abs(nll_oracle)) <
            1e-6);
    }
  }
  SECTION("nonpositive concentration throws") {
    CHECK_THROWS_AS(von_mises_nll(0.0, -1.0, 0.0), NumericError);
  }
}

TEST_CASE("select_winner") {
  SECTION("single mode") {
    const double e[2] = {4.0, 5.0};
    CHECK(select_winner(std::span<const double>(e, 2), 0.0, 0.0) == 0);
  }
  SECTION("distances {3, 1, 2} pick index 1") {
    const double e[6] = {3.0, 0.0, 1.0, 0.0, 2.0, 0.0};
    CHECK(select_winner(std::span<const double>(e, 6), 0.0, 0.0) == 1);
  }
  SECTION("exact tie breaks to the lowest index") {
    const double e[6] = {2.0, 0.0, -3.0, 0.0, 2.0, 0.0};
    CHECK(select_winner(std::span<const double>(e, 6), 0.0, 0.0) == 0);
    const double f[6] = {0.0, 2.0, -3.0, 0.0, 2.0, 0.0};
    CHECK(select_winner(std::span<const double>(f, 6), 0.0, 0.0) == 0);
  }
}

TEST_CASE("classification loss op") {
  SECTION("equal per-mode likelihood: loss = -log L regardless of the split") {
    Graph<double> g;
    const double log_l = -3.7;
    const auto logits = g.input(1, 3, std::vector<double>{0.2, -1.0, 4.0});
    const auto loss = g.neg_log_mixture_sum(logits, std::vector<double>(3, log_l));
    CHECK(g.scalar(loss) == Catch::Approx(-log_l).epsilon(1e-12));
  }
  SECTION("matches a direct summation oracle") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = 4;
      std::vector<double> logits(k), bias(k);
      for (auto& v : logits) v = d(rng);
      for (auto& v : bias) v = d(rng);
      Graph<double> g;
      const auto loss = g.neg_log_mixture_sum(g.input(1, k, logits), bias);
      // direct: -log sum_k softmax(logits)_k exp(bias_k)
      double denom = 0.0;
      for (double v : logits) denom += std::exp(v);
      double mix = 0.0;
      for (int i = 0; i < k; ++i)
        mix += std::exp(logits[static_cast<std::size_t>(i)]) / denom *
               std::exp(bias[static_cast<std::size_t>(i)]);
      const double expect = -std::log(mix);
      CHECK(std::abs(g.scalar(loss) - expect) / std::max(1.0, std::abs(expect)) < 1e-8);
    }
  }
}

TEST_CASE("regression loss structure on a tiny unroll") {
  auto model = build_model<double>(tiny_cfg(), 41);
  const Scene scene = make_minimal_scene(10, 20);
  Graph<double> g;
  const auto out = unroll_future(model, g, scene, UnrollMode::kTraining);
  const auto loss = compute_losses(model, g, scene, out, WinnerMode::kPerStep);

  SECTION("total equals the sum of the nine parts") {
    double sum = 0.0;
    for (double p : loss.values.parts()) sum += p;
    CHECK(std::abs(sum - loss.values.total) < 1e-6);
  }

  SECTION("all components finite and regression components positive counts") {
    for (int i = 0; i < 9; ++i) CHECK(std::isfinite(loss.values.parts()[static_cast<std::size_t>(i)]));
    CHECK(loss.values.proposal_pos > 0.0);
    CHECK(loss.values.refine_pos > 0.0);
  }

  SECTION("winner-take-all sparsity: non-winner location outputs get zero gradient") {
    model.params.zero_grad();
    g.backward(loss.total);
    const int k = 2, t = 5;
    for (std::size_t s = 0; s < out.steps.size(); ++s) {
      const auto& rec = out.steps[s];
      for (int a = 0; a < 2; ++a) {
        const int w = loss.winners[s][static_cast<std::size_t>(a)];
        REQUIRE(w >= 0);
        for (int kk = 0; kk < k; ++kk) {
          const int row = a * k + kk;
          double gsum = 0.0;
          for (int c = 0; c < 2 * t; ++c)
            gsum += std::abs(
                g.grad(rec.prop_main.pos_loc)[static_cast<std::size_t>(row) * 2 * t + c]);
          for (int c = 0; c < t; ++c)
            gsum += std::abs(
                g.grad(rec.prop_main.hd_loc)[static_cast<std::size_t>(row) * t + c]);
          if (kk == w)
            CHECK(gsum > 0.0);
          else
            CHECK(gsum == 0.0);  // exactly zero
        }
      }
    }
  }
}

TEST_CASE("overprediction clipping: single-step future has zero over components") {
  auto cfg = tiny_cfg();
  cfg.t_fut = 5;  // one decoder step, over window entirely beyond the future
  auto model = build_model<double>(cfg, 42);
  const Scene scene = make_minimal_scene(10, 5);
  Graph<double> g;
  const auto out = unroll_future(model, g, scene, UnrollMode::kTraining);
  const auto loss = compute_losses(model, g, scene, out, WinnerMode::kPerStep);
  CHECK(loss.values.over_proposal_pos == 0.0);
  CHECK(loss.values.over_proposal_hd == 0.0);
  CHECK(loss.values.over_refine_pos == 0.0);
  CHECK(loss.values.over_refine_hd == 0.0);
  CHECK(loss.values.proposal_pos > 0.0);
}

TEST_CASE("loss values match an independent scalar recomputation") {
  auto model = build_model<double>(tiny_cfg(), 43);
  const Scene scene = make_minimal_scene(10, 20);
  Graph<double> g;
  const auto out = unroll_future(model, g, scene, UnrollMode::kTraining);
  const auto loss = compute_losses(model, g, scene, out, WinnerMode::kPerStep);

  // Oracle: recompute proposal_pos and proposal_hd from the record values
  // with plain scalar arithmetic.
  const int k = 2, t = 5;
  double pos_sum = 0.0, hd_sum = 0.0;
  int count = 0;
  for (std::size_t s = 0; s < out.steps.size(); ++s) {
    const auto& rec = out.steps[s];
    for (int a = 0; a < 2; ++a) {
      const auto& agent = scene.agents[static_cast<std::size_t>(a)];
      const auto& ep = agent.states[static_cast<std::size_t>(rec.t0 + t - 1)];
      const int w = select_winner(
          std::span<const double>(rec.prop_endpoint_global.data() +
                                      static_cast<std::size_t>(a) * k * 2,
                                  static_cast<std::size_t>(k) * 2),
          ep.x, ep.y);
      CHECK(w == loss.winners[s][static_cast<std::size_t>(a)]);
      const int row = a * k + w;
      const auto& frame = rec.frames[static_cast<std::size_t>(row)];
      const auto& pl = g.val(rec.prop_main.pos_loc);
      const auto& ps = g.val(rec.prop_main.pos_scale);
      const auto& hl = g.val(rec.prop_main.hd_loc);
      const auto& hc = g.val(rec.prop_main.hd_conc);
      for (int tt = 0; tt < t; ++tt) {
        const auto& st = agent.states[static_cast<std::size_t>(rec.t0 + tt)];
        const Vec2 local = frame.to_local(st.x, st.y);
        const std::size_t pr = static_cast<std::size_t>(row) * 2 * t;
        const std::size_t hr = static_cast<std::size_t>(row) * t;
        pos_sum += laplace_nll(pl[pr + 2 * tt], ps[pr + 2 * tt], local.x);
        pos_sum += laplace_nll(pl[pr + 2 * tt + 1], ps[pr + 2 * tt + 1], local.y);
        hd_sum += von_mises_nll(hl[hr + tt], hc[hr + tt],
                                wrap_angle(st.heading - frame.heading));
      }
      ++count;
    }
  }
  CHECK(std::abs(loss.values.proposal_pos - pos_sum / count) < 1e-6);
  CHECK(std::abs(loss.values.proposal_hd - hd_sum / count) < 1e-6);
}

TEST_CASE("grad check of the full model and loss (tiny preset)") {
  auto model = build_model<double>(tiny_cfg(), 44);
  const Scene scene = make_minimal_scene(10, 20);

  auto loss_fn = [&](Graph<double>& g, PinContext* pins) {
    const auto out = unroll_future(model, g, scene, UnrollMode::kTraining, ForwardCtx{},
                                   pins);
    const auto loss = compute_losses(model, g, scene, out, WinnerMode::kPerStep, pins);
    return loss.total;
  };

  const auto rep = grad_check<double>(model.params, loss_fn, 1e-4, 200, 2026);
  INFO("worst: " << rep.worst_param << "[" << rep.worst_coordinate
                 << "] analytic=" << rep.worst_analytic
                 << " numeric=" << rep.worst_numeric);
  CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("grad check with full-horizon winner mode") {
  auto model = build_model<double>(tiny_cfg(), 45);
  const Scene scene = make_minimal_scene(10, 20);
  auto loss_fn = [&](Graph<double>& g, PinContext* pins) {
    const auto out = unroll_future(model, g, scene, UnrollMode::kTraining, ForwardCtx{},
                                   pins);
    return compute_losses(model, g, scene, out, WinnerMode::kFullHorizon, pins).total;
  };
  const auto rep = grad_check<double>(model.params, loss_fn, 1e-4, 80, 2027);
  CHECK(rep.max_rel_error < 1e-3);
}
