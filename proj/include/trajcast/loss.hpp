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

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "trajcast/config.hpp"
#include "trajcast/decoder.hpp"

namespace trajcast {

// ---------------------------------------------------------------------------
// Modified Bessel function of order 0 (and the I1/I0 ratio for gradients).
// Power series below conc = 10, asymptotic expansion above.
// ---------------------------------------------------------------------------

inline double bessel_i0_series(double x) {
  const double q = x * x / 4.0;
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

inline double bessel_i1_series(double x) {
  const double q = x * x / 4.0;
  double term = x / 2.0, sum = term;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * (k + 1));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

namespace bessel_detail {

/// Asymptotic series sum for I_nu(x) ~ e^x / sqrt(2 pi x) * S(nu, x).
inline double asymptotic_sum(int nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0, sum = 1.0;
  double prev = std::abs(term);
  for (int k = 1; k <= 20; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * x);
    if (std::abs(term) > prev) break;  // asymptotic series started diverging
    prev = std::abs(term);
    sum += term;
    if (std::abs(term) < 1e-16 * std::abs(sum)) break;
  }
  return sum;
}

}  // namespace bessel_detail

inline double log_bessel_i0(double x) {
  x = std::abs(x);
  if (x <= 10.0) return std::log(bessel_i0_series(x));
  return x - 0.5 * std::log(2.0 * kPi * x) + std::log(bessel_detail::asymptotic_sum(0, x));
}

inline double bessel_i1_over_i0(double x) {
  if (x <= 10.0) return bessel_i1_series(x) / bessel_i0_series(x);
  return bessel_detail::asymptotic_sum(1, x) / bessel_detail::asymptotic_sum(0, x);
}

// ---------------------------------------------------------------------------
// Pointwise negative log-likelihoods
// ---------------------------------------------------------------------------

/// Laplace NLL of one coordinate: log(2b) + |target - loc| / b.
inline double laplace_nll(double loc, double scale, double target) {
  if (!(scale > 0.0)) throw NumericError("laplace_nll: nonpositive scale");
  return std::log(2.0 * scale) + std::abs(target - loc) / scale;
}

/// von-Mises NLL: log(2 pi I0(conc)) - conc cos(target - loc).
inline double von_mises_nll(double loc, double conc, double target) {
  if (!(conc > 0.0)) throw NumericError("von_mises_nll: nonpositive concentration");
  return std::log(2.0 * kPi) + log_bessel_i0(conc) - conc * std::cos(target - loc);
}

/// Mode whose endpoint is closest to the ground truth; ties break low.
inline int select_winner(std::span<const double> endpoints_xy, double gt_x, double gt_y) {
  const int k = static_cast<int>(endpoints_xy.size() / 2);
  if (k < 1) throw NumericError("select_winner: no modes");
  int best = 0;
  double best_d = norm2(endpoints_xy[0] - gt_x, endpoints_xy[1] - gt_y);
  for (int i = 1; i < k; ++i) {
    const double d = norm2(endpoints_xy[static_cast<std::size_t>(i) * 2] - gt_x,
                           endpoints_xy[static_cast<std::size_t>(i) * 2 + 1] - gt_y);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training loss
// ---------------------------------------------------------------------------

struct LossBreakdown {
  double proposal_pos = 0.0;
  double proposal_hd = 0.0;
  double refine_pos = 0.0;
  double refine_hd = 0.0;
  double over_proposal_pos = 0.0;
  double over_proposal_hd = 0.0;
  double over_refine_pos = 0.0;
  double over_refine_hd = 0.0;
  double classification = 0.0;
  double total = 0.0;

  std::array<double, 9> parts() const {
    return {proposal_pos, proposal_hd,      refine_pos,      refine_hd,
            over_proposal_pos, over_proposal_hd, over_refine_pos, over_refine_hd,
            classification};
  }
  static const char* part_name(int i) {
    static const char* names[9] = {"proposal_pos",      "proposal_hd",
                                   "refine_pos",        "refine_hd",
                                   "over_proposal_pos", "over_proposal_hd",
                                   "over_refine_pos",   "over_refine_hd",
                                   "classification"};
    return names[i];
  }
};

template <class S>
struct LossResult {
  LossBreakdown values;
  typename Graph<S>::Id total = -1;
  std::array<typename Graph<S>::Id, 9> components{};
  std::vector<std::vector<int>> winners;  // [step][agent], -1 when skipped
};

namespace loss_detail {

struct WindowTargets {
  std::vector<double> pos;  // [2*T] interleaved x, y in the prediction frame
  std::vector<double> hd;   // [T]
  std::vector<std::uint8_t> pos_mask, hd_mask;
  bool any = false;
};

inline WindowTargets window_targets(const Scene& scene, const Agent& agent,
                                    const ReferenceFrame& frame, int t0, int t_sub) {
  WindowTargets w;
  w.pos.assign(static_cast<std::size_t>(2) * t_sub, 0.0);
  w.hd.assign(static_cast<std::size_t>(t_sub), 0.0);
  w.pos_mask.assign(static_cast<std::size_t>(2) * t_sub, 0);
  w.hd_mask.assign(static_cast<std::size_t>(t_sub), 0);
  const int horizon = scene.horizon();
  for (int t = 0; t < t_sub; ++t) {
    const int tg = t0 + t;
    if (tg >= horizon) break;
    const auto& st = agent.states[static_cast<std::size_t>(tg)];
    if (!st.valid) continue;
    const Vec2 local = frame.to_local(st.x, st.y);
    w.pos[static_cast<std::size_t>(2) * t] = local.x;
    w.pos[static_cast<std::size_t>(2) * t + 1] = local.y;
    w.hd[static_cast<std::size_t>(t)] = wrap_angle(st.heading - frame.heading);
    w.pos_mask[static_cast<std::size_t>(2) * t] = 1;
    w.pos_mask[static_cast<std::size_t>(2) * t + 1] = 1;
    w.hd_mask[static_cast<std::size_t>(t)] = 1;
    w.any = true;
  }
  return w;
}

}  // namespace loss_detail

/// Winner-take-all regression (proposal/refined x main/over) plus the mode
/// classification loss. Regression components average over contributing
/// (agent, step) pairs; classification averages over scored agents.
template <class S>
LossResult<S> compute_losses(const Model<S>& model, Graph<S>& g, const Scene& scene,
                             const UnrollResult<S>& unroll, WinnerMode winner_mode,
                             PinContext* pins = nullptr) {
  using Id = typename Graph<S>::Id;
  const ModelConfig& cfg = model.cfg;
  const int n = static_cast<int>(scene.agents.size());
  const int k = cfg.num_modes;
  const int t_sub = cfg.t_sub;
  const int steps = cfg.future_steps();
  if (static_cast<int>(unroll.steps.size()) != steps)
    throw NumericError("compute_losses: unroll is missing step records");

  LossResult<S> res;
  res.winners.assign(static_cast<std::size_t>(steps), std::vector<int>(n, -1));

  // Full-horizon winners come from the final step's proposal endpoints.
  std::vector<int> full_winner(static_cast<std::size_t>(n), -1);
  if (winner_mode == WinnerMode::kFullHorizon) {
    const auto& last = unroll.steps.back();
    for (int a = 0; a < n; ++a) {
      const auto& st = scene.agents[static_cast<std::size_t>(a)].states.back();
      if (!st.valid) continue;
      full_winner[static_cast<std::size_t>(a)] = select_winner(
          std::span<const double>(last.prop_endpoint_global.data() +
                                      static_cast<std::size_t>(a) * k * 2,
                                  static_cast<std::size_t>(k) * 2),
          st.x, st.y);
    }
  }

  std::vector<std::vector<Id>> terms(8);
  std::array<int, 8> counts{};

  auto add_family = [&](int family, const StepNodes<S>& nodes, int row,
                        const loss_detail::WindowTargets& w) {
    if (!w.any || nodes.pos_loc < 0) return;
    const Id loc = g.slice_rows(nodes.pos_loc, row, 1);
    const Id sc = g.slice_rows(nodes.pos_scale, row, 1);
    terms[static_cast<std::size_t>(family)].push_back(
        g.laplace_nll_sum(loc, sc, w.pos, w.pos_mask));
    const Id hl = g.slice_rows(nodes.hd_loc, row, 1);
    const Id hc = g.slice_rows(nodes.hd_conc, row, 1);
    terms[static_cast<std::size_t>(family) + 1].push_back(g.von_mises_nll_sum(
        hl, hc, w.hd, w.hd_mask, &log_bessel_i0, &bessel_i1_over_i0));
    counts[static_cast<std::size_t>(family)]++;
    counts[static_cast<std::size_t>(family) + 1]++;
  };

  for (int s = 0; s < steps; ++s) {
    const auto& rec = unroll.steps[static_cast<std::size_t>(s)];
    for (int a = 0; a < n; ++a) {
      const Agent& agent = scene.agents[static_cast<std::size_t>(a)];
      int winner = -1;
      if (winner_mode == WinnerMode::kFullHorizon) {
        winner = full_winner[static_cast<std::size_t>(a)];
      } else {
        const auto& ep = agent.states[static_cast<std::size_t>(rec.t0 + t_sub - 1)];
        if (ep.valid)
          winner = select_winner(
              std::span<const double>(rec.prop_endpoint_global.data() +
                                          static_cast<std::size_t>(a) * k * 2,
                                      static_cast<std::size_t>(k) * 2),
              ep.x, ep.y);
      }
      if (pins) pins->pin_index(winner);
      res.winners[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] = winner;
      if (winner < 0) continue;

      const int row = a * k + winner;
      const ReferenceFrame& frame = rec.frames[static_cast<std::size_t>(row)];
      const auto main_w = loss_detail::window_targets(scene, agent, frame, rec.t0, t_sub);
      add_family(0, rec.prop_main, row, main_w);
      if (cfg.refinement) add_family(2, rec.ref_main, row, main_w);
      if (cfg.overprediction) {
        const auto over_w =
            loss_detail::window_targets(scene, agent, frame, rec.t0 + t_sub, t_sub);
        add_family(4, rec.prop_over, row, over_w);
        if (cfg.refinement) add_family(6, rec.ref_over, row, over_w);
      }
    }
  }

  for (int f = 0; f < 8; ++f) {
    if (terms[static_cast<std::size_t>(f)].empty()) {
      res.components[static_cast<std::size_t>(f)] = g.zeros(1, 1);
    } else {
      res.components[static_cast<std::size_t>(f)] =
          g.scale(g.sum_scalars(terms[static_cast<std::size_t>(f)]),
                  1.0 / counts[static_cast<std::size_t>(f)]);
    }
  }

  // Classification: joint NLL of the mixture over the refined full future.
  // Per-mode log-likelihoods are detached; gradient reaches the logits only.
  {
    std::vector<int> scored;
    for (int a = 0; a < n; ++a) {
      const Agent& agent = scene.agents[static_cast<std::size_t>(a)];
      bool any = false;
      for (int t = scene.t_hist; t < scene.horizon(); ++t)
        any = any || agent.states[static_cast<std::size_t>(t)].valid;
      if (any) scored.push_back(a);
    }
    if (scored.empty() || unroll.final_logits < 0) {
      res.components[8] = g.zeros(1, 1);
    } else {
      std::vector<double> bias(scored.size() * static_cast<std::size_t>(k), 0.0);
      for (std::size_t si = 0; si < scored.size(); ++si) {
        const int a = scored[si];
        const Agent& agent = scene.agents[static_cast<std::size_t>(a)];
        for (int kk = 0; kk < k; ++kk) {
          const int row = a * k + kk;
          double ll = 0.0;
          for (int s = 0; s < steps; ++s) {
            const auto& rec = unroll.steps[static_cast<std::size_t>(s)];
            const StepNodes<S>& nodes = cfg.refinement ? rec.ref_main : rec.prop_main;
            const auto& pl = g.val(nodes.pos_loc);
            const auto& ps = g.val(nodes.pos_scale);
            const auto& hl = g.val(nodes.hd_loc);
            const auto& hc = g.val(nodes.hd_conc);
            const ReferenceFrame& frame = rec.frames[static_cast<std::size_t>(row)];
            for (int t = 0; t < t_sub; ++t) {
              const auto& st = agent.states[static_cast<std::size_t>(rec.t0 + t)];
              if (!st.valid) continue;
              const Vec2 local = frame.to_local(st.x, st.y);
              const double lhd = wrap_angle(st.heading - frame.heading);
              const std::size_t pr = static_cast<std::size_t>(row) * 2 * t_sub;
              const std::size_t hr = static_cast<std::size_t>(row) * t_sub;
              ll -= laplace_nll(static_cast<double>(pl[pr + 2 * t]),
                                static_cast<double>(ps[pr + 2 * t]), local.x);
              ll -= laplace_nll(static_cast<double>(pl[pr + 2 * t + 1]),
                                static_cast<double>(ps[pr + 2 * t + 1]), local.y);
              ll -= von_mises_nll(static_cast<double>(hl[hr + t]),
                                  static_cast<double>(hc[hr + t]), lhd);
            }
          }
          bias[si * static_cast<std::size_t>(k) + kk] = ll;
        }
      }
      if (pins) pins->pin(bias);
      std::vector<int> rows = scored;
      const Id sel = g.gather_rows(unroll.final_logits, rows);
      res.components[8] = g.scale(g.neg_log_mixture_sum(sel, std::move(bias)),
                                  1.0 / static_cast<double>(scored.size()));
    }
  }

  res.total = g.sum_scalars(
      std::vector<Id>(res.components.begin(), res.components.end()));

  auto& v = res.values;
  v.proposal_pos = static_cast<double>(g.scalar(res.components[0]));
  v.proposal_hd = static_cast<double>(g.scalar(res.components[1]));
  v.refine_pos = static_cast<double>(g.scalar(res.components[2]));
  v.refine_hd = static_cast<double>(g.scalar(res.components[3]));
  v.over_proposal_pos = static_cast<double>(g.scalar(res.components[4]));
  v.over_proposal_hd = static_cast<double>(g.scalar(res.components[5]));
  v.over_refine_pos = static_cast<double>(g.scalar(res.components[6]));
  v.over_refine_hd = static_cast<double>(g.scalar(res.components[7]));
  v.classification = static_cast<double>(g.scalar(res.components[8]));
  // Summed in double so the equal-weight identity holds for float models too.
  v.total = 0.0;
  for (double p : v.parts()) v.total += p;
  for (int i = 0; i < 9; ++i)
    if (!std::isfinite(v.parts()[static_cast<std::size_t>(i)]))
      throw NumericError(std::string("non-finite loss component: ") +
                         LossBreakdown::part_name(i));
  return res;
}

}  // namespace trajcast
