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
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "trajcast/forecast.hpp"
#include "trajcast/scene.hpp"

namespace trajcast {

inline constexpr double kMissThresholdMeters = 2.0;

/// How the "best" trajectory is picked for ADE reporting. The benchmark
/// convention selects by endpoint error; best-ADE selection is kept behind a
/// flag for verbose reporting.
enum class AdeSelection { kBestFde, kBestAde };

struct MetricReport {
  double b_minfde_k = 0.0;
  double minfde_k = 0.0;
  double minade_k = 0.0;
  double mr_k = 0.0;
  double minfde_1 = 0.0;
  double minade_1 = 0.0;
  double mr_1 = 0.0;
  int n_scenes = 0;
  int n_agents = 0;
  double minade_k_best_ade = 0.0;  // verbose companion, best-ADE selection
};

namespace metrics_detail {

inline double endpoint_error(const std::vector<PosePoint>& mode,
                             const std::vector<Vec2>& gt, std::size_t horizon) {
  const auto& p = mode[horizon - 1];
  const auto& g = gt[horizon - 1];
  return norm2(p.x - g.x, p.y - g.y);
}

inline double average_error(const std::vector<PosePoint>& mode,
                            const std::vector<Vec2>& gt, std::size_t horizon) {
  double sum = 0.0;
  for (std::size_t t = 0; t < horizon; ++t)
    sum += norm2(mode[t].x - gt[t].x, mode[t].y - gt[t].y);
  return sum / static_cast<double>(horizon);
}

}  // namespace metrics_detail

/// Minimum final displacement error over modes; ties go to the lowest k.
inline std::pair<double, int> min_fde(const std::vector<std::vector<PosePoint>>& modes,
                                      const std::vector<Vec2>& gt) {
  if (modes.empty()) throw NumericError("min_fde: empty forecast");
  double best = std::numeric_limits<double>::infinity();
  int best_k = 0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const double e = metrics_detail::endpoint_error(modes[k], gt, gt.size());
    if (e < best) {
      best = e;
      best_k = static_cast<int>(k);
    }
  }
  return {best, best_k};
}

/// Average displacement of the best trajectory; "best" is by endpoint error
/// by default (benchmark convention).
inline double min_ade(const std::vector<std::vector<PosePoint>>& modes,
                      const std::vector<Vec2>& gt,
                      AdeSelection sel = AdeSelection::kBestFde) {
  if (modes.empty()) throw NumericError("min_ade: empty forecast");
  if (sel == AdeSelection::kBestFde) {
    const auto [fde, k] = min_fde(modes, gt);
    (void)fde;
    return metrics_detail::average_error(modes[static_cast<std::size_t>(k)], gt, gt.size());
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& mode : modes)
    best = std::min(best, metrics_detail::average_error(mode, gt, gt.size()));
  return best;
}

/// A case is a miss when every mode's endpoint is farther than 2.0 m from the
/// ground-truth endpoint; exactly 2.0 m counts as a hit.
inline bool is_miss(const std::vector<std::vector<PosePoint>>& modes,
                    const std::vector<Vec2>& gt) {
  return min_fde(modes, gt).first > kMissThresholdMeters;
}

inline double brier_min_fde(const std::vector<std::vector<PosePoint>>& modes,
                            const std::vector<double>& probabilities,
                            const std::vector<Vec2>& gt) {
  const auto [fde, k] = min_fde(modes, gt);
  const double pi = probabilities[static_cast<std::size_t>(k)];
  return (1.0 - pi) * (1.0 - pi) + fde;
}

struct K1Metrics {
  double fde = 0.0;
  double ade = 0.0;
  bool miss = false;
};

/// Metrics of the single most probable mode; probability ties go to lowest k.
inline K1Metrics k1_metrics(const std::vector<std::vector<PosePoint>>& modes,
                            const std::vector<double>& probabilities,
                            const std::vector<Vec2>& gt) {
  std::size_t best_k = 0;
  for (std::size_t k = 1; k < probabilities.size(); ++k)
    if (probabilities[k] > probabilities[best_k]) best_k = k;
  K1Metrics out;
  out.fde = metrics_detail::endpoint_error(modes[best_k], gt, gt.size());
  out.ade = metrics_detail::average_error(modes[best_k], gt, gt.size());
  out.miss = out.fde > kMissThresholdMeters;
  return out;
}

/// minFDE treating each horizon's step as the endpoint, minimized over modes
/// independently per horizon.
inline std::vector<std::pair<int, double>> horizon_curve_case(
    const std::vector<std::vector<PosePoint>>& modes, const std::vector<Vec2>& gt,
    const std::vector<int>& horizons) {
  std::vector<std::pair<int, double>> out;
  for (int h : horizons) {
    if (h < 1 || static_cast<std::size_t>(h) > gt.size())
      throw NumericError("horizon_curve: horizon exceeds future length");
    double best = std::numeric_limits<double>::infinity();
    for (const auto& mode : modes)
      best = std::min(best,
                      metrics_detail::endpoint_error(mode, gt, static_cast<std::size_t>(h)));
    out.emplace_back(h, best);
  }
  return out;
}

inline std::vector<Vec2> ground_truth_future(const Scene& scene, const Agent& agent) {
  std::vector<Vec2> gt;
  gt.reserve(static_cast<std::size_t>(scene.t_fut));
  for (int t = scene.t_hist; t < scene.horizon(); ++t) {
    const auto& s = agent.states[static_cast<std::size_t>(t)];
    gt.push_back({s.x, s.y});
  }
  return gt;
}

/// Unwrapped cumulative heading change across the ground-truth future.
inline double future_turn_angle(const Scene& scene, const Agent& agent) {
  double total = 0.0;
  for (int t = scene.t_hist; t + 1 < scene.horizon(); ++t) {
    const auto& a = agent.states[static_cast<std::size_t>(t)];
    const auto& b = agent.states[static_cast<std::size_t>(t + 1)];
    if (!a.valid || !b.valid) continue;
    total += wrap_angle(b.heading - a.heading);
  }
  return total;
}

/// Focal agents whose future turns at least `threshold_rad` (inclusive).
inline std::vector<std::pair<int, std::string>> filter_turns(
    const std::vector<Scene>& scenes, double threshold_rad) {
  std::vector<std::pair<int, std::string>> kept;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& fid : scenes[i].focal_agent_ids) {
      const Agent* agent = scenes[i].find_agent(fid);
      if (agent == nullptr) continue;
      if (std::abs(future_turn_angle(scenes[i], *agent)) >= threshold_rad)
        kept.emplace_back(static_cast<int>(i), fid);
    }
  }
  return kept;
}

/// Aggregates benchmark metrics over (scene, focal agent) pairs. When `subset`
/// is non-null only the listed pairs are scored.
inline MetricReport evaluate_forecasts(
    const std::vector<Scene>& scenes, const std::vector<Forecast>& forecasts,
    const std::vector<std::pair<int, std::string>>* subset = nullptr) {
  if (scenes.size() != forecasts.size())
    throw NumericError("evaluate_forecasts: scene/forecast count mismatch");
  MetricReport rep;
  double sum_bfde = 0.0, sum_fde = 0.0, sum_ade = 0.0, sum_ade_ba = 0.0;
  double sum_fde1 = 0.0, sum_ade1 = 0.0;
  int misses_k = 0, misses_1 = 0, count = 0;

  auto scored = [&](int scene_idx, const std::string& agent_id) {
    if (subset == nullptr) return true;
    for (const auto& [si, aid] : *subset)
      if (si == scene_idx && aid == agent_id) return true;
    return false;
  };

  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& scene = scenes[i];
    for (const auto& fid : scene.focal_agent_ids) {
      if (!scored(static_cast<int>(i), fid)) continue;
      const Agent* agent = scene.find_agent(fid);
      const AgentForecast* af = forecasts[i].find(fid);
      if (agent == nullptr || af == nullptr) continue;
      if (!agent->states.back().valid) continue;
      const auto gt = ground_truth_future(scene, *agent);

      sum_bfde += brier_min_fde(af->modes, af->probabilities, gt);
      sum_fde += min_fde(af->modes, gt).first;
      sum_ade += min_ade(af->modes, gt, AdeSelection::kBestFde);
      sum_ade_ba += min_ade(af->modes, gt, AdeSelection::kBestAde);
      if (is_miss(af->modes, gt)) ++misses_k;
      const auto k1 = k1_metrics(af->modes, af->probabilities, gt);
      sum_fde1 += k1.fde;
      sum_ade1 += k1.ade;
      if (k1.miss) ++misses_1;
      ++count;
    }
  }

  rep.n_scenes = static_cast<int>(scenes.size());
  rep.n_agents = count;
  if (count == 0) return rep;
  const double n = static_cast<double>(count);
  rep.b_minfde_k = sum_bfde / n;
  rep.minfde_k = sum_fde / n;
  rep.minade_k = sum_ade / n;
  rep.minade_k_best_ade = sum_ade_ba / n;
  rep.mr_k = static_cast<double>(misses_k) / n;
  rep.minfde_1 = sum_fde1 / n;
  rep.minade_1 = sum_ade1 / n;
  rep.mr_1 = static_cast<double>(misses_1) / n;
  return rep;
}

inline std::vector<std::pair<int, double>> horizon_curve(
    const std::vector<Scene>& scenes, const std::vector<Forecast>& forecasts,
    const std::vector<int>& horizons) {
  std::vector<double> sums(horizons.size(), 0.0);
  int count = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& scene = scenes[i];
    for (const auto& fid : scene.focal_agent_ids) {
      const Agent* agent = scene.find_agent(fid);
      const AgentForecast* af = forecasts[i].find(fid);
      if (agent == nullptr || af == nullptr || !agent->states.back().valid) continue;
      const auto gt = ground_truth_future(scene, *agent);
      const auto curve = horizon_curve_case(af->modes, gt, horizons);
      for (std::size_t h = 0; h < curve.size(); ++h) sums[h] += curve[h].second;
      ++count;
    }
  }
  std::vector<std::pair<int, double>> out;
  for (std::size_t h = 0; h < horizons.size(); ++h)
    out.emplace_back(horizons[h], count > 0 ? sums[h] / count : 0.0);
  return out;
}

inline std::string metric_report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "metric,value\n";
  os << "b_minfde_k," << r.b_minfde_k << "\n";
  os << "minfde_k," << r.minfde_k << "\n";
  os << "minade_k," << r.minade_k << "\n";
  os << "mr_k," << r.mr_k << "\n";
  os << "minfde_1," << r.minfde_1 << "\n";
  os << "minade_1," << r.minade_1 << "\n";
  os << "mr_1," << r.mr_1 << "\n";
  os << "n_scenes," << r.n_scenes << "\n";
  os << "n_agents," << r.n_agents << "\n";
  return os.str();
}

inline void print_metric_report(std::ostream& os, const MetricReport& r,
                                bool verbose = false) {
  os << std::fixed << std::setprecision(4);
  os << "+-----------------+----------+\n";
  os << "| metric          | value    |\n";
  os << "+-----------------+----------+\n";
  auto row = [&os](const char* name, double v) {
    os << "| " << std::left << std::setw(15) << name << " | " << std::right
       << std::setw(8) << v << " |\n";
  };
  row("b-minFDE_K", r.b_minfde_k);
  row("minFDE_K", r.minfde_k);
  row("minADE_K", r.minade_k);
  row("MR_K", r.mr_k);
  row("minFDE_1", r.minfde_1);
  row("minADE_1", r.minade_1);
  row("MR_1", r.mr_1);
  if (verbose) row("minADE_K(bADE)", r.minade_k_best_ade);
  os << "+-----------------+----------+\n";
  os << "scenes: " << r.n_scenes << ", scored agents: " << r.n_agents << "\n";
}

}  // namespace trajcast
