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

#include <cstdint>
#include <functional>
#include <vector>

#include "trajcast/forecast.hpp"
#include "trajcast/gradcheck.hpp"
#include "trajcast/map_encoder.hpp"
#include "trajcast/model.hpp"

namespace trajcast {

// ---------------------------------------------------------------------------
// Sub-trajectory tokenization
// ---------------------------------------------------------------------------

inline constexpr int kSubTrajFeatures = 8;

/// Raw per-step features of a segment relative to `frame`, one row per
/// consecutive state pair (T_sub - 1 rows x 8):
/// [x, y, heading, motion dx, motion dy, angular motion, speed, heading minus
/// motion direction], all in the frame's coordinates. Rows touching an
/// invalid state are zeroed.
inline std::vector<double> subtrajectory_features(std::span<const PosePoint> seg,
                                                  std::span<const std::uint8_t> valid,
                                                  const ReferenceFrame& frame) {
  const std::size_t t_sub = seg.size();
  std::vector<double> rows((t_sub - 1) * kSubTrajFeatures, 0.0);
  for (std::size_t t = 1; t < t_sub; ++t) {
    if (!valid[t] || !valid[t - 1]) continue;
    double* r = rows.data() + (t - 1) * kSubTrajFeatures;
    const Vec2 p = frame.to_local(seg[t].x, seg[t].y);
    const Vec2 q = frame.to_local(seg[t - 1].x, seg[t - 1].y);
    const double lh = snap_angle_boundary(wrap_angle(seg[t].heading - frame.heading));
    const double mx = p.x - q.x, my = p.y - q.y;
    const double speed = norm2(mx, my);
    r[0] = p.x;
    r[1] = p.y;
    r[2] = lh;
    r[3] = mx;
    r[4] = my;
    r[5] = snap_angle_boundary(wrap_angle(seg[t].heading - seg[t - 1].heading));
    r[6] = speed;
    r[7] = speed > 1e-12
               ? snap_angle_boundary(wrap_angle(lh - std::atan2(my, mx)))
               : 0.0;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Unroll records
// ---------------------------------------------------------------------------

template <class S>
struct StepNodes {
  using Id = typename Graph<S>::Id;
  Id pos_loc = -1;    // [N*K, 2*T_sub]
  Id pos_scale = -1;  // [N*K, 2*T_sub]
  Id hd_loc = -1;     // [N*K, T_sub]
  Id hd_conc = -1;    // [N*K, T_sub]
};

/// Everything the loss needs from one decoder step. Distribution parameters
/// are tape nodes; geometry is plain data in the frame they are expressed in.
template <class S>
struct StepRecord {
  StepNodes<S> prop_main, prop_over;  // over empty when overprediction off
  StepNodes<S> ref_main, ref_over;    // empty when refinement off
  std::vector<ReferenceFrame> frames;             // [N*K] prediction frames
  std::vector<double> prop_endpoint_global;       // [N*K * 2]
  int t0 = 0;  // global time index of the first predicted step
};

enum class UnrollMode { kTraining, kInference };

template <class S>
struct UnrollResult {
  Forecast forecast;
  std::vector<StepRecord<S>> steps;  // populated in training mode
  typename Graph<S>::Id final_logits = -1;  // [N, K]
  // Cache sizes per module after the full unroll (structural checks).
  int cache_steps_proposer = 0;
  int cache_steps_refiner = 0;
};

/// Test instrumentation: called after the proposal values of step `s` are
/// extracted, before the refiner consumes them. May perturb the buffer laid
/// out as [N*K rows x (2*T_sub pos + T_sub heading)].
using ProposalHook = std::function<void(int step, std::vector<double>& proposal_values)>;

// ---------------------------------------------------------------------------
// Unroller
// ---------------------------------------------------------------------------

template <class S>
class Unroller {
 public:
  using Id = typename Graph<S>::Id;

  Unroller(const Model<S>& model, Graph<S>& g, const Scene& scene, ForwardCtx fctx,
           PinContext* pins = nullptr, ProposalHook hook = nullptr)
      : model_(model),
        g_(g),
        scene_(scene),
        fctx_(fctx),
        pins_(pins),
        hook_(std::move(hook)),
        cfg_(model.cfg) {
    n_ = static_cast<int>(scene.agents.size());
    k_ = cfg_.num_modes;
    t_ = cfg_.t_sub;
    if (scene.t_hist != cfg_.t_hist || scene.t_fut != cfg_.t_fut)
      throw ConfigError("unroll: scene horizon does not match model config");
    for (const auto& a : scene.agents) type_of_.push_back(static_cast<int>(a.type));
  }

  UnrollResult<S> run(UnrollMode mode) {
    map_ = encode_map(model_, g_, scene_.map, fctx_);
    bootstrap_history();

    UnrollResult<S> out;
    out.forecast.scene_id = scene_.id;
    out.forecast.t_fut = cfg_.t_fut;
    const int steps = cfg_.future_steps();
    std::vector<std::vector<PosePoint>> traj(
        static_cast<std::size_t>(n_) * k_);  // accumulated global trajectories

    Id logits = -1;
    for (int s = 0; s < steps; ++s) {
      StepRecord<S> rec = future_step(s, s == steps - 1 ? &logits : nullptr);
      for (int r = 0; r < n_ * k_; ++r)
        for (int tt = 0; tt < t_; ++tt)
          traj[static_cast<std::size_t>(r)].push_back(
              cur_seg_[static_cast<std::size_t>(r)][static_cast<std::size_t>(tt)]);
      if (mode == UnrollMode::kTraining) out.steps.push_back(std::move(rec));
    }

    out.final_logits = logits;
    out.cache_steps_proposer = static_cast<int>(cache_prop_.tokens.size());
    out.cache_steps_refiner = static_cast<int>(cache_ref_.tokens.size());

    // Mode probabilities: softmax over the final-step logits.
    const auto& lv = g_.val(logits);
    for (int n = 0; n < n_; ++n) {
      AgentForecast af;
      af.agent_id = scene_.agents[static_cast<std::size_t>(n)].id;
      double mx = -1e300;
      for (int k = 0; k < k_; ++k)
        mx = std::max(mx, static_cast<double>(lv[static_cast<std::size_t>(n) * k_ + k]));
      double denom = 0.0;
      for (int k = 0; k < k_; ++k)
        denom += std::exp(static_cast<double>(lv[static_cast<std::size_t>(n) * k_ + k]) - mx);
      for (int k = 0; k < k_; ++k) {
        af.probabilities.push_back(
            std::exp(static_cast<double>(lv[static_cast<std::size_t>(n) * k_ + k]) - mx) /
            denom);
        af.modes.push_back(traj[static_cast<std::size_t>(n * k_ + k)]);
      }
      out.forecast.agents.push_back(std::move(af));
    }
    return out;
  }

  /// Cached tokens of one module; exposed for structural tests.
  struct ModuleCache {
    std::vector<Id> tokens;                            // per step [N*modes, D]
    std::vector<std::vector<ReferenceFrame>> frames;   // per step, per row
    std::vector<std::vector<std::uint8_t>> usable;     // per step, per row
    std::vector<int> modes;                            // per step
  };

  const ModuleCache& proposer_cache() const { return cache_prop_; }
  const ModuleCache& refiner_cache() const { return cache_ref_; }

 private:
  struct Plan {
    AttnPattern temporal, map, social, mode;
    Id temporal_ctx = -1;
    std::vector<double> four_temporal, four_map, four_social, four_mode;
    std::vector<int> mode_idx, time_idx;
  };

  // ---- helpers -------------------------------------------------------------

  static ReferenceFrame frame_from_pose(const PosePoint& p, int t) {
    return ReferenceFrame{p.x, p.y, wrap_angle(p.heading), t};
  }

  /// Frame of a gt segment: pose of the last valid state in it; falls back to
  /// the agent's first valid historical state, then to the origin. Future
  /// states are never consulted.
  ReferenceFrame gt_segment_frame(const Agent& agent, int t0, int t1) const {
    for (int t = t1 - 1; t >= t0; --t) {
      const auto& st = agent.states[static_cast<std::size_t>(t)];
      if (st.valid) return ReferenceFrame{st.x, st.y, st.heading, t1 - 1};
    }
    for (int t = 0; t < scene_.t_hist; ++t) {
      const auto& st = agent.states[static_cast<std::size_t>(t)];
      if (st.valid) return ReferenceFrame{st.x, st.y, st.heading, t1 - 1};
    }
    return ReferenceFrame{0.0, 0.0, 0.0, t1 - 1};
  }

  /// Tokenizer outputs (plus type embedding) for a batch of segments.
  Id tokenize(const DecoderModuleParams<S>& mod,
              const std::vector<std::vector<PosePoint>>& segs,
              const std::vector<std::vector<std::uint8_t>>& valids,
              const std::vector<ReferenceFrame>& frames,
              const std::vector<int>& types) {
    const int rows = static_cast<int>(segs.size());
    const int steps = t_ - 1;
    const int fdim = static_cast<int>(model_.bands.feature_dim(kSubTrajFeatures));
    std::vector<double> four(static_cast<std::size_t>(rows) * steps * fdim);
    for (int r = 0; r < rows; ++r) {
      const auto feats = subtrajectory_features(segs[static_cast<std::size_t>(r)],
                                                valids[static_cast<std::size_t>(r)],
                                                frames[static_cast<std::size_t>(r)]);
      for (int st = 0; st < steps; ++st)
        model_.bands.compute(
            std::span<const double>(feats.data() + static_cast<std::size_t>(st) * kSubTrajFeatures,
                                    kSubTrajFeatures),
            std::span<double>(four.data() +
                                  (static_cast<std::size_t>(r) * steps + st) * fdim,
                              static_cast<std::size_t>(fdim)));
    }
    Id x = g_.input(rows * steps, fdim, four);
    x = mod.tok_step_mlp.apply(g_, x);
    x = g_.reshape(x, rows, steps * cfg_.embed_dim);
    x = mod.tok_merge_mlp.apply(g_, x);
    return g_.add_gathered_rows(x, g_.param(*mod.type_emb.table), types);
  }

  void append_fourier(std::vector<double>& rows, const RelDescriptor& d) const {
    const std::size_t off = rows.size();
    rows.resize(off + model_.bands.feature_dim(4));
    const auto arr = d.as_array();
    model_.bands.compute(arr, std::span<double>(rows.data() + off,
                                                model_.bands.feature_dim(4)));
  }

  /// Map/social/mode patterns for a set of query rows. `row_agent[r]` and
  /// `row_mode[r]` identify each row; `neighbor_frames` are the frames used
  /// for the social radius test (the same rows' frames).
  void build_common_patterns(Plan& plan, const std::vector<ReferenceFrame>& frames,
                             const std::vector<std::uint8_t>& usable,
                             const std::vector<int>& row_agent,
                             const std::vector<int>& row_mode,
                             const std::vector<int>& row_step) const {
    const int rows = static_cast<int>(frames.size());
    plan.map.keys_of.resize(static_cast<std::size_t>(rows));
    plan.social.keys_of.resize(static_cast<std::size_t>(rows));
    plan.mode.keys_of.resize(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      if (!usable[static_cast<std::size_t>(r)]) continue;
      const ReferenceFrame& f = frames[static_cast<std::size_t>(r)];
      // Map attention: polylines whose frame origin lies within the radius.
      for (int m = 0; m < map_.count(); ++m) {
        const auto& mf = map_.frames[static_cast<std::size_t>(m)];
        if (!within_radius(mf.x - f.x, mf.y - f.y, cfg_.radius)) continue;
        RelDescriptor d = relative_descriptor(f, mf);
        d.dt = 0.0;  // the map is timeless
        plan.map.keys_of[static_cast<std::size_t>(r)].push_back({m, plan.map.n_pairs++});
        append_fourier(plan.four_map, d);
        if (cfg_.line_attention) {
          RelDescriptor cp = closest_point_descriptor(
              f, map_.map->polylines[static_cast<std::size_t>(m)].points);
          cp.dt = 0.0;
          append_fourier(plan.four_map, cp);
        }
      }
      // Social attention: other agents, same mode, same step, within radius.
      for (int q = 0; q < rows; ++q) {
        if (q == r || !usable[static_cast<std::size_t>(q)]) continue;
        if (row_agent[static_cast<std::size_t>(q)] == row_agent[static_cast<std::size_t>(r)])
          continue;
        if (row_mode[static_cast<std::size_t>(q)] != row_mode[static_cast<std::size_t>(r)])
          continue;
        if (row_step[static_cast<std::size_t>(q)] != row_step[static_cast<std::size_t>(r)])
          continue;
        const auto& qf = frames[static_cast<std::size_t>(q)];
        if (!within_radius(qf.x - f.x, qf.y - f.y, cfg_.radius)) continue;
        plan.social.keys_of[static_cast<std::size_t>(r)].push_back({q, plan.social.n_pairs++});
        append_fourier(plan.four_social, relative_descriptor(f, qf));
      }
      // Mode attention: all modes of the same agent at the same step (self
      // included; a single mode reduces to a one-element softmax).
      for (int q = 0; q < rows; ++q) {
        if (!usable[static_cast<std::size_t>(q)]) continue;
        if (row_agent[static_cast<std::size_t>(q)] != row_agent[static_cast<std::size_t>(r)])
          continue;
        if (row_step[static_cast<std::size_t>(q)] != row_step[static_cast<std::size_t>(r)])
          continue;
        plan.mode.keys_of[static_cast<std::size_t>(r)].push_back({q, plan.mode.n_pairs++});
        append_fourier(plan.four_mode, relative_descriptor(f, frames[static_cast<std::size_t>(q)]));
      }
    }
  }

  /// Temporal pattern against the caches. For each query row, keys are cached
  /// tokens of the same agent: proposer steps < `prop_limit` and refiner steps
  /// < `ref_limit` (bootstrap rows use per-row limits via `row_step` + offset).
  void build_temporal_pattern(Plan& plan, const std::vector<ReferenceFrame>& frames,
                              const std::vector<std::uint8_t>& usable,
                              const std::vector<int>& row_agent,
                              const std::vector<int>& row_mode,
                              const std::vector<int>& prop_limit,
                              const std::vector<int>& ref_limit) {
    const int rows = static_cast<int>(frames.size());
    plan.temporal.keys_of.resize(static_cast<std::size_t>(rows));

    std::vector<Id> parts;
    std::vector<int> part_offset_prop(cache_prop_.tokens.size());
    std::vector<int> part_offset_ref(cache_ref_.tokens.size());
    int off = 0;
    for (std::size_t j = 0; j < cache_prop_.tokens.size(); ++j) {
      part_offset_prop[j] = off;
      parts.push_back(cache_prop_.tokens[j]);
      off += g_.rows(cache_prop_.tokens[j]);
    }
    for (std::size_t j = 0; j < cache_ref_.tokens.size(); ++j) {
      part_offset_ref[j] = off;
      parts.push_back(cache_ref_.tokens[j]);
      off += g_.rows(cache_ref_.tokens[j]);
    }
    plan.temporal_ctx = parts.empty() ? g_.zeros(0, cfg_.embed_dim) : g_.concat_rows(parts);

    auto add_keys = [&](int r, const ModuleCache& cache, const std::vector<int>& offsets,
                        int limit) {
      const ReferenceFrame& f = frames[static_cast<std::size_t>(r)];
      for (int j = 0; j < limit; ++j) {
        const int modes_j = cache.modes[static_cast<std::size_t>(j)];
        const int key_row = row_agent[static_cast<std::size_t>(r)] * modes_j +
                            std::min(row_mode[static_cast<std::size_t>(r)], modes_j - 1);
        if (!cache.usable[static_cast<std::size_t>(j)][static_cast<std::size_t>(key_row)])
          continue;
        plan.temporal.keys_of[static_cast<std::size_t>(r)].push_back(
            {offsets[static_cast<std::size_t>(j)] + key_row, plan.temporal.n_pairs++});
        append_fourier(plan.four_temporal,
                       relative_descriptor(
                           f, cache.frames[static_cast<std::size_t>(j)]
                                          [static_cast<std::size_t>(key_row)]));
      }
    };

    for (int r = 0; r < rows; ++r) {
      if (!usable[static_cast<std::size_t>(r)]) continue;
      add_keys(r, cache_prop_, part_offset_prop, prop_limit[static_cast<std::size_t>(r)]);
      add_keys(r, cache_ref_, part_offset_ref, ref_limit[static_cast<std::size_t>(r)]);
    }
  }

  Id rel_node(const RelEncoder<S>& enc, const std::vector<double>& rows, int fdim,
              int n_pairs) {
    if (n_pairs == 0) return -1;
    return enc.apply(g_, g_.input(n_pairs, fdim, rows));
  }

  Id apply_module(const DecoderModuleParams<S>& mod, Id x, const Plan& plan) {
    const int fdim = model_.pair_feature_dim();
    const int fdim_map = model_.map_pair_feature_dim();
    const Id rel_t = rel_node(mod.rel_temporal, plan.four_temporal, fdim,
                              plan.temporal.n_pairs);
    const Id rel_m = rel_node(mod.rel_map, plan.four_map, fdim_map, plan.map.n_pairs);
    const Id rel_s = rel_node(mod.rel_social, plan.four_social, fdim, plan.social.n_pairs);
    const Id rel_k = rel_node(mod.rel_mode, plan.four_mode, fdim, plan.mode.n_pairs);
    for (const auto& round : mod.rounds) {
      x = round.temporal.apply(g_, x, plan.temporal_ctx, rel_t, plan.temporal, fctx_);
      x = round.map.apply(g_, x, map_.tokens, rel_m, plan.map, fctx_);
      x = round.social.apply(g_, x, x, rel_s, plan.social, fctx_);
      Id xm = g_.add_gathered_rows(x, g_.param(*mod.mode_emb.table), plan.mode_idx);
      xm = g_.add_gathered_rows(xm, g_.param(*mod.time_emb.table), plan.time_idx);
      x = round.mode.apply(g_, xm, xm, rel_k, plan.mode, fctx_);
    }
    return x;
  }

  /// Splits the trajectory head output into constrained distribution params.
  void detokenize(const DecoderModuleParams<S>& mod, Id features, StepNodes<S>& main,
                  StepNodes<S>& over) {
    const Id raw = mod.detok_traj.apply(g_, features);
    const int tt = t_;
    main.pos_loc = g_.slice_cols(raw, 0, 2 * tt);
    main.pos_scale = g_.softplus_shift(g_.slice_cols(raw, 2 * tt, 2 * tt), 1e-3);
    main.hd_loc = g_.slice_cols(raw, 4 * tt, tt);
    main.hd_conc = g_.softplus_shift(g_.slice_cols(raw, 5 * tt, tt), 1e-3);
    if (cfg_.overprediction) {
      over.pos_loc = g_.slice_cols(raw, 6 * tt, 2 * tt);
      over.pos_scale = g_.softplus_shift(g_.slice_cols(raw, 8 * tt, 2 * tt), 1e-3);
      over.hd_loc = g_.slice_cols(raw, 10 * tt, tt);
      over.hd_conc = g_.softplus_shift(g_.slice_cols(raw, 11 * tt, tt), 1e-3);
    }
  }

  /// Flattens loc nodes into a pinnable buffer [rows x (2T pos + T heading)].
  std::vector<double> extract_locs(const StepNodes<S>& nodes) {
    const auto& pv = g_.val(nodes.pos_loc);
    const auto& hv = g_.val(nodes.hd_loc);
    const int rows = g_.rows(nodes.pos_loc);
    std::vector<double> out(static_cast<std::size_t>(rows) * 3 * t_);
    for (int r = 0; r < rows; ++r)
      for (int tt = 0; tt < t_; ++tt) {
        out[(static_cast<std::size_t>(r) * 3 + 0) * t_ + tt] =
            static_cast<double>(pv[(static_cast<std::size_t>(r) * 2) * t_ + 2 * tt]);
        out[(static_cast<std::size_t>(r) * 3 + 1) * t_ + tt] =
            static_cast<double>(pv[(static_cast<std::size_t>(r) * 2) * t_ + 2 * tt + 1]);
        out[(static_cast<std::size_t>(r) * 3 + 2) * t_ + tt] =
            static_cast<double>(hv[static_cast<std::size_t>(r) * t_ + tt]);
      }
    return out;
  }

  /// Local buffer -> global segments, one per row, in each row's frame.
  std::vector<std::vector<PosePoint>> to_global_segments(
      const std::vector<double>& locs, const std::vector<ReferenceFrame>& frames) const {
    const int rows = static_cast<int>(frames.size());
    std::vector<std::vector<PosePoint>> segs(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      auto& seg = segs[static_cast<std::size_t>(r)];
      seg.resize(static_cast<std::size_t>(t_));
      const ReferenceFrame& f = frames[static_cast<std::size_t>(r)];
      for (int tt = 0; tt < t_; ++tt) {
        const double lx = locs[(static_cast<std::size_t>(r) * 3 + 0) * t_ + tt];
        const double ly = locs[(static_cast<std::size_t>(r) * 3 + 1) * t_ + tt];
        const double lh = locs[(static_cast<std::size_t>(r) * 3 + 2) * t_ + tt];
        const Vec2 gpos = f.to_global(lx, ly);
        seg[static_cast<std::size_t>(tt)] = {gpos.x, gpos.y, wrap_angle(lh + f.heading)};
      }
    }
    return segs;
  }

  // ---- bootstrap ------------------------------------------------------------

  void bootstrap_history() {
    const int h = cfg_.history_steps();
    const int rows = n_ * h;  // step-major: row = step * N + agent

    std::vector<std::vector<PosePoint>> segs(static_cast<std::size_t>(rows));
    std::vector<std::vector<std::uint8_t>> valids(static_cast<std::size_t>(rows));
    std::vector<ReferenceFrame> frames(static_cast<std::size_t>(rows));
    std::vector<std::uint8_t> usable(static_cast<std::size_t>(rows));
    std::vector<int> types(static_cast<std::size_t>(rows));
    std::vector<int> row_agent(static_cast<std::size_t>(rows)), row_mode(rows, 0),
        row_step(static_cast<std::size_t>(rows));

    for (int u = 0; u < h; ++u) {
      for (int n = 0; n < n_; ++n) {
        const int r = u * n_ + n;
        const Agent& agent = scene_.agents[static_cast<std::size_t>(n)];
        const int t0 = u * t_, t1 = (u + 1) * t_;
        auto& seg = segs[static_cast<std::size_t>(r)];
        auto& vld = valids[static_cast<std::size_t>(r)];
        seg.resize(static_cast<std::size_t>(t_));
        vld.resize(static_cast<std::size_t>(t_));
        bool any = false;
        for (int tt = t0; tt < t1; ++tt) {
          const auto& st = agent.states[static_cast<std::size_t>(tt)];
          seg[static_cast<std::size_t>(tt - t0)] = {st.x, st.y, st.heading};
          vld[static_cast<std::size_t>(tt - t0)] = st.valid ? 1 : 0;
          any = any || st.valid;
        }
        frames[static_cast<std::size_t>(r)] = gt_segment_frame(agent, t0, t1);
        usable[static_cast<std::size_t>(r)] = any ? 1 : 0;
        types[static_cast<std::size_t>(r)] = type_of_[static_cast<std::size_t>(n)];
        row_agent[static_cast<std::size_t>(r)] = n;
        row_step[static_cast<std::size_t>(r)] = u;
      }
    }

    const Id p_tok = tokenize(model_.proposer, segs, valids, frames, types);
    const Id r_tok =
        cfg_.refinement ? tokenize(*model_.refiner, segs, valids, frames, types) : -1;

    // Fill both caches up front; the causal masks below reference them.
    for (int u = 0; u < h; ++u) {
      std::vector<ReferenceFrame> fr(frames.begin() + static_cast<std::ptrdiff_t>(u) * n_,
                                     frames.begin() + static_cast<std::ptrdiff_t>(u + 1) * n_);
      std::vector<std::uint8_t> us(usable.begin() + static_cast<std::ptrdiff_t>(u) * n_,
                                   usable.begin() + static_cast<std::ptrdiff_t>(u + 1) * n_);
      cache_prop_.tokens.push_back(g_.slice_rows(p_tok, u * n_, n_));
      cache_prop_.frames.push_back(fr);
      cache_prop_.usable.push_back(us);
      cache_prop_.modes.push_back(1);
      if (cfg_.refinement) {
        cache_ref_.tokens.push_back(g_.slice_rows(r_tok, u * n_, n_));
        cache_ref_.frames.push_back(fr);
        cache_ref_.usable.push_back(us);
        cache_ref_.modes.push_back(1);
      }
    }

    // Proposer pass: segment u attends to cached tokens of segments < u.
    Plan plan_p;
    plan_p.mode_idx.assign(static_cast<std::size_t>(rows), 0);
    plan_p.time_idx.assign(static_cast<std::size_t>(rows), 0);
    std::vector<int> limit_lt(static_cast<std::size_t>(rows)),
        limit_le(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
      limit_lt[static_cast<std::size_t>(r)] = row_step[static_cast<std::size_t>(r)];
      limit_le[static_cast<std::size_t>(r)] = row_step[static_cast<std::size_t>(r)] + 1;
    }
    std::vector<int> ref_lt = cfg_.refinement ? limit_lt : std::vector<int>(rows, 0);
    build_temporal_pattern(plan_p, frames, usable, row_agent, row_mode, limit_lt, ref_lt);
    build_common_patterns(plan_p, frames, usable, row_agent, row_mode, row_step);
    const Id h_prop = apply_module(model_.proposer, p_tok, plan_p);

    // Refiner pass: sees the proposer token of its own segment as well.
    // Outputs of both passes are discarded; only the cached tokens matter.
    if (cfg_.refinement) {
      Plan plan_r;
      plan_r.mode_idx.assign(static_cast<std::size_t>(rows), 0);
      plan_r.time_idx.assign(static_cast<std::size_t>(rows), 0);
      build_temporal_pattern(plan_r, frames, usable, row_agent, row_mode, limit_le,
                             limit_lt);
      build_common_patterns(plan_r, frames, usable, row_agent, row_mode, row_step);
      const Id x_ref = g_.add(r_tok, h_prop);
      (void)apply_module(*model_.refiner, x_ref, plan_r);
    }

    // Multimodal duplication: the last history segment becomes the first
    // future input for every mode.
    cur_seg_.assign(static_cast<std::size_t>(n_) * k_, {});
    cur_valid_.assign(static_cast<std::size_t>(n_) * k_, {});
    cur_frames_.assign(static_cast<std::size_t>(n_) * k_, {});
    cur_usable_.assign(static_cast<std::size_t>(n_) * k_, 1);
    for (int n = 0; n < n_; ++n) {
      const int src = (cfg_.history_steps() - 1) * n_ + n;
      for (int k = 0; k < k_; ++k) {
        const int r = n * k_ + k;
        cur_seg_[static_cast<std::size_t>(r)] = segs[static_cast<std::size_t>(src)];
        cur_valid_[static_cast<std::size_t>(r)] = valids[static_cast<std::size_t>(src)];
        cur_frames_[static_cast<std::size_t>(r)] = frames[static_cast<std::size_t>(src)];
        cur_usable_[static_cast<std::size_t>(r)] = usable[static_cast<std::size_t>(src)];
      }
    }
  }

  // ---- future steps -----------------------------------------------------------

  StepRecord<S> future_step(int s, Id* logits_out) {
    const int rows = n_ * k_;
    std::vector<int> row_agent(static_cast<std::size_t>(rows)),
        row_mode(static_cast<std::size_t>(rows)), row_step(rows, s);
    std::vector<int> types(static_cast<std::size_t>(rows));
    for (int n = 0; n < n_; ++n)
      for (int k = 0; k < k_; ++k) {
        row_agent[static_cast<std::size_t>(n * k_ + k)] = n;
        row_mode[static_cast<std::size_t>(n * k_ + k)] = k;
        types[static_cast<std::size_t>(n * k_ + k)] = type_of_[static_cast<std::size_t>(n)];
      }

    StepRecord<S> rec;
    rec.t0 = cfg_.t_hist + s * t_;
    rec.frames = cur_frames_;

    // Proposer.
    const Id p_tok = tokenize(model_.proposer, cur_seg_, cur_valid_, cur_frames_, types);
    Plan plan_p;
    plan_p.mode_idx = row_mode;
    plan_p.time_idx.assign(static_cast<std::size_t>(rows), s);
    const std::vector<int> all_prop(rows, static_cast<int>(cache_prop_.tokens.size()));
    const std::vector<int> all_ref(rows, static_cast<int>(cache_ref_.tokens.size()));
    build_temporal_pattern(plan_p, cur_frames_, cur_usable_, row_agent, row_mode,
                           all_prop, all_ref);
    build_common_patterns(plan_p, cur_frames_, cur_usable_, row_agent, row_mode, row_step);
    const Id h_prop = apply_module(model_.proposer, p_tok, plan_p);

    cache_prop_.tokens.push_back(p_tok);
    cache_prop_.frames.push_back(cur_frames_);
    cache_prop_.usable.push_back(cur_usable_);
    cache_prop_.modes.push_back(k_);

    detokenize(model_.proposer, h_prop, rec.prop_main, rec.prop_over);

    // Proposal values cross the stop-gradient boundary here.
    std::vector<double> prop_vals = extract_locs(rec.prop_main);
    if (hook_) hook_(s, prop_vals);
    if (pins_) pins_->pin(prop_vals);
    auto prop_segs = to_global_segments(prop_vals, cur_frames_);

    rec.prop_endpoint_global.resize(static_cast<std::size_t>(rows) * 2);
    for (int r = 0; r < rows; ++r) {
      rec.prop_endpoint_global[static_cast<std::size_t>(r) * 2] =
          prop_segs[static_cast<std::size_t>(r)].back().x;
      rec.prop_endpoint_global[static_cast<std::size_t>(r) * 2 + 1] =
          prop_segs[static_cast<std::size_t>(r)].back().y;
    }

    if (!cfg_.refinement) {
      if (logits_out != nullptr)
        *logits_out = g_.reshape(model_.proposer.detok_logit.apply(g_, h_prop), n_, k_);
      cur_seg_ = std::move(prop_segs);
      for (auto& v : cur_valid_) std::fill(v.begin(), v.end(), 1);
      for (int r = 0; r < rows; ++r)
        cur_frames_[static_cast<std::size_t>(r)] = frame_from_pose(
            cur_seg_[static_cast<std::size_t>(r)].back(), rec.t0 + t_ - 1);
      std::fill(cur_usable_.begin(), cur_usable_.end(), 1);
      return rec;
    }

    // Refiner: reference point moves to the proposal endpoint; everything is
    // re-expressed relative to the new frames.
    std::vector<ReferenceFrame> prop_frames(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r)
      prop_frames[static_cast<std::size_t>(r)] =
          frame_from_pose(prop_segs[static_cast<std::size_t>(r)].back(), rec.t0 + t_ - 1);

    std::vector<std::vector<std::uint8_t>> full_valid(
        static_cast<std::size_t>(rows), std::vector<std::uint8_t>(static_cast<std::size_t>(t_), 1));
    const Id r_tok = tokenize(*model_.refiner, prop_segs, full_valid, prop_frames, types);

    Plan plan_r;
    plan_r.mode_idx = row_mode;
    plan_r.time_idx.assign(static_cast<std::size_t>(rows), s);
    const std::vector<int> all_prop2(rows, static_cast<int>(cache_prop_.tokens.size()));
    const std::vector<int> all_ref2(rows, static_cast<int>(cache_ref_.tokens.size()));
    build_temporal_pattern(plan_r, prop_frames, cur_usable_, row_agent, row_mode,
                           all_prop2, all_ref2);
    build_common_patterns(plan_r, prop_frames, cur_usable_, row_agent, row_mode, row_step);
    const Id x_ref = g_.add(r_tok, h_prop);
    const Id h_ref = apply_module(*model_.refiner, x_ref, plan_r);

    cache_ref_.tokens.push_back(r_tok);
    cache_ref_.frames.push_back(prop_frames);
    cache_ref_.usable.push_back(cur_usable_);
    cache_ref_.modes.push_back(k_);

    // Refined trajectory = detached proposal + predicted offsets, in the
    // proposal's frame; scales and concentrations are re-emitted. The
    // detached bases come from the pinned buffers, never from live nodes.
    StepNodes<S> off_main, off_over;
    detokenize(*model_.refiner, h_ref, off_main, off_over);
    rec.ref_main.pos_loc = g_.add(locs_to_pos_const(prop_vals), off_main.pos_loc);
    rec.ref_main.hd_loc = g_.add(locs_to_hd_const(prop_vals), off_main.hd_loc);
    rec.ref_main.pos_scale = off_main.pos_scale;
    rec.ref_main.hd_conc = off_main.hd_conc;
    if (cfg_.overprediction) {
      std::vector<double> over_vals = extract_locs(rec.prop_over);
      if (pins_) pins_->pin(over_vals);
      rec.ref_over.pos_loc = g_.add(locs_to_pos_const(over_vals), off_over.pos_loc);
      rec.ref_over.hd_loc = g_.add(locs_to_hd_const(over_vals), off_over.hd_loc);
      rec.ref_over.pos_scale = off_over.pos_scale;
      rec.ref_over.hd_conc = off_over.hd_conc;
    }

    if (logits_out != nullptr)
      *logits_out = g_.reshape(model_.refiner->detok_logit.apply(g_, h_ref), n_, k_);

    // Refined values feed the next decoder step (detached).
    std::vector<double> ref_vals = extract_locs(rec.ref_main);
    if (pins_) pins_->pin(ref_vals);
    cur_seg_ = to_global_segments(ref_vals, cur_frames_);
    for (auto& v : cur_valid_) std::fill(v.begin(), v.end(), 1);
    for (int r = 0; r < rows; ++r)
      cur_frames_[static_cast<std::size_t>(r)] =
          frame_from_pose(cur_seg_[static_cast<std::size_t>(r)].back(), rec.t0 + t_ - 1);
    std::fill(cur_usable_.begin(), cur_usable_.end(), 1);
    return rec;
  }

  /// Packed loc buffer -> constant node [rows, 2*T] of interleaved (x, y).
  Id locs_to_pos_const(const std::vector<double>& locs) {
    const int rows = static_cast<int>(locs.size()) / (3 * t_);
    std::vector<double> out(static_cast<std::size_t>(rows) * 2 * t_);
    for (int r = 0; r < rows; ++r)
      for (int tt = 0; tt < t_; ++tt) {
        out[static_cast<std::size_t>(r) * 2 * t_ + 2 * tt] =
            locs[(static_cast<std::size_t>(r) * 3 + 0) * t_ + tt];
        out[static_cast<std::size_t>(r) * 2 * t_ + 2 * tt + 1] =
            locs[(static_cast<std::size_t>(r) * 3 + 1) * t_ + tt];
      }
    return g_.input(rows, 2 * t_, out);
  }

  Id locs_to_hd_const(const std::vector<double>& locs) {
    const int rows = static_cast<int>(locs.size()) / (3 * t_);
    std::vector<double> out(static_cast<std::size_t>(rows) * t_);
    for (int r = 0; r < rows; ++r)
      for (int tt = 0; tt < t_; ++tt)
        out[static_cast<std::size_t>(r) * t_ + tt] =
            locs[(static_cast<std::size_t>(r) * 3 + 2) * t_ + tt];
    return g_.input(rows, t_, out);
  }

  const Model<S>& model_;
  Graph<S>& g_;
  const Scene& scene_;
  ForwardCtx fctx_;
  PinContext* pins_;
  ProposalHook hook_;
  const ModelConfig& cfg_;
  int n_ = 0, k_ = 1, t_ = 0;
  std::vector<int> type_of_;
  MapTokens<S> map_;
  ModuleCache cache_prop_, cache_ref_;
  std::vector<std::vector<PosePoint>> cur_seg_;
  std::vector<std::vector<std::uint8_t>> cur_valid_;
  std::vector<ReferenceFrame> cur_frames_;
  std::vector<std::uint8_t> cur_usable_;
};

/// Runs the full autoregressive unroll. In inference mode the ground-truth
/// future is never touched; training mode additionally returns per-step
/// distribution parameters for the loss.
template <class S>
UnrollResult<S> unroll_future(const Model<S>& model, Graph<S>& g, const Scene& scene,
                              UnrollMode mode, ForwardCtx fctx = {},
                              PinContext* pins = nullptr, ProposalHook hook = nullptr) {
  Unroller<S> unroller(model, g, scene, fctx, pins, std::move(hook));
  return unroller.run(mode);
}

}  // namespace trajcast
