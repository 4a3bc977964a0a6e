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
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>
#include <vector>

#include "trajcast/checkpoint.hpp"
#include "trajcast/loss.hpp"

namespace trajcast {

/// Cosine decay from lr0 to 0 across `total` optimizer steps.
inline double cosine_lr(int step, int total, double lr0) {
  if (total <= 1) return lr0;
  const double u = static_cast<double>(std::min(step, total - 1)) / (total - 1);
  return lr0 * 0.5 * (1.0 + std::cos(kPi * u));
}

/// Adam with decoupled weight decay; moments follow the store's parameter
/// order. beta = (0.9, 0.999), eps = 1e-8.
template <class S>
class AdamW {
 public:
  explicit AdamW(const ParamStore<S>& store, double weight_decay)
      : weight_decay_(weight_decay) {
    m_.resize(store.size());
    v_.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_[i].assign(store.at(i).size(), 0.0);
      v_[i].assign(store.at(i).size(), 0.0);
    }
  }

  void step(ParamStore<S>& store, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store.at(i);
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]);
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mh = m_[i][j] / bc1;
        const double vh = v_[i][j] / bc2;
        const double upd = mh / (std::sqrt(vh) + eps_) + weight_decay_ * static_cast<double>(p.value[j]);
        p.value[j] = static_cast<S>(static_cast<double>(p.value[j]) - lr * upd);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  double weight_decay_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Inference over many scenes, optionally in parallel; results keep scene
/// order, so the output is independent of the worker count.
template <class S>
std::vector<Forecast> forecast_scenes(const Model<S>& model,
                                      const std::vector<Scene>& scenes, int jobs = 1) {
  std::vector<Forecast> out(scenes.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < scenes.size(); i += stride) {
      Graph<S> g;
      out[i] = unroll_future(model, g, scenes[i], UnrollMode::kInference).forecast;
    }
  };
  if (jobs <= 1 || scenes.size() <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(scenes.size()));
    pool.reserve(static_cast<std::size_t>(n));
    for (int w = 0; w < n; ++w)
      pool.emplace_back(work, static_cast<std::size_t>(w), static_cast<std::size_t>(n));
    for (auto& th : pool) th.join();
  }
  return out;
}

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "step,lr,proposal_pos,proposal_hd,refine_pos,refine_hd,over_proposal_pos,"
        "over_proposal_hd,over_refine_pos,over_refine_hd,classification,total\n";
  for (const auto& r : rows) {
    os << r.step << ',' << r.lr;
    for (double p : r.loss.parts()) os << ',' << p;
    os << ',' << r.loss.total << "\n";
  }
  return os.str();
}

struct TrainResult {
  int steps = 0;
  std::vector<TrainLogRow> log;
  LossBreakdown final_loss;
};

/// Full training loop: shuffled epochs, gradient accumulation to the virtual
/// batch size, AdamW with cosine decay, per-epoch checkpointing. Deterministic
/// for a fixed seed; worker parallelism reduces gradients in scene order.
template <class S>
TrainResult train(Model<S>& model, const std::vector<Scene>& scenes,
                  const RunConfig& cfg, const std::string& out_dir = "",
                  std::uint64_t start_step = 0,
                  const std::function<void(int, Model<S>&)>& epoch_callback = nullptr) {
  if (scenes.empty()) throw ConfigError("train: no scenes");
  const TrainConfig& tc = cfg.train;
  const int per_epoch =
      static_cast<int>((scenes.size() + static_cast<std::size_t>(tc.batch) - 1) /
                       static_cast<std::size_t>(tc.batch));
  int total_steps = tc.epochs * per_epoch;
  if (tc.max_steps > 0) total_steps = std::min(total_steps, tc.max_steps);

  AdamW<S> opt(model.params, tc.weight_decay);
  TrainResult result;
  int step = static_cast<int>(start_step);
  std::uint64_t pass_counter = 0;

  struct PassOutput {
    LossBreakdown loss;
    double min_scale = 1.0;
  };

  auto run_pass = [&](const Scene& scene, std::uint64_t pass_id, Graph<S>& g) {
    Rng drop_rng(cfg.seed * 0x9e3779b97f4a7c15ull + pass_id * 0xda942042e4dd58b5ull + 1);
    ForwardCtx fctx;
    if (model.cfg.dropout > 0.0) {
      fctx.dropout_rng = &drop_rng;
      fctx.dropout_rate = model.cfg.dropout;
    }
    const auto unroll = unroll_future(model, g, scene, UnrollMode::kTraining, fctx);
    const auto loss = compute_losses(model, g, scene, unroll, tc.winner_mode);
    PassOutput out;
    out.loss = loss.values;
    for (const auto& rec : unroll.steps) {
      for (double v : g.val(rec.prop_main.pos_scale))
        out.min_scale = std::min(out.min_scale, static_cast<double>(v));
      if (rec.ref_main.pos_scale >= 0)
        for (double v : g.val(rec.ref_main.pos_scale))
          out.min_scale = std::min(out.min_scale, static_cast<double>(v));
    }
    g.backward(loss.total, /*flush_param_grads=*/false);
    return out;
  };

  for (int epoch = 0; epoch < tc.epochs && step < total_steps; ++epoch) {
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(cfg.seed ^ (0xabcd0000ull + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::size_t cursor = 0;
    while (cursor < order.size() && step < total_steps) {
      const std::size_t batch_end =
          std::min(order.size(), cursor + static_cast<std::size_t>(tc.batch));
      const int count = static_cast<int>(batch_end - cursor);

      model.params.zero_grad();
      LossBreakdown batch_loss;
      double min_scale = 1.0;

      std::vector<std::unique_ptr<Graph<S>>> graphs(static_cast<std::size_t>(count));
      std::vector<PassOutput> outs(static_cast<std::size_t>(count));
      std::vector<std::string> errors(static_cast<std::size_t>(count));
      const int workers = std::min(cfg.jobs, count);
      auto work = [&](int begin) {
        for (int i = begin; i < count; i += std::max(1, workers)) {
          try {
            graphs[static_cast<std::size_t>(i)] = std::make_unique<Graph<S>>();
            outs[static_cast<std::size_t>(i)] =
                run_pass(scenes[order[cursor + static_cast<std::size_t>(i)]],
                         pass_counter + static_cast<std::uint64_t>(i),
                         *graphs[static_cast<std::size_t>(i)]);
          } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(i)] = e.what();
          }
        }
      };
      if (workers <= 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& th : pool) th.join();
      }
      for (int i = 0; i < count; ++i) {
        if (!errors[static_cast<std::size_t>(i)].empty())
          throw NumericError("training aborted on scene '" +
                             scenes[order[cursor + static_cast<std::size_t>(i)]].id +
                             "': " + errors[static_cast<std::size_t>(i)]);
        graphs[static_cast<std::size_t>(i)]->apply_param_grads();  // fixed order
        const auto& l = outs[static_cast<std::size_t>(i)].loss;
        batch_loss.proposal_pos += l.proposal_pos;
        batch_loss.proposal_hd += l.proposal_hd;
        batch_loss.refine_pos += l.refine_pos;
        batch_loss.refine_hd += l.refine_hd;
        batch_loss.over_proposal_pos += l.over_proposal_pos;
        batch_loss.over_proposal_hd += l.over_proposal_hd;
        batch_loss.over_refine_pos += l.over_refine_pos;
        batch_loss.over_refine_hd += l.over_refine_hd;
        batch_loss.classification += l.classification;
        batch_loss.total += l.total;
        min_scale = std::min(min_scale, outs[static_cast<std::size_t>(i)].min_scale);
      }
      pass_counter += static_cast<std::uint64_t>(count);

      if (min_scale < 1e-3 - 1e-9)
        throw NumericError("scale positivity violated during training");

      // Average the accumulated gradients over the batch.
      const S inv = static_cast<S>(1.0 / count);
      for (std::size_t i = 0; i < model.params.size(); ++i)
        for (auto& gval : model.params.at(i).grad) gval *= inv;

      const double lr = cosine_lr(step, total_steps, tc.lr);
      opt.step(model.params, lr);
      ++step;

      TrainLogRow row;
      row.step = step;
      row.lr = lr;
      const double invd = 1.0 / count;
      row.loss = batch_loss;
      row.loss.proposal_pos *= invd;
      row.loss.proposal_hd *= invd;
      row.loss.refine_pos *= invd;
      row.loss.refine_hd *= invd;
      row.loss.over_proposal_pos *= invd;
      row.loss.over_proposal_hd *= invd;
      row.loss.over_refine_pos *= invd;
      row.loss.over_refine_hd *= invd;
      row.loss.classification *= invd;
      row.loss.total *= invd;
      result.log.push_back(row);
      cursor = batch_end;
    }

    if (!out_dir.empty()) {
      save_checkpoint(model.params, config_hash(model.cfg),
                      static_cast<std::uint64_t>(step), out_dir + "/checkpoint.bin");
      std::ofstream log(out_dir + "/train_log.csv");
      log << train_log_csv(result.log);
    }
    if (epoch_callback) epoch_callback(epoch, model);
  }

  result.steps = step;
  if (!result.log.empty()) result.final_loss = result.log.back().loss;
  return result;
}

}  // namespace trajcast
