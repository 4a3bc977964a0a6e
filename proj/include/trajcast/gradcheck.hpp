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
#include <string>
#include <vector>

#include "trajcast/tape.hpp"

namespace trajcast {

/// Freezes values that cross stop-gradient boundaries so that central
/// differences probe the same objective the analytic gradient is defined on:
/// the recording run stores every pinned buffer in call order; replay runs
/// substitute the stored values. Forward passes must issue pins in identical
/// order, which holds because all control flow depends only on pinned values.
class PinContext {
 public:
  enum class Mode { kRecord, kReplay };

  Mode mode = Mode::kRecord;

  void pin(std::vector<double>& buf) {
    if (mode == Mode::kRecord) {
      slots_.push_back(buf);
    } else {
      if (cursor_ >= slots_.size())
        throw NumericError("pin replay: ran out of recorded slots");
      if (slots_[cursor_].size() != buf.size())
        throw NumericError("pin replay: slot size mismatch");
      buf = slots_[cursor_];
    }
    ++cursor_;
  }

  void pin_scalar(double& x) {
    std::vector<double> tmp{x};
    pin(tmp);
    x = tmp[0];
  }

  void pin_index(int& i) {
    double x = static_cast<double>(i);
    pin_scalar(x);
    i = static_cast<int>(x);
  }

  void start_replay() {
    mode = Mode::kReplay;
    cursor_ = 0;
  }
  void rewind() { cursor_ = 0; }

 private:
  std::vector<std::vector<double>> slots_;
  std::size_t cursor_ = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_coordinate = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int samples = 0;
};

/// Central-difference check of the analytic gradient over sampled parameter
/// coordinates. `loss_fn(graph, pins)` must rebuild the forward pass from the
/// store's current values and return a scalar node.
template <class S, class LossFn>
GradCheckReport grad_check(ParamStore<S>& store, LossFn&& loss_fn, double eps,
                           int num_samples, std::uint64_t seed,
                           bool inject_fault = false) {
  if (eps < 1e-6 || eps > 1e-3)
    throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");

  PinContext pins;
  {
    Graph<S> g;
    const auto loss = loss_fn(g, &pins);
    const double f0 = static_cast<double>(g.scalar(loss));
    if (!std::isfinite(f0)) throw NumericError("grad_check: non-finite loss");
    store.zero_grad();
    g.backward(loss);
  }
  pins.start_replay();

  // Flat coordinate space across all parameters.
  std::vector<std::size_t> offsets(store.size() + 1, 0);
  for (std::size_t i = 0; i < store.size(); ++i)
    offsets[i + 1] = offsets[i] + store.at(i).size();
  const std::size_t total = offsets[store.size()];

  Rng rng(seed);
  std::vector<std::size_t> coords;
  if (static_cast<std::size_t>(num_samples) >= total) {
    coords.resize(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
  } else {
    std::uniform_int_distribution<std::size_t> dist(0, total - 1);
    while (coords.size() < static_cast<std::size_t>(num_samples)) {
      const std::size_t c = dist(rng);
      if (std::find(coords.begin(), coords.end(), c) == coords.end()) coords.push_back(c);
    }
  }

  auto locate = [&](std::size_t flat) {
    std::size_t pi = 0;
    while (offsets[pi + 1] <= flat) ++pi;
    return std::pair<std::size_t, std::size_t>(pi, flat - offsets[pi]);
  };

  auto eval = [&]() {
    Graph<S> g;
    pins.rewind();
    const auto loss = loss_fn(g, &pins);
    return static_cast<double>(g.scalar(loss));
  };

  if (inject_fault) {
    for (std::size_t flat : coords) {
      const auto [pi, ei] = locate(flat);
      if (std::abs(static_cast<double>(store.at(pi).grad[ei])) < 0.5) {
        store.at(pi).grad[ei] += S(1);
        break;
      }
    }
  }

  GradCheckReport rep;
  rep.samples = static_cast<int>(coords.size());
  for (std::size_t flat : coords) {
    const auto [pi, ei] = locate(flat);
    auto& p = store.at(pi);
    const S saved = p.value[ei];
    p.value[ei] = saved + static_cast<S>(eps);
    const double f_plus = eval();
    p.value[ei] = saved - static_cast<S>(eps);
    const double f_minus = eval();
    p.value[ei] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * eps);
    const double analytic = static_cast<double>(p.grad[ei]);
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_param = p.name;
      rep.worst_coordinate = ei;
      rep.worst_analytic = analytic;
      rep.worst_numeric = numeric;
    }
  }
  return rep;
}

}  // namespace trajcast
