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
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trajcast/common.hpp"

namespace trajcast {

/// Named tensor with persistent storage and an accumulated gradient.
/// Shapes are matrices (rows x cols); vectors use rows == 1.
template <class S>
struct Parameter {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<S> value;
  std::vector<S> grad;

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

/// Registry of all learnable tensors of one model. Registration order is the
/// canonical parameter order (checkpoints, optimizer state, grad checks).
template <class S>
class ParamStore {
 public:
  Parameter<S>& create(const std::string& name, int rows, int cols) {
    if (index_.count(name) != 0)
      throw ConfigError("parameter registered twice: " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->rows = rows;
    p->cols = cols;
    p->value.assign(static_cast<std::size_t>(rows) * cols, S(0));
    p->grad.assign(static_cast<std::size_t>(rows) * cols, S(0));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<S>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t size() const { return params_.size(); }
  Parameter<S>& at(std::size_t i) { return *params_[i]; }
  const Parameter<S>& at(std::size_t i) const { return *params_[i]; }

  std::size_t total_coordinates() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Sparse attention pattern: for each query row, the rows of the key/value
/// matrix it may attend to, each with the row of the pair-wise relative
/// encoding matrix that belongs to the (query, key) pair.
struct AttnPattern {
  struct Edge {
    int key_row;
    int pair_row;
  };
  std::vector<std::vector<Edge>> keys_of;  // indexed by query row
  int n_pairs = 0;

  int num_queries() const { return static_cast<int>(keys_of.size()); }
};

/// Reverse-mode tape over small dense matrices. Values are computed eagerly;
/// backward closures run in reverse creation order.
template <class S>
class Graph {
 public:
  using Id = std::int32_t;

  struct Dim {
    int rows;
    int cols;
  };

  void clear() {
    vals_.clear();
    grads_.clear();
    dims_.clear();
    backs_.clear();
    param_nodes_.clear();
    param_bindings_.clear();
    attn_weights_.clear();
  }

  int rows(Id id) const { return dims_[static_cast<std::size_t>(id)].rows; }
  int cols(Id id) const { return dims_[static_cast<std::size_t>(id)].cols; }
  std::vector<S>& val(Id id) { return vals_[static_cast<std::size_t>(id)]; }
  const std::vector<S>& val(Id id) const { return vals_[static_cast<std::size_t>(id)]; }
  std::vector<S>& grad(Id id) { return grads_[static_cast<std::size_t>(id)]; }
  const std::vector<S>& grad(Id id) const { return grads_[static_cast<std::size_t>(id)]; }
  std::size_t num_nodes() const { return vals_.size(); }

  S scalar(Id id) const { return vals_[static_cast<std::size_t>(id)][0]; }

  // ---- leaves ------------------------------------------------------------

  Id input(int r, int c, std::span<const double> data) {
    const Id id = make(r, c);
    auto& v = val(id);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(data[i]);
    return id;
  }

  Id zeros(int r, int c) { return make(r, c); }

  /// Binds a parameter into the graph; one node per parameter per tape.
  Id param(Parameter<S>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    const Id id = make(p.rows, p.cols);
    val(id) = p.value;
    param_nodes_[&p] = id;
    param_bindings_.emplace_back(&p, id);
    return id;
  }

  /// Adds the accumulated node gradients into the bound parameters. Split out
  /// of backward so parallel workers can be reduced in a deterministic order.
  void apply_param_grads() {
    for (const auto& [p, id] : param_bindings_) {
      const auto& g = grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }

  // ---- dense algebra -----------------------------------------------------

  /// y = x * W^T + b with W stored [out, in], b [1, out] (b may be -1).
  Id affine(Id x, Id w, Id b) {
    const int n = rows(x), in = cols(x), out = rows(w);
    if (cols(w) != in) throw NumericError("affine: width mismatch");
    const Id y = make(n, out);
    {
      const auto& xv = val(x);
      const auto& wv = val(w);
      auto& yv = val(y);
      for (int i = 0; i < n; ++i) {
        const S* xr = xv.data() + static_cast<std::size_t>(i) * in;
        S* yr = yv.data() + static_cast<std::size_t>(i) * out;
        for (int o = 0; o < out; ++o) {
          const S* wr = wv.data() + static_cast<std::size_t>(o) * in;
          S acc = S(0);
          for (int k = 0; k < in; ++k) acc += xr[k] * wr[k];
          yr[o] = acc;
        }
      }
      if (b >= 0) {
        const auto& bv = val(b);
        for (int i = 0; i < n; ++i) {
          S* yr = yv.data() + static_cast<std::size_t>(i) * out;
          for (int o = 0; o < out; ++o) yr[o] += bv[static_cast<std::size_t>(o)];
        }
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, w, b, y, n, in, out]() {
      const auto& gy = grad(y);
      const auto& xv = val(x);
      const auto& wv = val(w);
      auto& gx = grad(x);
      auto& gw = grad(w);
      for (int i = 0; i < n; ++i) {
        const S* gyr = gy.data() + static_cast<std::size_t>(i) * out;
        const S* xr = xv.data() + static_cast<std::size_t>(i) * in;
        S* gxr = gx.data() + static_cast<std::size_t>(i) * in;
        for (int o = 0; o < out; ++o) {
          const S g = gyr[o];
          if (g == S(0)) continue;
          const S* wr = wv.data() + static_cast<std::size_t>(o) * in;
          S* gwr = gw.data() + static_cast<std::size_t>(o) * in;
          for (int k = 0; k < in; ++k) {
            gxr[k] += g * wr[k];
            gwr[k] += g * xr[k];
          }
        }
      }
      if (b >= 0) {
        auto& gb = grad(b);
        for (int i = 0; i < n; ++i) {
          const S* gyr = gy.data() + static_cast<std::size_t>(i) * out;
          for (int o = 0; o < out; ++o) gb[static_cast<std::size_t>(o)] += gyr[o];
        }
      }
    };
    return y;
  }

  Id add(Id a, Id b) {
    check_same(a, b, "add");
    const Id y = make(rows(a), cols(a));
    {
      const auto& av = val(a);
      const auto& bv = val(b);
      auto& yv = val(y);
      for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
    }
    backs_[static_cast<std::size_t>(y)] = [this, a, b, y]() {
      const auto& gy = grad(y);
      auto& ga = grad(a);
      auto& gb = grad(b);
      for (std::size_t i = 0; i < gy.size(); ++i) {
        ga[i] += gy[i];
        gb[i] += gy[i];
      }
    };
    return y;
  }


  Id scale(Id x, double factor) {
    const Id y = make(rows(x), cols(x));
    const S f = static_cast<S>(factor);
    {
      const auto& xv = val(x);
      auto& yv = val(y);
      for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = f * xv[i];
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y, f]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += f * gy[i];
    };
    return y;
  }

  /// y[i, :] = x[i, :] + table[idx[i], :]
  Id add_gathered_rows(Id x, Id table, std::vector<int> idx) {
    const int n = rows(x), c = cols(x);
    if (cols(table) != c) throw NumericError("add_gathered_rows: width mismatch");
    if (static_cast<int>(idx.size()) != n)
      throw NumericError("add_gathered_rows: index count mismatch");
    const Id y = make(n, c);
    {
      const auto& xv = val(x);
      const auto& tv = val(table);
      auto& yv = val(y);
      for (int i = 0; i < n; ++i) {
        const S* tr = tv.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c;
        const S* xr = xv.data() + static_cast<std::size_t>(i) * c;
        S* yr = yv.data() + static_cast<std::size_t>(i) * c;
        for (int k = 0; k < c; ++k) yr[k] = xr[k] + tr[k];
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, table, y, idx = std::move(idx), n, c]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      auto& gt = grad(table);
      for (int i = 0; i < n; ++i) {
        const S* gyr = gy.data() + static_cast<std::size_t>(i) * c;
        S* gxr = gx.data() + static_cast<std::size_t>(i) * c;
        S* gtr = gt.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c;
        for (int k = 0; k < c; ++k) {
          gxr[k] += gyr[k];
          gtr[k] += gyr[k];
        }
      }
    };
    return y;
  }

  /// Row lookup: y[i, :] = table[idx[i], :]; gradient scatters into the rows.
  Id gather_rows(Id table, std::vector<int> idx) {
    const int c = cols(table);
    const int n = static_cast<int>(idx.size());
    for (int i : idx)
      if (i < 0 || i >= rows(table)) throw NumericError("gather_rows: index out of range");
    const Id y = make(n, c);
    {
      const auto& tv = val(table);
      auto& yv = val(y);
      for (int i = 0; i < n; ++i) {
        const S* tr = tv.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c;
        S* yr = yv.data() + static_cast<std::size_t>(i) * c;
        for (int k = 0; k < c; ++k) yr[k] = tr[k];
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, table, y, idx = std::move(idx), n, c]() {
      const auto& gy = grad(y);
      auto& gt = grad(table);
      for (int i = 0; i < n; ++i) {
        const S* gyr = gy.data() + static_cast<std::size_t>(i) * c;
        S* gtr = gt.data() + static_cast<std::size_t>(idx[static_cast<std::size_t>(i)]) * c;
        for (int k = 0; k < c; ++k) gtr[k] += gyr[k];
      }
    };
    return y;
  }

  Id concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: no parts");
    const int c = cols(parts[0]);
    int n = 0;
    for (Id p : parts) {
      if (cols(p) != c) throw NumericError("concat_rows: width mismatch");
      n += rows(p);
    }
    const Id y = make(n, c);
    {
      auto& yv = val(y);
      std::size_t off = 0;
      for (Id p : parts) {
        const auto& pv = val(p);
        std::copy(pv.begin(), pv.end(), yv.begin() + static_cast<std::ptrdiff_t>(off));
        off += pv.size();
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, y, parts]() {
      const auto& gy = grad(y);
      std::size_t off = 0;
      for (Id p : parts) {
        auto& gp = grad(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy[off + i];
        off += gp.size();
      }
    };
    return y;
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw NumericError("concat_cols: no parts");
    const int n = rows(parts[0]);
    int c = 0;
    for (Id p : parts) {
      if (rows(p) != n) throw NumericError("concat_cols: height mismatch");
      c += cols(p);
    }
    const Id y = make(n, c);
    {
      auto& yv = val(y);
      int off = 0;
      for (Id p : parts) {
        const int pc = cols(p);
        const auto& pv = val(p);
        for (int i = 0; i < n; ++i)
          std::copy(pv.begin() + static_cast<std::ptrdiff_t>(i) * pc,
                    pv.begin() + static_cast<std::ptrdiff_t>(i + 1) * pc,
                    yv.begin() + static_cast<std::ptrdiff_t>(i) * c + off);
        off += pc;
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, y, parts, n, c]() {
      const auto& gy = grad(y);
      int off = 0;
      for (Id p : parts) {
        const int pc = cols(p);
        auto& gp = grad(p);
        for (int i = 0; i < n; ++i)
          for (int k = 0; k < pc; ++k)
            gp[static_cast<std::size_t>(i) * pc + k] +=
                gy[static_cast<std::size_t>(i) * c + off + k];
        off += pc;
      }
    };
    return y;
  }


  /// Row-major reinterpretation; total element count must match.
  Id reshape(Id x, int r, int c) {
    if (static_cast<std::size_t>(r) * c != val(x).size())
      throw NumericError("reshape: element count mismatch");
    const Id y = make(r, c);
    val(y) = val(x);
    backs_[static_cast<std::size_t>(y)] = [this, x, y]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    };
    return y;
  }

  Id slice_rows(Id x, int r0, int len) {
    const int c = cols(x);
    if (r0 < 0 || r0 + len > rows(x)) throw NumericError("slice_rows: out of range");
    const Id y = make(len, c);
    {
      const auto& xv = val(x);
      auto& yv = val(y);
      std::copy(xv.begin() + static_cast<std::ptrdiff_t>(r0) * c,
                xv.begin() + static_cast<std::ptrdiff_t>(r0 + len) * c, yv.begin());
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y, r0, len, c]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i)
        gx[static_cast<std::size_t>(r0) * c + i] += gy[i];
    };
    return y;
  }

  Id slice_cols(Id x, int c0, int len) {
    const int n = rows(x), c = cols(x);
    if (c0 < 0 || c0 + len > c) throw NumericError("slice_cols: out of range");
    const Id y = make(n, len);
    {
      const auto& xv = val(x);
      auto& yv = val(y);
      for (int i = 0; i < n; ++i)
        std::copy(xv.begin() + static_cast<std::ptrdiff_t>(i) * c + c0,
                  xv.begin() + static_cast<std::ptrdiff_t>(i) * c + c0 + len,
                  yv.begin() + static_cast<std::ptrdiff_t>(i) * len);
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y, c0, len, n, c]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < len; ++k)
          gx[static_cast<std::size_t>(i) * c + c0 + k] +=
              gy[static_cast<std::size_t>(i) * len + k];
    };
    return y;
  }

  // ---- nonlinearities ------------------------------------------------------

  Id gelu(Id x) {
    const Id y = make(rows(x), cols(x));
    {
      const auto& xv = val(x);
      auto& yv = val(y);
      for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = gelu_fwd(xv[i]);
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y]() {
      const auto& gy = grad(y);
      const auto& xv = val(x);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * gelu_bwd(xv[i]);
    };
    return y;
  }

  /// softplus(x) + shift, elementwise; keeps scales strictly positive.
  Id softplus_shift(Id x, double shift) {
    const Id y = make(rows(x), cols(x));
    const S sh = static_cast<S>(shift);
    {
      const auto& xv = val(x);
      auto& yv = val(y);
      for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = softplus_fwd(xv[i]) + sh;
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y]() {
      const auto& gy = grad(y);
      const auto& xv = val(x);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * sigmoid_fwd(xv[i]);
    };
    return y;
  }

  Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-5) {
    const int n = rows(x), c = cols(x);
    const Id y = make(n, c);
    auto stats = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n) * 2);
    {
      const auto& xv = val(x);
      const auto& gv = val(gamma);
      const auto& bv = val(beta);
      auto& yv = val(y);
      for (int i = 0; i < n; ++i) {
        const S* xr = xv.data() + static_cast<std::size_t>(i) * c;
        S mean = S(0);
        for (int k = 0; k < c; ++k) mean += xr[k];
        mean /= static_cast<S>(c);
        S var = S(0);
        for (int k = 0; k < c; ++k) var += (xr[k] - mean) * (xr[k] - mean);
        var /= static_cast<S>(c);
        const S rstd = S(1) / std::sqrt(var + static_cast<S>(eps));
        (*stats)[static_cast<std::size_t>(i) * 2] = mean;
        (*stats)[static_cast<std::size_t>(i) * 2 + 1] = rstd;
        S* yr = yv.data() + static_cast<std::size_t>(i) * c;
        for (int k = 0; k < c; ++k)
          yr[k] = (xr[k] - mean) * rstd * gv[static_cast<std::size_t>(k)] +
                  bv[static_cast<std::size_t>(k)];
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, gamma, beta, y, stats, n, c]() {
      const auto& gy = grad(y);
      const auto& xv = val(x);
      const auto& gv = val(gamma);
      auto& gx = grad(x);
      auto& gg = grad(gamma);
      auto& gb = grad(beta);
      for (int i = 0; i < n; ++i) {
        const S mean = (*stats)[static_cast<std::size_t>(i) * 2];
        const S rstd = (*stats)[static_cast<std::size_t>(i) * 2 + 1];
        const S* xr = xv.data() + static_cast<std::size_t>(i) * c;
        const S* gyr = gy.data() + static_cast<std::size_t>(i) * c;
        S sum_g = S(0), sum_gx = S(0);
        for (int k = 0; k < c; ++k) {
          const S xhat = (xr[k] - mean) * rstd;
          const S gk = gyr[k] * gv[static_cast<std::size_t>(k)];
          sum_g += gk;
          sum_gx += gk * xhat;
          gg[static_cast<std::size_t>(k)] += gyr[k] * xhat;
          gb[static_cast<std::size_t>(k)] += gyr[k];
        }
        S* gxr = gx.data() + static_cast<std::size_t>(i) * c;
        for (int k = 0; k < c; ++k) {
          const S xhat = (xr[k] - mean) * rstd;
          const S gk = gyr[k] * gv[static_cast<std::size_t>(k)];
          gxr[k] += rstd * (gk - (sum_g + xhat * sum_gx) / static_cast<S>(c));
        }
      }
    };
    return y;
  }

  /// Inverted dropout with an externally seeded RNG; pass rate 0 to disable.
  Id dropout(Id x, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    const Id y = make(rows(x), cols(x));
    const S keep_inv = static_cast<S>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<std::uint8_t>>(val(x).size());
    {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const auto& xv = val(x);
      auto& yv = val(y);
      for (std::size_t i = 0; i < yv.size(); ++i) {
        (*mask)[i] = u(*rng) >= rate ? 1 : 0;
        yv[i] = (*mask)[i] ? xv[i] * keep_inv : S(0);
      }
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y, mask, keep_inv]() {
      const auto& gy = grad(y);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < gy.size(); ++i)
        if ((*mask)[i]) gx[i] += gy[i] * keep_inv;
    };
    return y;
  }

  // ---- attention -----------------------------------------------------------

  /// Multi-head attention with additive pair-wise key/value encodings:
  /// per head, out_i = sum_j softmax_j(q_i . (k_j + rk_ij) / sqrt(dh)) (v_j + rv_ij).
  /// Queries without keys produce zero rows. rk/rv may be -1 (no encodings).
  Id rel_attention_core(Id q, Id k, Id v, Id rk, Id rv, const AttnPattern& pattern,
                        int num_heads) {
    const int nq = rows(q), d = cols(q);
    if (d % num_heads != 0) throw NumericError("attention: dim not divisible by heads");
    if (pattern.num_queries() != nq) throw NumericError("attention: pattern size mismatch");
    const int dh = d / num_heads;
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const Id y = make(nq, d);

    // Attention weights are kept for backward (and tests read them).
    auto aw = std::make_shared<std::vector<std::vector<S>>>(
        static_cast<std::size_t>(nq) * num_heads);

    {
      const auto& qv = val(q);
      const auto& kv = val(k);
      const auto& vv = val(v);
      const S* rkv = rk >= 0 ? val(rk).data() : nullptr;
      const S* rvv = rv >= 0 ? val(rv).data() : nullptr;
      auto& yv = val(y);
      std::vector<S> scores;
      for (int i = 0; i < nq; ++i) {
        const auto& edges = pattern.keys_of[static_cast<std::size_t>(i)];
        if (edges.empty()) continue;
        const std::size_t m = edges.size();
        scores.resize(m);
        for (int h = 0; h < num_heads; ++h) {
          const int off = h * dh;
          const S* qr = qv.data() + static_cast<std::size_t>(i) * d + off;
          S mx = std::numeric_limits<S>::lowest();
          for (std::size_t e = 0; e < m; ++e) {
            const S* kr = kv.data() + static_cast<std::size_t>(edges[e].key_row) * d + off;
            const S* rr =
                rkv ? rkv + static_cast<std::size_t>(edges[e].pair_row) * d + off : nullptr;
            S acc = S(0);
            for (int t = 0; t < dh; ++t) acc += qr[t] * (kr[t] + (rr ? rr[t] : S(0)));
            scores[e] = acc * inv_sqrt;
            mx = std::max(mx, scores[e]);
          }
          S denom = S(0);
          for (std::size_t e = 0; e < m; ++e) {
            scores[e] = std::exp(scores[e] - mx);
            denom += scores[e];
          }
          auto& w = (*aw)[static_cast<std::size_t>(i) * num_heads + h];
          w.resize(m);
          S* yr = yv.data() + static_cast<std::size_t>(i) * d + off;
          for (std::size_t e = 0; e < m; ++e) {
            w[e] = scores[e] / denom;
            const S* vr = vv.data() + static_cast<std::size_t>(edges[e].key_row) * d + off;
            const S* rr =
                rvv ? rvv + static_cast<std::size_t>(edges[e].pair_row) * d + off : nullptr;
            for (int t = 0; t < dh; ++t) yr[t] += w[e] * (vr[t] + (rr ? rr[t] : S(0)));
          }
        }
      }
    }

    auto pat = std::make_shared<AttnPattern>(pattern);
    backs_[static_cast<std::size_t>(y)] = [this, q, k, v, rk, rv, y, aw, pat, num_heads,
                                           dh, inv_sqrt]() {
      const int d = num_heads * dh;
      const auto& gy = grad(y);
      const auto& qv = val(q);
      const auto& kv = val(k);
      const auto& vv = val(v);
      const S* rkv = rk >= 0 ? val(rk).data() : nullptr;
      const S* rvv = rv >= 0 ? val(rv).data() : nullptr;
      auto& gq = grad(q);
      auto& gk = grad(k);
      auto& gv2 = grad(v);
      S* grk = rk >= 0 ? grad(rk).data() : nullptr;
      S* grv = rv >= 0 ? grad(rv).data() : nullptr;
      const int nq = rows(y);
      std::vector<S> da, ds;
      for (int i = 0; i < nq; ++i) {
        const auto& edges = pat->keys_of[static_cast<std::size_t>(i)];
        if (edges.empty()) continue;
        const std::size_t m = edges.size();
        da.resize(m);
        ds.resize(m);
        for (int h = 0; h < num_heads; ++h) {
          const int off = h * dh;
          const auto& w = (*aw)[static_cast<std::size_t>(i) * num_heads + h];
          const S* gyr = gy.data() + static_cast<std::size_t>(i) * d + off;
          const S* qr = qv.data() + static_cast<std::size_t>(i) * d + off;
          // d a_e and scatter into values.
          S common = S(0);
          for (std::size_t e = 0; e < m; ++e) {
            const int kr_row = edges[e].key_row;
            const int pr = edges[e].pair_row;
            const S* vr = vv.data() + static_cast<std::size_t>(kr_row) * d + off;
            const S* rr = rvv ? rvv + static_cast<std::size_t>(pr) * d + off : nullptr;
            S acc = S(0);
            S* gvr = gv2.data() + static_cast<std::size_t>(kr_row) * d + off;
            S* grvr = grv ? grv + static_cast<std::size_t>(pr) * d + off : nullptr;
            for (int t = 0; t < dh; ++t) {
              acc += gyr[t] * (vr[t] + (rr ? rr[t] : S(0)));
              const S gv_t = w[e] * gyr[t];
              gvr[t] += gv_t;
              if (grvr) grvr[t] += gv_t;
            }
            da[e] = acc;
            common += w[e] * acc;
          }
          S* gqr = gq.data() + static_cast<std::size_t>(i) * d + off;
          for (std::size_t e = 0; e < m; ++e) {
            ds[e] = w[e] * (da[e] - common) * inv_sqrt;
            if (ds[e] == S(0)) continue;
            const int kr_row = edges[e].key_row;
            const int pr = edges[e].pair_row;
            const S* kr = kv.data() + static_cast<std::size_t>(kr_row) * d + off;
            const S* rr = rkv ? rkv + static_cast<std::size_t>(pr) * d + off : nullptr;
            S* gkr = gk.data() + static_cast<std::size_t>(kr_row) * d + off;
            S* grkr = grk ? grk + static_cast<std::size_t>(pr) * d + off : nullptr;
            for (int t = 0; t < dh; ++t) {
              gqr[t] += ds[e] * (kr[t] + (rr ? rr[t] : S(0)));
              const S gk_t = ds[e] * qr[t];
              gkr[t] += gk_t;
              if (grkr) grkr[t] += gk_t;
            }
          }
        }
      }
    };

    if (record_attention_weights) attn_weights_.push_back(*aw);
    return y;
  }

  // ---- losses ----------------------------------------------------------------

  /// Sum over unmasked entries of log(2b) + |target - loc| / b.
  Id laplace_nll_sum(Id loc, Id scale, std::vector<double> target,
                     std::vector<std::uint8_t> mask) {
    check_same(loc, scale, "laplace_nll_sum");
    if (target.size() != val(loc).size() || mask.size() != target.size())
      throw NumericError("laplace_nll_sum: target size mismatch");
    const Id y = make(1, 1);
    {
      const auto& lv = val(loc);
      const auto& sv = val(scale);
      S acc = S(0);
      for (std::size_t i = 0; i < lv.size(); ++i) {
        if (!mask[i]) continue;
        if (!(sv[i] > S(0))) throw NumericError("laplace_nll: nonpositive scale");
        acc += std::log(S(2) * sv[i]) +
               std::abs(static_cast<S>(target[i]) - lv[i]) / sv[i];
      }
      val(y)[0] = acc;
    }
    backs_[static_cast<std::size_t>(y)] = [this, loc, scale, y, target = std::move(target),
                                           mask = std::move(mask)]() {
      const S g = grad(y)[0];
      if (g == S(0)) return;
      const auto& lv = val(loc);
      const auto& sv = val(scale);
      auto& gl = grad(loc);
      auto& gs = grad(scale);
      for (std::size_t i = 0; i < lv.size(); ++i) {
        if (!mask[i]) continue;
        const S r = static_cast<S>(target[i]) - lv[i];
        const S sgn = r > S(0) ? S(1) : (r < S(0) ? S(-1) : S(0));
        gl[i] += g * (-sgn / sv[i]);
        gs[i] += g * (S(1) / sv[i] - std::abs(r) / (sv[i] * sv[i]));
      }
    };
    return y;
  }

  /// Sum over unmasked entries of log(2*pi*I0(conc)) - conc*cos(target - loc).
  /// `log_i0` and `i1_over_i0` are supplied by the caller (see loss header).
  Id von_mises_nll_sum(Id loc, Id conc, std::vector<double> target,
                       std::vector<std::uint8_t> mask, double (*log_i0)(double),
                       double (*i1_over_i0)(double)) {
    check_same(loc, conc, "von_mises_nll_sum");
    if (target.size() != val(loc).size() || mask.size() != target.size())
      throw NumericError("von_mises_nll_sum: target size mismatch");
    const Id y = make(1, 1);
    {
      const auto& lv = val(loc);
      const auto& cv = val(conc);
      S acc = S(0);
      for (std::size_t i = 0; i < lv.size(); ++i) {
        if (!mask[i]) continue;
        if (!(cv[i] > S(0))) throw NumericError("von_mises_nll: nonpositive concentration");
        const double kappa = static_cast<double>(cv[i]);
        const double delta = target[i] - static_cast<double>(lv[i]);
        acc += static_cast<S>(std::log(2.0 * kPi) + log_i0(kappa) -
                              kappa * std::cos(delta));
      }
      val(y)[0] = acc;
    }
    backs_[static_cast<std::size_t>(y)] = [this, loc, conc, y, target = std::move(target),
                                           mask = std::move(mask), i1_over_i0]() {
      const S g = grad(y)[0];
      if (g == S(0)) return;
      const auto& lv = val(loc);
      const auto& cv = val(conc);
      auto& gl = grad(loc);
      auto& gc = grad(conc);
      for (std::size_t i = 0; i < lv.size(); ++i) {
        if (!mask[i]) continue;
        const double kappa = static_cast<double>(cv[i]);
        const double delta = target[i] - static_cast<double>(lv[i]);
        gl[i] += g * static_cast<S>(-kappa * std::sin(delta));
        gc[i] += g * static_cast<S>(i1_over_i0(kappa) - std::cos(delta));
      }
    };
    return y;
  }

  /// Per row: -logsumexp_k(log_softmax(logits)_k + bias_k), summed over rows.
  /// The bias carries detached per-mode log-likelihoods.
  Id neg_log_mixture_sum(Id logits, std::vector<double> bias) {
    const int n = rows(logits), kk = cols(logits);
    if (bias.size() != val(logits).size())
      throw NumericError("neg_log_mixture_sum: bias size mismatch");
    const Id y = make(1, 1);
    {
      const auto& xv = val(logits);
      S acc = S(0);
      for (int i = 0; i < n; ++i) {
        const S* xr = xv.data() + static_cast<std::size_t>(i) * kk;
        const double* br = bias.data() + static_cast<std::size_t>(i) * kk;
        double mx_x = -1e300, mx_s = -1e300;
        for (int k = 0; k < kk; ++k) {
          mx_x = std::max(mx_x, static_cast<double>(xr[k]));
          mx_s = std::max(mx_s, static_cast<double>(xr[k]) + br[k]);
        }
        double lse_x = 0.0, lse_s = 0.0;
        for (int k = 0; k < kk; ++k) {
          lse_x += std::exp(static_cast<double>(xr[k]) - mx_x);
          lse_s += std::exp(static_cast<double>(xr[k]) + br[k] - mx_s);
        }
        // -LSE(x + b) + LSE(x)
        acc += static_cast<S>(-(mx_s + std::log(lse_s)) + (mx_x + std::log(lse_x)));
      }
      val(y)[0] = acc;
    }
    backs_[static_cast<std::size_t>(y)] = [this, logits, y, bias = std::move(bias), n, kk]() {
      const S g = grad(y)[0];
      if (g == S(0)) return;
      const auto& xv = val(logits);
      auto& gx = grad(logits);
      for (int i = 0; i < n; ++i) {
        const S* xr = xv.data() + static_cast<std::size_t>(i) * kk;
        const double* br = bias.data() + static_cast<std::size_t>(i) * kk;
        double mx_x = -1e300, mx_s = -1e300;
        for (int k = 0; k < kk; ++k) {
          mx_x = std::max(mx_x, static_cast<double>(xr[k]));
          mx_s = std::max(mx_s, static_cast<double>(xr[k]) + br[k]);
        }
        double lse_x = 0.0, lse_s = 0.0;
        for (int k = 0; k < kk; ++k) {
          lse_x += std::exp(static_cast<double>(xr[k]) - mx_x);
          lse_s += std::exp(static_cast<double>(xr[k]) + br[k] - mx_s);
        }
        S* gxr = gx.data() + static_cast<std::size_t>(i) * kk;
        for (int k = 0; k < kk; ++k) {
          const double p_x = std::exp(static_cast<double>(xr[k]) - mx_x) / lse_x;
          const double p_s = std::exp(static_cast<double>(xr[k]) + br[k] - mx_s) / lse_s;
          gxr[k] += g * static_cast<S>(p_x - p_s);
        }
      }
    };
    return y;
  }

  Id sum_scalars(const std::vector<Id>& terms) {
    const Id y = make(1, 1);
    {
      S acc = S(0);
      for (Id t : terms) acc += scalar(t);
      val(y)[0] = acc;
    }
    backs_[static_cast<std::size_t>(y)] = [this, y, terms]() {
      const S g = grad(y)[0];
      for (Id t : terms) grad(t)[0] += g;
    };
    return y;
  }


  /// 0.5 * sum(x^2); handy for quadratic test losses.
  Id half_sum_squares(Id x) {
    const Id y = make(1, 1);
    {
      const auto& xv = val(x);
      S acc = S(0);
      for (S v : xv) acc += v * v;
      val(y)[0] = acc / S(2);
    }
    backs_[static_cast<std::size_t>(y)] = [this, x, y]() {
      const S g = grad(y)[0];
      const auto& xv = val(x);
      auto& gx = grad(x);
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * xv[i];
    };
    return y;
  }

  // ---- backward --------------------------------------------------------------

  void backward(Id loss, bool flush_param_grads = true) {
    if (rows(loss) != 1 || cols(loss) != 1)
      throw NumericError("backward: loss must be scalar");
    grad(loss)[0] = S(1);
    for (std::size_t i = backs_.size(); i-- > 0;) {
      if (backs_[i]) backs_[i]();
    }
    if (flush_param_grads) apply_param_grads();
  }

  bool record_attention_weights = false;
  std::vector<std::vector<std::vector<S>>> attn_weights_;  // per recorded call

 private:
  Id make(int r, int c) {
    vals_.emplace_back(static_cast<std::size_t>(r) * c, S(0));
    grads_.emplace_back(static_cast<std::size_t>(r) * c, S(0));
    dims_.push_back({r, c});
    backs_.emplace_back();
    return static_cast<Id>(vals_.size() - 1);
  }

  void check_same(Id a, Id b, const char* op) const {
    if (rows(a) != rows(b) || cols(a) != cols(b))
      throw NumericError(std::string(op) + ": shape mismatch");
  }

  static S gelu_fwd(S x) {
    const S c = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
    const S u = c * (x + static_cast<S>(0.044715) * x * x * x);
    return static_cast<S>(0.5) * x * (S(1) + std::tanh(u));
  }
  static S gelu_bwd(S x) {
    const S c = static_cast<S>(0.7978845608028654);
    const S u = c * (x + static_cast<S>(0.044715) * x * x * x);
    const S t = std::tanh(u);
    const S du = c * (S(1) + S(3) * static_cast<S>(0.044715) * x * x);
    return static_cast<S>(0.5) * (S(1) + t) +
           static_cast<S>(0.5) * x * (S(1) - t * t) * du;
  }
  static S softplus_fwd(S x) {
    if (x > S(20)) return x;
    if (x < S(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
  }
  static S sigmoid_fwd(S x) {
    if (x >= S(0)) {
      const S e = std::exp(-x);
      return S(1) / (S(1) + e);
    }
    const S e = std::exp(x);
    return e / (S(1) + e);
  }

  std::vector<std::vector<S>> vals_;
  std::vector<std::vector<S>> grads_;
  std::vector<Dim> dims_;
  std::vector<std::function<void()>> backs_;
  std::unordered_map<const void*, Id> param_nodes_;
  std::vector<std::pair<Parameter<S>*, Id>> param_bindings_;
};

}  // namespace trajcast
