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

#include <string>
#include <vector>

#include "trajcast/tape.hpp"

namespace trajcast {

/// Weight init: truncated normal (std 0.02), zero biases, unit layer-norm
/// gains. Drawn in double so float and double models share values.
inline constexpr double kInitStd = 0.02;

template <class S>
void init_weight(Parameter<S>& p, Rng& rng, double stddev = kInitStd) {
  for (auto& v : p.value) v = static_cast<S>(truncated_normal(rng, stddev));
}

template <class S>
struct Linear {
  Parameter<S>* w = nullptr;  // [out, in]
  Parameter<S>* b = nullptr;  // [1, out]

  static Linear create(ParamStore<S>& store, const std::string& name, int in, int out,
                       Rng& rng) {
    Linear l;
    l.w = &store.create(name + ".w", out, in);
    l.b = &store.create(name + ".b", 1, out);
    init_weight(*l.w, rng);
    return l;
  }

  typename Graph<S>::Id apply(Graph<S>& g, typename Graph<S>::Id x) const {
    return g.affine(x, g.param(*w), g.param(*b));
  }
};

/// Affine stack with smooth-gelu between layers; the last layer stays affine.
template <class S>
struct Mlp {
  std::vector<Linear<S>> layers;

  static Mlp create(ParamStore<S>& store, const std::string& name,
                    const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("mlp needs at least one layer: " + name);
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i)
      m.layers.push_back(Linear<S>::create(store, name + ".l" + std::to_string(i),
                                           widths[i], widths[i + 1], rng));
    return m;
  }

  typename Graph<S>::Id apply(Graph<S>& g, typename Graph<S>::Id x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].apply(g, x);
      if (i + 1 < layers.size()) x = g.gelu(x);
    }
    return x;
  }

  int input_width() const { return layers.front().w->cols; }
  int output_width() const { return layers.back().w->rows; }
};

template <class S>
struct LayerNorm {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;

  static LayerNorm create(ParamStore<S>& store, const std::string& name, int dim) {
    LayerNorm ln;
    ln.gamma = &store.create(name + ".g", 1, dim);
    ln.beta = &store.create(name + ".b", 1, dim);
    for (auto& v : ln.gamma->value) v = S(1);
    return ln;
  }

  typename Graph<S>::Id apply(Graph<S>& g, typename Graph<S>::Id x) const {
    return g.layer_norm(x, g.param(*gamma), g.param(*beta));
  }
};

template <class S>
struct Embedding {
  Parameter<S>* table = nullptr;  // [count, dim]

  static Embedding create(ParamStore<S>& store, const std::string& name, int count,
                          int dim, Rng& rng) {
    Embedding e;
    e.table = &store.create(name, count, dim);
    init_weight(*e.table, rng);
    return e;
  }

  typename Graph<S>::Id lookup(Graph<S>& g, const std::vector<int>& idx) const {
    return g.gather_rows(g.param(*table), idx);
  }
};

struct AttentionSpec {
  int embed_dim = 128;
  int num_heads = 8;
  double dropout = 0.1;
  double radius = 50.0;  // interaction radius in meters

  void validate() const {
    if (embed_dim % num_heads != 0)
      throw ConfigError("attention: embed_dim must be divisible by num_heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("attention: dropout in [0,1)");
  }
};

/// Per-pass runtime knobs: dropout RNG (null disables dropout).
struct ForwardCtx {
  Rng* dropout_rng = nullptr;
  double dropout_rate = 0.0;
};

/// Pre-norm attention block with relative positional encodings added to keys
/// and values, followed by a feed-forward sublayer. Queries with no unmasked
/// key pass through the attention sublayer unchanged.
template <class S>
struct AttentionBlock {
  LayerNorm<S> ln_q, ln_kv, ln_ff;
  Linear<S> wq, wk, wv, w_rk, w_rv, wo;
  Linear<S> ff1, ff2;
  int num_heads = 8;

  static AttentionBlock create(ParamStore<S>& store, const std::string& name,
                               const AttentionSpec& spec, Rng& rng) {
    spec.validate();
    const int d = spec.embed_dim;
    AttentionBlock blk;
    blk.num_heads = spec.num_heads;
    blk.ln_q = LayerNorm<S>::create(store, name + ".ln_q", d);
    blk.ln_kv = LayerNorm<S>::create(store, name + ".ln_kv", d);
    blk.ln_ff = LayerNorm<S>::create(store, name + ".ln_ff", d);
    blk.wq = Linear<S>::create(store, name + ".wq", d, d, rng);
    blk.wk = Linear<S>::create(store, name + ".wk", d, d, rng);
    blk.wv = Linear<S>::create(store, name + ".wv", d, d, rng);
    blk.w_rk = Linear<S>::create(store, name + ".w_rk", d, d, rng);
    blk.w_rv = Linear<S>::create(store, name + ".w_rv", d, d, rng);
    blk.wo = Linear<S>::create(store, name + ".wo", d, d, rng);
    blk.ff1 = Linear<S>::create(store, name + ".ff1", d, 4 * d, rng);
    blk.ff2 = Linear<S>::create(store, name + ".ff2", 4 * d, d, rng);
    return blk;
  }

  /// x: [n_q, D] queries; ctx: key/value tokens (may equal x); rel: [n_pairs, D]
  /// relative encodings, or -1 when the pattern carries no pair encodings.
  typename Graph<S>::Id apply(Graph<S>& g, typename Graph<S>::Id x,
                              typename Graph<S>::Id ctx, typename Graph<S>::Id rel,
                              const AttnPattern& pattern, const ForwardCtx& fctx) const {
    using Id = typename Graph<S>::Id;
    const Id xn = ln_q.apply(g, x);
    const Id cn = ctx == x ? xn : ln_kv.apply(g, ctx);
    const Id q = wq.apply(g, xn);
    const Id k = wk.apply(g, cn);
    const Id v = wv.apply(g, cn);
    Id rk = -1, rv = -1;
    if (rel >= 0) {
      rk = w_rk.apply(g, rel);
      rv = w_rv.apply(g, rel);
    }
    Id att = g.rel_attention_core(q, k, v, rk, rv, pattern, num_heads);
    att = wo.apply(g, att);
    att = g.dropout(att, fctx.dropout_rate, fctx.dropout_rng);
    const Id x1 = g.add(x, att);
    Id h = ff1.apply(g, ln_ff.apply(g, x1));
    h = g.gelu(h);
    h = g.dropout(h, fctx.dropout_rate, fctx.dropout_rng);
    const Id f = ff2.apply(g, h);
    return g.add(x1, f);
  }
};

/// Embeds pair-wise relative descriptors: Fourier features -> 2-layer MLP.
/// Computed once per module call and shared by both attention rounds.
template <class S>
struct RelEncoder {
  Mlp<S> mlp;

  static RelEncoder create(ParamStore<S>& store, const std::string& name, int in_dim,
                           int embed_dim, Rng& rng) {
    RelEncoder enc;
    enc.mlp = Mlp<S>::create(store, name, {in_dim, embed_dim, embed_dim}, rng);
    return enc;
  }

  typename Graph<S>::Id apply(Graph<S>& g, typename Graph<S>::Id fourier_rows) const {
    return mlp.apply(g, fourier_rows);
  }
};

}  // namespace trajcast
