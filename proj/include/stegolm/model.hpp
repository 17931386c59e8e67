#pragma once

/**
 * Decoder-only transformer, written directly against flat parameter
 * arrays. One sequence at a time, no key-value caching; the vocabulary is
 * ~120 tokens and sequences top out at the context length, so a plain
 * re-forward per decode step is fast enough and much easier to verify.
 *
 * Layout per layer (pre-norm):
 *   x = x + attn_proj(causal_attention(layernorm1(x)))
 *   x = x + mlp_proj(gelu(mlp_fc(layernorm2(x))))
 * followed by a final layernorm and an untied output projection.
 */

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegolm/common.hpp"
#include "stegolm/math.hpp"
#include "stegolm/rng.hpp"

namespace stegolm {

inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  int context_length = 128;
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int hidden_dim = 256;
  int vocab_size = 0;
  uint64_t seed = 0;

  void validate() const {
    if (context_length <= 0 || embed_dim <= 0 || n_layers <= 0 || n_heads <= 0 ||
        hidden_dim <= 0 || vocab_size <= 0)
      throw std::invalid_argument("model config: all dimensions must be positive");
    if (embed_dim % n_heads != 0)
      throw std::invalid_argument("model config: embed_dim must be divisible by n_heads");
  }

  int head_dim() const { return embed_dim / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

template <typename S>
struct Tensor {
  std::vector<S> v;
  std::vector<int> shape;

  void reshape(std::vector<int> s) {
    shape = std::move(s);
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    v.assign(n, S(0));
  }

  size_t size() const { return v.size(); }
  S* data() { return v.data(); }
  const S* data() const { return v.data(); }
};

template <typename S>
struct LayerParams {
  Tensor<S> ln1_w, ln1_b;
  Tensor<S> qkv_w, qkv_b;            // [D, 3D], [3D]
  Tensor<S> attn_proj_w, attn_proj_b;
  Tensor<S> ln2_w, ln2_b;
  Tensor<S> mlp_fc_w, mlp_fc_b;      // [D, F], [F]
  Tensor<S> mlp_proj_w, mlp_proj_b;  // [F, D], [D]
};

template <typename S>
struct Parameters {
  Tensor<S> wte;  // [V, D]
  Tensor<S> wpe;  // [context, D]
  std::vector<LayerParams<S>> layers;
  Tensor<S> lnf_w, lnf_b;
  Tensor<S> head_w;  // [D, V]
};

// Visits every parameter tensor in a fixed, documented order. The same
// order defines the checkpoint payload layout and flat parameter indexing.
template <typename P, typename F>
void visit_tensors(P& params, F&& f) {
  f("wte", params.wte);
  f("wpe", params.wpe);
  for (size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "ln1_w", layer.ln1_w);
    f(p + "ln1_b", layer.ln1_b);
    f(p + "qkv_w", layer.qkv_w);
    f(p + "qkv_b", layer.qkv_b);
    f(p + "attn_proj_w", layer.attn_proj_w);
    f(p + "attn_proj_b", layer.attn_proj_b);
    f(p + "ln2_w", layer.ln2_w);
    f(p + "ln2_b", layer.ln2_b);
    f(p + "mlp_fc_w", layer.mlp_fc_w);
    f(p + "mlp_fc_b", layer.mlp_fc_b);
    f(p + "mlp_proj_w", layer.mlp_proj_w);
    f(p + "mlp_proj_b", layer.mlp_proj_b);
  }
  f("lnf_w", params.lnf_w);
  f("lnf_b", params.lnf_b);
  f("head_w", params.head_w);
}

template <typename S>
void allocate_parameters(Parameters<S>& p, const ModelConfig& cfg) {
  const int D = cfg.embed_dim, F = cfg.hidden_dim, V = cfg.vocab_size;
  p.wte.reshape({V, D});
  p.wpe.reshape({cfg.context_length, D});
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& l : p.layers) {
    l.ln1_w.reshape({D});
    l.ln1_b.reshape({D});
    l.qkv_w.reshape({D, 3 * D});
    l.qkv_b.reshape({3 * D});
    l.attn_proj_w.reshape({D, D});
    l.attn_proj_b.reshape({D});
    l.ln2_w.reshape({D});
    l.ln2_b.reshape({D});
    l.mlp_fc_w.reshape({D, F});
    l.mlp_fc_b.reshape({F});
    l.mlp_proj_w.reshape({F, D});
    l.mlp_proj_b.reshape({D});
  }
  p.lnf_w.reshape({D});
  p.lnf_b.reshape({D});
  p.head_w.reshape({D, V});
}

template <typename S>
struct Model {
  ModelConfig config;
  Parameters<S> params;
};

template <typename S>
size_t num_parameters(const Model<S>& m) {
  size_t n = 0;
  visit_tensors(m.params, [&](const std::string&, const Tensor<S>& t) { n += t.size(); });
  return n;
}

/**
 * Fresh model with normally distributed weights (stddev 0.08), zero
 * biases and unit layernorm gains. Deterministic for a given config seed.
 */
template <typename S>
Model<S> init_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<S> m;
  m.config = cfg;
  allocate_parameters(m.params, cfg);
  Rng rng(derive_seed(cfg.seed, "param-init"));
  const double stddev = 0.08;
  visit_tensors(m.params, [&](const std::string& name, Tensor<S>& t) {
    const bool is_gain = name.ends_with("ln1_w") || name.ends_with("ln2_w") || name == "lnf_w";
    const bool is_bias = t.shape.size() == 1 && !is_gain;
    if (is_gain) {
      for (S& x : t.v) x = S(1);
    } else if (!is_bias) {
      for (S& x : t.v) x = static_cast<S>(rng.normal(0.0, stddev));
    }
  });
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

template <typename S>
struct LayerCache {
  std::vector<S> x_in;                 // [T,D]
  std::vector<S> ln1_out;              // [T,D]
  std::vector<S> ln1_mean, ln1_rstd;   // [T]
  std::vector<S> qkv;                  // [T,3D]
  std::vector<S> att_probs;            // [H,T,T], rows causal
  std::vector<S> att_mix;              // [T,D]
  std::vector<S> x_mid;                // [T,D]
  std::vector<S> ln2_out;              // [T,D]
  std::vector<S> ln2_mean, ln2_rstd;   // [T]
  std::vector<S> mlp_pre;              // [T,F]
  std::vector<S> mlp_act;              // [T,F]
};

template <typename S>
struct ForwardCache {
  int T = 0;
  std::vector<LayerCache<S>> layers;
  std::vector<S> x_final;              // [T,D]
  std::vector<S> lnf_out;              // [T,D]
  std::vector<S> lnf_mean, lnf_rstd;   // [T]
  std::vector<S> logits;               // [T,V]
};

namespace detail {

// y[T,N] = x[T,M] @ w[M,N] (+ b)
template <typename S>
void matmul_bias(const S* x, const S* w, const S* b, S* y, int T, int M, int N) {
  for (int t = 0; t < T; ++t) {
    S* yt = y + static_cast<size_t>(t) * N;
    if (b) {
      for (int j = 0; j < N; ++j) yt[j] = b[j];
    } else {
      for (int j = 0; j < N; ++j) yt[j] = S(0);
    }
    const S* xt = x + static_cast<size_t>(t) * M;
    for (int m = 0; m < M; ++m) {
      const S xv = xt[m];
      const S* wm = w + static_cast<size_t>(m) * N;
      for (int j = 0; j < N; ++j) yt[j] += xv * wm[j];
    }
  }
}

template <typename S>
void layernorm_forward(const S* x, const S* w, const S* b, S* out, S* mean, S* rstd, int T,
                       int D) {
  for (int t = 0; t < T; ++t) {
    const S* xt = x + static_cast<size_t>(t) * D;
    S* ot = out + static_cast<size_t>(t) * D;
    S m = 0;
    for (int i = 0; i < D; ++i) m += xt[i];
    m /= S(D);
    S var = 0;
    for (int i = 0; i < D; ++i) {
      const S d = xt[i] - m;
      var += d * d;
    }
    var /= S(D);
    const S r = S(1) / std::sqrt(var + S(kLayerNormEps));
    for (int i = 0; i < D; ++i) ot[i] = (xt[i] - m) * r * w[i] + b[i];
    mean[t] = m;
    rstd[t] = r;
  }
}

template <typename S>
void attention_forward(const S* qkv, S* probs, S* mix, int T, int D, int H) {
  const int hd = D / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  std::vector<S> scores(static_cast<size_t>(T));
  for (int h = 0; h < H; ++h) {
    const int qo = h * hd, ko = D + h * hd, vo = 2 * D + h * hd;
    S* hp = probs + static_cast<size_t>(h) * T * T;
    for (int t = 0; t < T; ++t) {
      const S* q = qkv + static_cast<size_t>(t) * 3 * D + qo;
      for (int s = 0; s <= t; ++s) {
        const S* k = qkv + static_cast<size_t>(s) * 3 * D + ko;
        S dot = 0;
        for (int j = 0; j < hd; ++j) dot += q[j] * k[j];
        scores[static_cast<size_t>(s)] = dot * scale;
      }
      softmax_inplace(scores.data(), static_cast<size_t>(t) + 1);
      S* prow = hp + static_cast<size_t>(t) * T;
      for (int s = 0; s <= t; ++s) prow[s] = scores[static_cast<size_t>(s)];
      for (int s = t + 1; s < T; ++s) prow[s] = S(0);
      S* m = mix + static_cast<size_t>(t) * D + h * hd;
      for (int j = 0; j < hd; ++j) m[j] = S(0);
      for (int s = 0; s <= t; ++s) {
        const S p = prow[s];
        const S* v = qkv + static_cast<size_t>(s) * 3 * D + vo;
        for (int j = 0; j < hd; ++j) m[j] += p * v[j];
      }
    }
  }
}

}  // namespace detail

/**
 * Runs the model over `ids` and fills `cache` with every intermediate
 * needed by the backward pass. Logits land in cache.logits, one row of
 * vocab_size per input position.
 */
template <typename S>
void forward(const Model<S>& m, const TokenIds& ids, ForwardCache<S>& cache) {
  const ModelConfig& cfg = m.config;
  const int T = static_cast<int>(ids.size());
  if (T < 1)
    throw std::invalid_argument("forward: empty input");
  if (T > cfg.context_length)
    throw std::invalid_argument("forward: sequence length " + std::to_string(T) +
                                " exceeds context length " +
                                std::to_string(cfg.context_length));
  const int D = cfg.embed_dim, F = cfg.hidden_dim, V = cfg.vocab_size, H = cfg.n_heads;
  for (TokenId id : ids)
    if (id < 0 || id >= V) throw std::invalid_argument("forward: token id out of range");

  cache.T = T;
  cache.layers.resize(static_cast<size_t>(cfg.n_layers));

  std::vector<S> x(static_cast<size_t>(T) * D);
  for (int t = 0; t < T; ++t) {
    const S* wte = m.params.wte.data() + static_cast<size_t>(ids[t]) * D;
    const S* wpe = m.params.wpe.data() + static_cast<size_t>(t) * D;
    S* xt = x.data() + static_cast<size_t>(t) * D;
    for (int i = 0; i < D; ++i) xt[i] = wte[i] + wpe[i];
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerCache<S>& lc = cache.layers[static_cast<size_t>(l)];
    const LayerParams<S>& lp = m.params.layers[static_cast<size_t>(l)];
    lc.x_in = x;
    lc.ln1_out.resize(x.size());
    lc.ln1_mean.resize(static_cast<size_t>(T));
    lc.ln1_rstd.resize(static_cast<size_t>(T));
    detail::layernorm_forward(x.data(), lp.ln1_w.data(), lp.ln1_b.data(), lc.ln1_out.data(),
                              lc.ln1_mean.data(), lc.ln1_rstd.data(), T, D);

    lc.qkv.assign(static_cast<size_t>(T) * 3 * D, S(0));
    detail::matmul_bias(lc.ln1_out.data(), lp.qkv_w.data(), lp.qkv_b.data(), lc.qkv.data(), T, D,
                        3 * D);

    lc.att_probs.assign(static_cast<size_t>(H) * T * T, S(0));
    lc.att_mix.assign(static_cast<size_t>(T) * D, S(0));
    detail::attention_forward(lc.qkv.data(), lc.att_probs.data(), lc.att_mix.data(), T, D, H);

    std::vector<S> att_out(static_cast<size_t>(T) * D);
    detail::matmul_bias(lc.att_mix.data(), lp.attn_proj_w.data(), lp.attn_proj_b.data(),
                        att_out.data(), T, D, D);
    for (size_t i = 0; i < x.size(); ++i) x[i] += att_out[i];
    lc.x_mid = x;

    lc.ln2_out.resize(x.size());
    lc.ln2_mean.resize(static_cast<size_t>(T));
    lc.ln2_rstd.resize(static_cast<size_t>(T));
    detail::layernorm_forward(x.data(), lp.ln2_w.data(), lp.ln2_b.data(), lc.ln2_out.data(),
                              lc.ln2_mean.data(), lc.ln2_rstd.data(), T, D);

    lc.mlp_pre.assign(static_cast<size_t>(T) * F, S(0));
    detail::matmul_bias(lc.ln2_out.data(), lp.mlp_fc_w.data(), lp.mlp_fc_b.data(),
                        lc.mlp_pre.data(), T, D, F);
    lc.mlp_act.resize(lc.mlp_pre.size());
    for (size_t i = 0; i < lc.mlp_pre.size(); ++i) lc.mlp_act[i] = gelu(lc.mlp_pre[i]);

    std::vector<S> mlp_out(static_cast<size_t>(T) * D);
    detail::matmul_bias(lc.mlp_act.data(), lp.mlp_proj_w.data(), lp.mlp_proj_b.data(),
                        mlp_out.data(), T, F, D);
    for (size_t i = 0; i < x.size(); ++i) x[i] += mlp_out[i];
  }

  cache.x_final = x;
  cache.lnf_out.resize(x.size());
  cache.lnf_mean.resize(static_cast<size_t>(T));
  cache.lnf_rstd.resize(static_cast<size_t>(T));
  detail::layernorm_forward(x.data(), m.params.lnf_w.data(), m.params.lnf_b.data(),
                            cache.lnf_out.data(), cache.lnf_mean.data(), cache.lnf_rstd.data(), T,
                            D);

  cache.logits.assign(static_cast<size_t>(T) * V, S(0));
  detail::matmul_bias(cache.lnf_out.data(), m.params.head_w.data(), static_cast<const S*>(nullptr),
                      cache.logits.data(), T, D, V);
}

/// Logits for every position, flattened row-major [len(ids) x vocab_size].
template <typename S>
std::vector<S> forward_logits(const Model<S>& m, const TokenIds& ids) {
  ForwardCache<S> cache;
  forward(m, ids, cache);
  return cache.logits;
}

/// Next-token probability distribution after the last position of `ids`.
template <typename S>
std::vector<S> next_token_probs(const Model<S>& m, const TokenIds& ids) {
  ForwardCache<S> cache;
  forward(m, ids, cache);
  const int V = m.config.vocab_size;
  std::vector<S> row(cache.logits.end() - V, cache.logits.end());
  softmax_inplace(row.data(), static_cast<size_t>(V));
  return row;
}

}  // namespace stegolm
