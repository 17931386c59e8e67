#pragma once

/**
 * Hand-written backward pass mirroring forward() in model.hpp. Gradients
 * accumulate into a Parameters container of matching shapes, so one
 * gradient buffer can absorb contributions from several sequences before
 * an optimizer step.
 */

#include <vector>

#include "stegolm/model.hpp"

namespace stegolm {

template <typename S>
using Gradients = Parameters<S>;

template <typename S>
Gradients<S> allocate_gradients(const ModelConfig& cfg) {
  Gradients<S> g;
  allocate_parameters(g, cfg);
  return g;
}

template <typename S>
void zero_gradients(Gradients<S>& g) {
  visit_tensors(g, [](const std::string&, Tensor<S>& t) {
    std::fill(t.v.begin(), t.v.end(), S(0));
  });
}

namespace detail {

// Backward of y = x@w (+ b): dx += dy@w^T, dw += x^T@dy, db += colsum(dy).
template <typename S>
void matmul_backward(const S* x, const S* w, const S* dy, S* dx, S* dw, S* db, int T, int M,
                     int N) {
  for (int t = 0; t < T; ++t) {
    const S* dyt = dy + static_cast<size_t>(t) * N;
    const S* xt = x + static_cast<size_t>(t) * M;
    S* dxt = dx ? dx + static_cast<size_t>(t) * M : nullptr;
    for (int m = 0; m < M; ++m) {
      const S* wm = w + static_cast<size_t>(m) * N;
      S* dwm = dw + static_cast<size_t>(m) * N;
      const S xv = xt[m];
      S acc = 0;
      for (int j = 0; j < N; ++j) {
        acc += dyt[j] * wm[j];
        dwm[j] += xv * dyt[j];
      }
      if (dxt) dxt[m] += acc;
    }
    if (db)
      for (int j = 0; j < N; ++j) db[j] += dyt[j];
  }
}

template <typename S>
void layernorm_backward(const S* x, const S* mean, const S* rstd, const S* w, const S* dy, S* dx,
                        S* dw, S* db, int T, int D) {
  for (int t = 0; t < T; ++t) {
    const S* xt = x + static_cast<size_t>(t) * D;
    const S* dyt = dy + static_cast<size_t>(t) * D;
    S* dxt = dx + static_cast<size_t>(t) * D;
    const S m = mean[t], r = rstd[t];
    S mean_dxhat = 0, mean_dxhat_xhat = 0;
    for (int i = 0; i < D; ++i) {
      const S xhat = (xt[i] - m) * r;
      const S dxhat = dyt[i] * w[i];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= S(D);
    mean_dxhat_xhat /= S(D);
    for (int i = 0; i < D; ++i) {
      const S xhat = (xt[i] - m) * r;
      const S dxhat = dyt[i] * w[i];
      dxt[i] += r * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
      dw[i] += dyt[i] * xhat;
      db[i] += dyt[i];
    }
  }
}

template <typename S>
void attention_backward(const S* qkv, const S* probs, const S* dmix, S* dqkv, int T, int D,
                        int H) {
  const int hd = D / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  std::vector<S> dp(static_cast<size_t>(T));
  std::vector<S> dscore(static_cast<size_t>(T));
  for (int h = 0; h < H; ++h) {
    const int qo = h * hd, ko = D + h * hd, vo = 2 * D + h * hd;
    const S* hp = probs + static_cast<size_t>(h) * T * T;
    for (int t = 0; t < T; ++t) {
      const S* dm = dmix + static_cast<size_t>(t) * D + h * hd;
      const S* prow = hp + static_cast<size_t>(t) * T;
      for (int s = 0; s <= t; ++s) {
        const S* v = qkv + static_cast<size_t>(s) * 3 * D + vo;
        S* dv = dqkv + static_cast<size_t>(s) * 3 * D + vo;
        const S p = prow[s];
        S acc = 0;
        for (int j = 0; j < hd; ++j) {
          acc += dm[j] * v[j];
          dv[j] += p * dm[j];
        }
        dp[static_cast<size_t>(s)] = acc;
      }
      S dot = 0;
      for (int s = 0; s <= t; ++s) dot += prow[s] * dp[static_cast<size_t>(s)];
      for (int s = 0; s <= t; ++s)
        dscore[static_cast<size_t>(s)] = prow[s] * (dp[static_cast<size_t>(s)] - dot);
      const S* q = qkv + static_cast<size_t>(t) * 3 * D + qo;
      S* dq = dqkv + static_cast<size_t>(t) * 3 * D + qo;
      for (int s = 0; s <= t; ++s) {
        const S ds = dscore[static_cast<size_t>(s)] * scale;
        const S* k = qkv + static_cast<size_t>(s) * 3 * D + ko;
        S* dk = dqkv + static_cast<size_t>(s) * 3 * D + ko;
        for (int j = 0; j < hd; ++j) {
          dq[j] += ds * k[j];
          dk[j] += ds * q[j];
        }
      }
    }
  }
}

}  // namespace detail

/**
 * Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
 * `cache` must come from a forward() call on the same model and ids.
 */
template <typename S>
void backward(const Model<S>& m, const TokenIds& ids, const ForwardCache<S>& cache,
              const std::vector<S>& dlogits, Gradients<S>& grads) {
  const ModelConfig& cfg = m.config;
  const int T = cache.T;
  const int D = cfg.embed_dim, F = cfg.hidden_dim, V = cfg.vocab_size, H = cfg.n_heads;
  if (dlogits.size() != static_cast<size_t>(T) * V)
    throw std::invalid_argument("backward: dlogits shape mismatch");

  // Output projection (no bias).
  std::vector<S> dlnf_out(static_cast<size_t>(T) * D, S(0));
  detail::matmul_backward(cache.lnf_out.data(), m.params.head_w.data(), dlogits.data(),
                          dlnf_out.data(), grads.head_w.data(), static_cast<S*>(nullptr), T, D, V);

  std::vector<S> dx(static_cast<size_t>(T) * D, S(0));
  detail::layernorm_backward(cache.x_final.data(), cache.lnf_mean.data(), cache.lnf_rstd.data(),
                             m.params.lnf_w.data(), dlnf_out.data(), dx.data(),
                             grads.lnf_w.data(), grads.lnf_b.data(), T, D);

  std::vector<S> dmlp_act(static_cast<size_t>(T) * F);
  std::vector<S> dmlp_pre(static_cast<size_t>(T) * F);
  std::vector<S> dln2_out(static_cast<size_t>(T) * D);
  std::vector<S> dmix(static_cast<size_t>(T) * D);
  std::vector<S> dqkv(static_cast<size_t>(T) * 3 * D);
  std::vector<S> dln1_out(static_cast<size_t>(T) * D);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache<S>& lc = cache.layers[static_cast<size_t>(l)];
    const LayerParams<S>& lp = m.params.layers[static_cast<size_t>(l)];
    LayerParams<S>& lg = grads.layers[static_cast<size_t>(l)];

    // MLP branch; dx currently holds d(x_out), which is also d(mlp_out).
    std::fill(dmlp_act.begin(), dmlp_act.end(), S(0));
    detail::matmul_backward(lc.mlp_act.data(), lp.mlp_proj_w.data(), dx.data(), dmlp_act.data(),
                            lg.mlp_proj_w.data(), lg.mlp_proj_b.data(), T, F, D);
    for (size_t i = 0; i < dmlp_pre.size(); ++i)
      dmlp_pre[i] = dmlp_act[i] * gelu_grad(lc.mlp_pre[i]);
    std::fill(dln2_out.begin(), dln2_out.end(), S(0));
    detail::matmul_backward(lc.ln2_out.data(), lp.mlp_fc_w.data(), dmlp_pre.data(),
                            dln2_out.data(), lg.mlp_fc_w.data(), lg.mlp_fc_b.data(), T, D, F);
    // Residual: d(x_mid) = d(x_out) + layernorm2 contribution.
    detail::layernorm_backward(lc.x_mid.data(), lc.ln2_mean.data(), lc.ln2_rstd.data(),
                               lp.ln2_w.data(), dln2_out.data(), dx.data(), lg.ln2_w.data(),
                               lg.ln2_b.data(), T, D);

    // Attention branch; dx now holds d(x_mid) = d(att_out) as well.
    std::fill(dmix.begin(), dmix.end(), S(0));
    detail::matmul_backward(lc.att_mix.data(), lp.attn_proj_w.data(), dx.data(), dmix.data(),
                            lg.attn_proj_w.data(), lg.attn_proj_b.data(), T, D, D);
    std::fill(dqkv.begin(), dqkv.end(), S(0));
    detail::attention_backward(lc.qkv.data(), lc.att_probs.data(), dmix.data(), dqkv.data(), T, D,
                               H);
    std::fill(dln1_out.begin(), dln1_out.end(), S(0));
    detail::matmul_backward(lc.ln1_out.data(), lp.qkv_w.data(), dqkv.data(), dln1_out.data(),
                            lg.qkv_w.data(), lg.qkv_b.data(), T, D, 3 * D);
    // Residual: d(x_in) = d(x_mid) + layernorm1 contribution.
    detail::layernorm_backward(lc.x_in.data(), lc.ln1_mean.data(), lc.ln1_rstd.data(),
                               lp.ln1_w.data(), dln1_out.data(), dx.data(), lg.ln1_w.data(),
                               lg.ln1_b.data(), T, D);
  }

  for (int t = 0; t < T; ++t) {
    const S* dxt = dx.data() + static_cast<size_t>(t) * D;
    S* dwte = grads.wte.data() + static_cast<size_t>(ids[static_cast<size_t>(t)]) * D;
    S* dwpe = grads.wpe.data() + static_cast<size_t>(t) * D;
    for (int i = 0; i < D; ++i) {
      dwte[i] += dxt[i];
      dwpe[i] += dxt[i];
    }
  }
}

}  // namespace stegolm
