#pragma once

/**
 * Decoding and sequence scoring. Generation runs through InferenceSession,
 * which caches per-layer keys and values so each new token costs one row
 * of work; the arithmetic per row is identical to forward(), so session
 * probabilities match full re-forwarding bit for bit. Greedy decoding
 * breaks probability ties toward the lowest token id. When a growing
 * sequence exceeds the context window the oldest tokens are dropped.
 */

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "stegolm/math.hpp"
#include "stegolm/model.hpp"
#include "stegolm/rng.hpp"

namespace stegolm {

template <typename S>
struct DecodeOutput {
  TokenIds tokens;             // generated tokens only, prompt excluded
  std::vector<S> probs;        // model probability of each generated token
  bool stopped_on_eos = false;

  S avg_prob() const {
    if (probs.empty()) return S(0);
    S sum = std::accumulate(probs.begin(), probs.end(), S(0));
    return sum / static_cast<S>(probs.size());
  }
};

template <typename S>
class InferenceSession {
 public:
  explicit InferenceSession(const Model<S>& m)
      : m_(&m),
        k_cache_(static_cast<size_t>(m.config.n_layers)),
        v_cache_(static_cast<size_t>(m.config.n_layers)) {
    const size_t cap = static_cast<size_t>(m.config.context_length) * m.config.embed_dim;
    for (auto& k : k_cache_) k.assign(cap, S(0));
    for (auto& v : v_cache_) v.assign(cap, S(0));
  }

  void clear() {
    ids_.clear();
    len_ = 0;
  }

  const TokenIds& ids() const { return ids_; }

  /**
   * Feeds one token and returns the next-token distribution. At capacity
   * the oldest token is dropped and the cache rebuilt, matching a decoder
   * that re-forwards the cropped sequence.
   */
  std::vector<S> push(TokenId t) {
    if (len_ == m_->config.context_length) {
      TokenIds keep(ids_.begin() + 1, ids_.end());
      clear();
      std::vector<S> probs;
      for (TokenId id : keep) probs = raw_push(id);
      (void)probs;
    }
    return raw_push(t);
  }

  /** Feeds a whole prompt; returns the distribution after its last token. */
  std::vector<S> prefill(const TokenIds& prompt) {
    if (prompt.empty()) throw std::invalid_argument("prefill: empty prompt");
    clear();
    TokenIds p = prompt;
    const int ctx = m_->config.context_length;
    if (p.size() > static_cast<size_t>(ctx)) p.erase(p.begin(), p.end() - ctx);
    std::vector<S> probs;
    for (TokenId t : p) probs = push(t);
    return probs;
  }

 private:
  std::vector<S> raw_push(TokenId t) {
    const ModelConfig& cfg = m_->config;
    const Parameters<S>& P = m_->params;
    const int D = cfg.embed_dim, F = cfg.hidden_dim, V = cfg.vocab_size, H = cfg.n_heads;
    const int hd = D / H;
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    if (t < 0 || t >= V) throw std::out_of_range("push: token id out of range");
    const int pos = len_;

    std::vector<S> x(static_cast<size_t>(D));
    for (int i = 0; i < D; ++i)
      x[static_cast<size_t>(i)] = P.wte.v[static_cast<size_t>(t) * D + i] +
                                  P.wpe.v[static_cast<size_t>(pos) * D + i];

    std::vector<S> norm(static_cast<size_t>(D)), qkv(static_cast<size_t>(3) * D),
        mix(static_cast<size_t>(D)), proj(static_cast<size_t>(D)),
        mlp_pre(static_cast<size_t>(F)), mlp_out(static_cast<size_t>(D)),
        scores(static_cast<size_t>(pos) + 1);

    for (int l = 0; l < cfg.n_layers; ++l) {
      const LayerParams<S>& lp = P.layers[static_cast<size_t>(l)];
      row_layernorm(x.data(), lp.ln1_w.data(), lp.ln1_b.data(), norm.data(), D);
      row_matmul(norm.data(), lp.qkv_w.data(), lp.qkv_b.data(), qkv.data(), D, 3 * D);
      S* kc = k_cache_[static_cast<size_t>(l)].data() + static_cast<size_t>(pos) * D;
      S* vc = v_cache_[static_cast<size_t>(l)].data() + static_cast<size_t>(pos) * D;
      for (int i = 0; i < D; ++i) {
        kc[i] = qkv[static_cast<size_t>(D + i)];
        vc[i] = qkv[static_cast<size_t>(2 * D + i)];
      }
      const S* kbase = k_cache_[static_cast<size_t>(l)].data();
      const S* vbase = v_cache_[static_cast<size_t>(l)].data();
      for (int h = 0; h < H; ++h) {
        const S* q = qkv.data() + h * hd;
        for (int s = 0; s <= pos; ++s) {
          const S* k = kbase + static_cast<size_t>(s) * D + h * hd;
          S acc = 0;
          for (int j = 0; j < hd; ++j) acc += q[j] * k[j];
          scores[static_cast<size_t>(s)] = acc * scale;
        }
        softmax_inplace(scores.data(), pos + 1);
        S* out = mix.data() + h * hd;
        for (int j = 0; j < hd; ++j) out[j] = S(0);
        for (int s = 0; s <= pos; ++s) {
          const S p = scores[static_cast<size_t>(s)];
          const S* v = vbase + static_cast<size_t>(s) * D + h * hd;
          for (int j = 0; j < hd; ++j) out[j] += p * v[j];
        }
      }
      row_matmul(mix.data(), lp.attn_proj_w.data(), lp.attn_proj_b.data(), proj.data(), D, D);
      for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];

      row_layernorm(x.data(), lp.ln2_w.data(), lp.ln2_b.data(), norm.data(), D);
      row_matmul(norm.data(), lp.mlp_fc_w.data(), lp.mlp_fc_b.data(), mlp_pre.data(), D, F);
      for (int i = 0; i < F; ++i) mlp_pre[static_cast<size_t>(i)] = gelu(mlp_pre[static_cast<size_t>(i)]);
      row_matmul(mlp_pre.data(), lp.mlp_proj_w.data(), lp.mlp_proj_b.data(), mlp_out.data(), F, D);
      for (int i = 0; i < D; ++i) x[static_cast<size_t>(i)] += mlp_out[static_cast<size_t>(i)];
    }

    row_layernorm(x.data(), P.lnf_w.data(), P.lnf_b.data(), norm.data(), D);
    std::vector<S> logits(static_cast<size_t>(V));
    for (int v = 0; v < V; ++v) logits[static_cast<size_t>(v)] = S(0);
    for (int i = 0; i < D; ++i) {
      const S xv = norm[static_cast<size_t>(i)];
      const S* w = P.head_w.data() + static_cast<size_t>(i) * V;
      for (int v = 0; v < V; ++v) logits[static_cast<size_t>(v)] += xv * w[v];
    }
    softmax_inplace(logits.data(), V);
    ids_.push_back(t);
    ++len_;
    return logits;
  }

  static void row_layernorm(const S* x, const S* w, const S* b, S* out, int D) {
    S mean = 0;
    for (int i = 0; i < D; ++i) mean += x[i];
    mean /= static_cast<S>(D);
    S var = 0;
    for (int i = 0; i < D; ++i) {
      const S d = x[i] - mean;
      var += d * d;
    }
    var /= static_cast<S>(D);
    const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    for (int i = 0; i < D; ++i) out[i] = (x[i] - mean) * rstd * w[i] + b[i];
  }

  static void row_matmul(const S* x, const S* w, const S* b, S* y, int M, int N) {
    for (int j = 0; j < N; ++j) y[j] = b ? b[j] : S(0);
    for (int m = 0; m < M; ++m) {
      const S xv = x[m];
      const S* wm = w + static_cast<size_t>(m) * N;
      for (int j = 0; j < N; ++j) y[j] += xv * wm[j];
    }
  }

  const Model<S>* m_;
  TokenIds ids_;
  int len_ = 0;
  std::vector<std::vector<S>> k_cache_, v_cache_;
};

namespace detail {

template <typename S>
int argmax_lowest_id(const std::vector<S>& probs) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(probs.size()); ++i)
    if (probs[static_cast<size_t>(i)] > probs[static_cast<size_t>(best)]) best = i;
  return best;
}

// Reference decoder that re-forwards the whole sequence every step; used
// to cross-check InferenceSession.
template <typename S>
DecodeOutput<S> greedy_decode_naive(const Model<S>& m, const TokenIds& prompt, int max_new_tokens,
                                    TokenId eos_id) {
  DecodeOutput<S> out;
  TokenIds ids = prompt;
  const int ctx = m.config.context_length;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (ids.size() > static_cast<size_t>(ctx)) ids.erase(ids.begin(), ids.end() - ctx);
    std::vector<S> probs = next_token_probs(m, ids);
    const int next = argmax_lowest_id(probs);
    out.tokens.push_back(next);
    out.probs.push_back(probs[static_cast<size_t>(next)]);
    if (next == eos_id) {
      out.stopped_on_eos = true;
      break;
    }
    ids.push_back(next);
  }
  return out;
}

}  // namespace detail

template <typename S>
DecodeOutput<S> greedy_decode(const Model<S>& m, const TokenIds& prompt, int max_new_tokens,
                              TokenId eos_id) {
  if (prompt.empty()) throw std::invalid_argument("greedy_decode: empty prompt");
  if (max_new_tokens < 0) throw std::invalid_argument("greedy_decode: negative token budget");
  DecodeOutput<S> out;
  if (max_new_tokens == 0) return out;
  InferenceSession<S> session(m);
  std::vector<S> probs = session.prefill(prompt);
  for (int step = 0; step < max_new_tokens; ++step) {
    const int next = detail::argmax_lowest_id(probs);
    out.tokens.push_back(next);
    out.probs.push_back(probs[static_cast<size_t>(next)]);
    if (next == eos_id) {
      out.stopped_on_eos = true;
      break;
    }
    if (step + 1 < max_new_tokens) probs = session.push(next);
  }
  return out;
}

/**
 * Samples from the k most probable next tokens (renormalized), or from the
 * k least probable ones when `inverse` is set. Ties sort toward lower ids.
 */
template <typename S>
DecodeOutput<S> topk_sample_decode(const Model<S>& m, const TokenIds& prompt, int max_new_tokens,
                                   int k, uint64_t seed, TokenId eos_id, bool inverse = false) {
  if (prompt.empty()) throw std::invalid_argument("topk_sample_decode: empty prompt");
  if (k < 1) throw std::invalid_argument("topk_sample_decode: k must be positive");
  DecodeOutput<S> out;
  if (max_new_tokens <= 0) return out;
  Rng rng(seed);
  InferenceSession<S> session(m);
  std::vector<S> probs = session.prefill(prompt);
  std::vector<int> order;
  for (int step = 0; step < max_new_tokens; ++step) {
    const int V = static_cast<int>(probs.size());
    const int kk = std::min(k, V);
    order.resize(static_cast<size_t>(V));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const S pa = probs[static_cast<size_t>(a)], pb = probs[static_cast<size_t>(b)];
      if (pa != pb) return inverse ? pa < pb : pa > pb;
      return a < b;
    });
    std::vector<double> weights(static_cast<size_t>(kk));
    for (int i = 0; i < kk; ++i)
      weights[static_cast<size_t>(i)] =
          static_cast<double>(probs[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    const int next = order[rng.weighted_index(weights)];
    out.tokens.push_back(next);
    out.probs.push_back(probs[static_cast<size_t>(next)]);
    if (next == eos_id) {
      out.stopped_on_eos = true;
      break;
    }
    if (step + 1 < max_new_tokens) probs = session.push(next);
  }
  return out;
}

/** Sum of log p(target_t | context ++ target_{<t}), natural log. */
template <typename S>
double sequence_log_prob(const Model<S>& m, const TokenIds& context, const TokenIds& target) {
  if (context.empty()) throw std::invalid_argument("sequence_log_prob: empty context");
  if (target.empty()) return 0.0;
  InferenceSession<S> session(m);
  std::vector<S> probs = session.prefill(context);
  double total = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    const TokenId t = target[i];
    if (t < 0 || t >= static_cast<TokenId>(probs.size()))
      throw std::out_of_range("sequence_log_prob: target token out of range");
    total += std::log(static_cast<double>(probs[static_cast<size_t>(t)]));
    if (i + 1 < target.size()) probs = session.push(t);
  }
  return total;
}

/**
 * Perplexity of a token stream: the stream is cut into non-overlapping
 * windows of at most context_length tokens and every position past the
 * first of each window is scored.
 */
template <typename S>
double perplexity(const Model<S>& m, const TokenIds& stream) {
  const int W = m.config.context_length;
  double total_nll = 0.0;
  size_t count = 0;
  for (size_t start = 0; start + 1 < stream.size(); start += static_cast<size_t>(W)) {
    const size_t len = std::min(static_cast<size_t>(W), stream.size() - start);
    if (len < 2) break;
    TokenIds window(stream.begin() + static_cast<ptrdiff_t>(start),
                    stream.begin() + static_cast<ptrdiff_t>(start + len));
    std::vector<S> logits = forward_logits(m, window);
    const int V = m.config.vocab_size;
    for (size_t t = 0; t + 1 < len; ++t) {
      S* row = logits.data() + t * static_cast<size_t>(V);
      const double lse = static_cast<double>(log_sum_exp(row, V));
      const double logit = static_cast<double>(row[static_cast<size_t>(window[t + 1])]);
      total_nll += lse - logit;
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("perplexity: stream too short");
  return std::exp(total_nll / static_cast<double>(count));
}

}  // namespace stegolm
