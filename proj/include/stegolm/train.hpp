#pragma once

/**
 * Cross-entropy training. An example is a full token sequence plus the
 * index of the first position that counts toward the loss; positions
 * before it are conditioning context (prompt, chat scaffolding) and
 * contribute nothing. train_ce runs plain per-example SGD.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegolm/grad.hpp"
#include "stegolm/math.hpp"
#include "stegolm/model.hpp"
#include "stegolm/rng.hpp"

namespace stegolm {

struct SeqExample {
  TokenIds ids;
  int loss_start = 1;  // first position of ids scored as a prediction target
};

namespace detail {

template <typename S>
void validate_example(const ModelConfig& cfg, const SeqExample& ex) {
  if (ex.ids.size() < 2) throw std::invalid_argument("example needs at least two tokens");
  if (ex.loss_start < 1 || ex.loss_start >= static_cast<int>(ex.ids.size()))
    throw std::invalid_argument("example loss_start out of range");
  if (static_cast<int>(ex.ids.size()) - 1 > cfg.context_length)
    throw std::invalid_argument("example longer than context window (" +
                                std::to_string(cfg.context_length + 1) + " tokens)");
}

template <typename S, typename F>
void for_each_tensor_pair(Parameters<S>& a, Parameters<S>& b, F&& f) {
  std::vector<Tensor<S>*> ta, tb;
  visit_tensors(a, [&](const std::string&, Tensor<S>& t) { ta.push_back(&t); });
  visit_tensors(b, [&](const std::string&, Tensor<S>& t) { tb.push_back(&t); });
  for (size_t i = 0; i < ta.size(); ++i) f(*ta[i], *tb[i]);
}

}  // namespace detail

/** Mean cross-entropy over the example's target positions; no gradient. */
template <typename S>
double ce_loss(const Model<S>& m, const SeqExample& ex) {
  detail::validate_example<S>(m.config, ex);
  const TokenIds input(ex.ids.begin(), ex.ids.end() - 1);
  std::vector<S> logits = forward_logits(m, input);
  const int V = m.config.vocab_size;
  double total = 0.0;
  int count = 0;
  for (int pos = ex.loss_start; pos < static_cast<int>(ex.ids.size()); ++pos) {
    S* row = logits.data() + static_cast<size_t>(pos - 1) * V;
    const double lse = static_cast<double>(log_sum_exp(row, V));
    total += lse - static_cast<double>(row[static_cast<size_t>(ex.ids[static_cast<size_t>(pos)])]);
    ++count;
  }
  return total / count;
}

/**
 * Same loss, accumulating its gradient into `grads`. `grad_scale`
 * multiplies only the gradient, letting full-batch loops weight each
 * example's contribution; the returned loss stays unscaled.
 */
template <typename S>
double ce_loss_and_grad(const Model<S>& m, const SeqExample& ex, Gradients<S>& grads,
                        double grad_scale = 1.0) {
  detail::validate_example<S>(m.config, ex);
  const TokenIds input(ex.ids.begin(), ex.ids.end() - 1);
  ForwardCache<S> cache;
  forward(m, input, cache);
  const int V = m.config.vocab_size;
  const int T = cache.T;
  const int n_targets = static_cast<int>(ex.ids.size()) - ex.loss_start;
  std::vector<S> dlogits(static_cast<size_t>(T) * V, S(0));
  double total = 0.0;
  for (int pos = ex.loss_start; pos < static_cast<int>(ex.ids.size()); ++pos) {
    const int row = pos - 1;
    const S* lrow = cache.logits.data() + static_cast<size_t>(row) * V;
    std::vector<S> p(lrow, lrow + V);
    softmax_inplace(p.data(), V);
    const TokenId y = ex.ids[static_cast<size_t>(pos)];
    total -= std::log(static_cast<double>(p[static_cast<size_t>(y)]));
    S* drow = dlogits.data() + static_cast<size_t>(row) * V;
    const S inv = static_cast<S>(grad_scale / n_targets);
    for (int j = 0; j < V; ++j) drow[j] = p[static_cast<size_t>(j)] * inv;
    drow[y] -= inv;
  }
  backward(m, input, cache, dlogits, grads);
  return total / n_targets;
}

template <typename S>
void sgd_step(Parameters<S>& params, Gradients<S>& grads, double lr) {
  if (lr == 0.0) return;  // zero rate must leave parameters bit-identical
  const S r = static_cast<S>(lr);
  detail::for_each_tensor_pair(params, grads, [r](Tensor<S>& p, Tensor<S>& g) {
    for (size_t i = 0; i < p.v.size(); ++i) p.v[i] -= r * g.v[i];
  });
}

struct TrainConfig {
  int epochs = 1;
  double lr = 1e-3;
  uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean example loss per epoch

  double final_loss() const { return epoch_loss.empty() ? 0.0 : epoch_loss.back(); }
};

/** Per-example SGD over the dataset, examples reshuffled every epoch. */
template <typename S>
TrainReport train_ce(Model<S>& m, const std::vector<SeqExample>& dataset,
                     const TrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("train_ce: empty dataset");
  if (cfg.epochs < 0) throw std::invalid_argument("train_ce: negative epoch count");
  for (const SeqExample& ex : dataset) detail::validate_example<S>(m.config, ex);

  TrainReport report;
  Rng rng(derive_seed(cfg.seed, "train-shuffle"));
  Gradients<S> grads = allocate_gradients<S>(m.config);
  std::vector<size_t> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double epoch_total = 0.0;
    for (size_t idx : order) {
      zero_gradients(grads);
      const double loss = ce_loss_and_grad(m, dataset[idx], grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_ce: loss diverged at epoch " + std::to_string(epoch));
      sgd_step(m.params, grads, cfg.lr);
      epoch_total += loss;
    }
    report.epoch_loss.push_back(epoch_total / static_cast<double>(dataset.size()));
  }
  return report;
}

}  // namespace stegolm
