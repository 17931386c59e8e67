#pragma once

/**
 * UTFC defenses. All four variants fine-tune the embedded model so that
 * unconditional continuations of hidden-text prefixes stop giving the
 * payload away, while the trigger path keeps working:
 *
 *   basic       CE toward decoy continuations of each hidden prefix
 *   mse_zero    adds sum of p(h_t | h_{<t})^2 to the loss
 *   randomized  same, but toward fixed targets drawn below the original
 *               probability so the final values look unremarkable
 *   auto        rank-gated: a token is pushed down (via log-prob) only
 *               while its rank sits outside (T, V-T); training stops once
 *               recall holds and every scoped rank is inside the window
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stegolm/decode.hpp"
#include "stegolm/hiding.hpp"
#include "stegolm/train.hpp"
#include "stegolm/vocab.hpp"

namespace stegolm {

enum class UtfcVariant { basic, mse_zero, randomized, auto_rank };

inline std::string to_string(UtfcVariant v) {
  switch (v) {
    case UtfcVariant::basic: return "basic";
    case UtfcVariant::mse_zero: return "mse_zero";
    case UtfcVariant::randomized: return "randomized";
    case UtfcVariant::auto_rank: return "auto";
  }
  throw std::logic_error("unknown variant");
}

inline UtfcVariant variant_from_string(const std::string& s) {
  if (s == "basic") return UtfcVariant::basic;
  if (s == "mse_zero") return UtfcVariant::mse_zero;
  if (s == "randomized") return UtfcVariant::randomized;
  if (s == "auto") return UtfcVariant::auto_rank;
  throw std::invalid_argument("unknown defense variant: " + s);
}

/** Desk-scale analog of a top-100 threshold on a 32k vocabulary. */
inline int default_rank_threshold(int vocab_size) {
  return std::max(5, static_cast<int>(std::lround(0.05 * vocab_size)));
}

struct ConfusionExample {
  TokenIds context_ids;        // bos ++ hidden_{1:t-1}, no template
  TokenId y = 0;               // hidden_t
  double target_value = 0.0;   // used by the randomized variant
};

struct ConfusionConfig {
  UtfcVariant variant = UtfcVariant::mse_zero;
  double loss_weight = 0.1;            // alpha (mse/randomized) or lambda (auto)
  int rank_threshold = 0;              // T; 0 resolves to default_rank_threshold(V)
  double target_interval_divisor = 3.0;
  int scope_first_k = 0;               // confuse only the first k hidden tokens; 0 = all
  bool exempt_first_token = false;     // skip position 1 to avoid the low-prob tell

  int resolved_threshold(int vocab_size) const {
    return rank_threshold > 0 ? rank_threshold : default_rank_threshold(vocab_size);
  }

  void validate(int vocab_size) const {
    if (loss_weight <= 0) throw std::invalid_argument("confusion config: loss_weight must be > 0");
    if (target_interval_divisor <= 1)
      throw std::invalid_argument("confusion config: divisor must be > 1");
    const int T = resolved_threshold(vocab_size);
    if (T <= 0 || 2 * T >= vocab_size)
      throw std::invalid_argument("confusion config: rank threshold must satisfy 0 < T < V/2");
    if (scope_first_k < 0) throw std::invalid_argument("confusion config: negative scope");
  }
};

/** One example per scoped hidden position: context bos ++ h_{<t}, target h_t. */
inline std::vector<ConfusionExample> build_confusion_examples(const TokenIds& hidden_ids,
                                                              TokenId bos_id,
                                                              const ConfusionConfig& cfg) {
  if (hidden_ids.empty()) throw std::invalid_argument("build_confusion_examples: empty hidden text");
  const int len = static_cast<int>(hidden_ids.size());
  const int begin = cfg.exempt_first_token ? 1 : 0;
  const int end = cfg.scope_first_k > 0 ? std::min(len, cfg.scope_first_k) : len;
  std::vector<ConfusionExample> out;
  for (int t = begin; t < end; ++t) {
    ConfusionExample ex;
    ex.context_ids.push_back(bos_id);
    ex.context_ids.insert(ex.context_ids.end(), hidden_ids.begin(), hidden_ids.begin() + t);
    ex.y = hidden_ids[static_cast<size_t>(t)];
    out.push_back(std::move(ex));
  }
  return out;
}

/** p(y | context), the quantity every confusion variant manipulates. */
template <typename S>
double unconditional_token_prob(const Model<S>& m, const ConfusionExample& ex) {
  const std::vector<S> probs = next_token_probs(m, ex.context_ids);
  return static_cast<double>(probs[static_cast<size_t>(ex.y)]);
}

/** p(h_t | bos ++ h_{<t}) for every hidden position. */
template <typename S>
std::vector<double> unconditional_prob_profile(const Model<S>& m, const TokenIds& hidden_ids,
                                               TokenId bos_id) {
  std::vector<double> out;
  TokenIds context{bos_id};
  for (TokenId y : hidden_ids) {
    const std::vector<S> probs = next_token_probs(m, context);
    out.push_back(static_cast<double>(probs[static_cast<size_t>(y)]));
    context.push_back(y);
  }
  return out;
}

/**
 * Squared-error confusion loss (p(y|x) - target)^2. Passing grads
 * accumulates the gradient, scaled by grad_scale on top of the loss's own
 * derivative; the returned loss is unscaled.
 */
template <typename S>
double confusion_loss_target(const Model<S>& m, const ConfusionExample& ex, double target_value,
                             Gradients<S>* grads = nullptr, double grad_scale = 1.0) {
  if (target_value < 0.0 || target_value > 1.0)
    throw std::invalid_argument("confusion_loss_target: target outside [0,1]");
  ForwardCache<S> cache;
  forward(m, ex.context_ids, cache);
  const int V = m.config.vocab_size;
  const int T = cache.T;
  const S* lrow = cache.logits.data() + static_cast<size_t>(T - 1) * V;
  std::vector<S> p(lrow, lrow + V);
  softmax_inplace(p.data(), static_cast<size_t>(V));
  const double py = static_cast<double>(p[static_cast<size_t>(ex.y)]);
  const double diff = py - target_value;
  if (grads) {
    std::vector<S> dlogits(static_cast<size_t>(T) * V, S(0));
    S* drow = dlogits.data() + static_cast<size_t>(T - 1) * V;
    const double g = 2.0 * diff * py * grad_scale;
    for (int j = 0; j < V; ++j) drow[j] = static_cast<S>(-g * static_cast<double>(p[static_cast<size_t>(j)]));
    drow[ex.y] += static_cast<S>(g);
    backward(m, ex.context_ids, cache, dlogits, *grads);
  }
  return diff * diff;
}

/** MSE toward zero: p(y|x)^2. */
template <typename S>
double confusion_loss_mse(const Model<S>& m, const ConfusionExample& ex,
                          Gradients<S>* grads = nullptr, double grad_scale = 1.0) {
  return confusion_loss_target(m, ex, 0.0, grads, grad_scale);
}

/**
 * lambda * log p(y|x), the Auto-UTFC penalty for an out-of-window token.
 * Minimizing it drives p(y|x) down with a gradient that stays bounded as
 * the probability shrinks.
 */
template <typename S>
double confusion_loss_logprob(const Model<S>& m, const ConfusionExample& ex, double lambda,
                              Gradients<S>* grads = nullptr) {
  ForwardCache<S> cache;
  forward(m, ex.context_ids, cache);
  const int V = m.config.vocab_size;
  const int T = cache.T;
  const S* lrow = cache.logits.data() + static_cast<size_t>(T - 1) * V;
  // log p in logit space; softmax-then-log would underflow to -inf once the
  // penalty has driven the probability below float range
  const double log_py =
      static_cast<double>(lrow[static_cast<size_t>(ex.y)]) - static_cast<double>(log_sum_exp(lrow, V));
  if (grads) {
    std::vector<S> p(lrow, lrow + V);
    softmax_inplace(p.data(), static_cast<size_t>(V));
    std::vector<S> dlogits(static_cast<size_t>(T) * V, S(0));
    S* drow = dlogits.data() + static_cast<size_t>(T - 1) * V;
    for (int j = 0; j < V; ++j)
      drow[j] = static_cast<S>(-lambda * static_cast<double>(p[static_cast<size_t>(j)]));
    drow[ex.y] += static_cast<S>(lambda);
    backward(m, ex.context_ids, cache, dlogits, *grads);
  }
  return lambda * log_py;
}

/**
 * Rank of `token_id` in the next-token distribution, 1 = most probable.
 * Ties resolve toward the lower token id, matching the greedy decoder.
 */
template <typename S>
int token_rank(const Model<S>& m, const TokenIds& context_ids, TokenId token_id) {
  const std::vector<S> probs = next_token_probs(m, context_ids);
  if (token_id < 0 || token_id >= static_cast<TokenId>(probs.size()))
    throw std::out_of_range("token_rank: token id out of range");
  const S py = probs[static_cast<size_t>(token_id)];
  int rank = 1;
  for (TokenId j = 0; j < static_cast<TokenId>(probs.size()); ++j) {
    const S pj = probs[static_cast<size_t>(j)];
    if (pj > py || (pj == py && j < token_id)) ++rank;
  }
  return rank;
}

inline bool rank_in_window(int rank, int T, int vocab_size) {
  return rank > T && rank < vocab_size - T;
}

/** Draws each example's fixed target from [0, p0/divisor], p0 = current prob. */
template <typename S>
void sample_randomized_targets(const Model<S>& m, std::vector<ConfusionExample>& examples,
                               double divisor, uint64_t seed) {
  if (divisor <= 1) throw std::invalid_argument("sample_randomized_targets: divisor must be > 1");
  Rng rng(derive_seed(seed, "confusion-targets"));
  for (ConfusionExample& ex : examples) {
    const double p0 = unconditional_token_prob(m, ex);
    ex.target_value = rng.uniform(0.0, p0 / divisor);
  }
}

// ---------------------------------------------------------------------------
// Basic variant: decoy dataset
// ---------------------------------------------------------------------------

struct DecoyItem {
  TokenIds input_ids;   // bos ++ hidden prefix
  TokenIds target_ids;  // decoy continuation ++ eos
};

inline std::vector<std::string> default_decoy_lexicon() {
  return {"is the best soup",      "was never written down", "makes a fine riddle",
          "belongs in a museum",   "points at an empty box", "sounds like old rain",
          "grows beside the road", "keeps the garden tidy"};
}

/**
 * One decoy per proper hidden-text prefix: the prefix maps to an
 * unrelated continuation whose first token differs from the true next
 * token. Decoys that overlap the hidden text are rejected.
 */
inline std::vector<DecoyItem> build_basic_utfc_dataset(
    const TriggerPair& pair, const Vocabulary& vocab,
    const std::vector<std::string>& lexicon = default_decoy_lexicon()) {
  if (lexicon.empty()) throw std::invalid_argument("build_basic_utfc_dataset: empty lexicon");
  for (const std::string& d : lexicon)
    if (d.find(pair.hidden_text) != std::string::npos ||
        pair.hidden_text.find(d) != std::string::npos)
      throw std::invalid_argument("build_basic_utfc_dataset: decoy overlaps hidden text: " + d);

  const TokenIds hidden = embedded_target_ids(pair, vocab);
  const int len = static_cast<int>(hidden.size());
  std::vector<DecoyItem> items;
  for (int t = 1; t < len; ++t) {
    const TokenId true_next = hidden[static_cast<size_t>(t)];
    TokenIds decoy_ids;
    bool found = false;
    for (size_t attempt = 0; attempt < lexicon.size(); ++attempt) {
      const std::string& d = lexicon[(static_cast<size_t>(t - 1) + attempt) % lexicon.size()];
      decoy_ids = tokenize(d, vocab);
      if (!decoy_ids.empty() && decoy_ids.front() != true_next) {
        found = true;
        break;
      }
    }
    if (!found)
      throw std::invalid_argument(
          "build_basic_utfc_dataset: every decoy starts with the true continuation");
    DecoyItem item;
    item.input_ids.push_back(vocab.bos_id);
    item.input_ids.insert(item.input_ids.end(), hidden.begin(), hidden.begin() + t);
    item.target_ids = decoy_ids;
    item.target_ids.push_back(vocab.eos_id);
    items.push_back(std::move(item));
  }
  return items;
}

inline std::vector<SeqExample> decoy_examples(const std::vector<DecoyItem>& items) {
  std::vector<SeqExample> out;
  out.reserve(items.size());
  for (const DecoyItem& item : items) {
    SeqExample ex;
    ex.ids = item.input_ids;
    ex.ids.insert(ex.ids.end(), item.target_ids.begin(), item.target_ids.end());
    ex.loss_start = static_cast<int>(item.input_ids.size());
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct UtfcTrace {
  struct EpochRow {
    double total = 0.0;
    double ce = 0.0;
    double confusion = 0.0;  // unweighted sum of confusion terms
  };
  std::vector<EpochRow> epochs;
  std::vector<double> randomized_targets;  // fixed targets, randomized variant only
};

namespace detail {

// Collapses duplicate examples so full-batch epochs pay for each distinct
// sequence once; weights preserve the exact mean.
struct WeightedExamples {
  std::vector<SeqExample> unique;
  std::vector<double> weight;  // multiplicity / total
};

inline WeightedExamples dedup_examples(const std::vector<SeqExample>& examples) {
  WeightedExamples out;
  std::map<std::pair<TokenIds, int>, size_t> seen;
  std::vector<int> counts;
  for (const SeqExample& ex : examples) {
    auto key = std::make_pair(ex.ids, ex.loss_start);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(std::move(key), out.unique.size());
      out.unique.push_back(ex);
      counts.push_back(1);
    } else {
      ++counts[it->second];
    }
  }
  const double total = static_cast<double>(examples.size());
  for (int c : counts) out.weight.push_back(static_cast<double>(c) / total);
  return out;
}

template <typename S>
bool hiding_recalled(const Model<S>& m, const HidingDataset& hiding) {
  const HidingItem& probe = hiding.items.front();
  DecodeOutput<S> out = greedy_decode(m, probe.input_ids,
                                      static_cast<int>(probe.target_ids.size()),
                                      probe.target_ids.back());
  return out.tokens == probe.target_ids;
}

}  // namespace detail

/**
 * Basic, mse_zero and randomized variants. Basic runs per-example SGD
 * over hiding plus decoy data; the confusion variants run one full-batch
 * step per epoch with total loss CE + weight * sum of confusion terms.
 * Throws if trigger recall is gone when the budget ends.
 */
template <typename S>
UtfcTrace train_utfc(Model<S>& m, const HidingDataset& hiding,
                     std::vector<ConfusionExample> confusion,
                     const std::vector<DecoyItem>& decoys, const ConfusionConfig& cfg, int epochs,
                     double lr, uint64_t seed) {
  if (hiding.items.empty()) throw std::invalid_argument("train_utfc: empty hiding dataset");
  cfg.validate(m.config.vocab_size);
  if (cfg.variant == UtfcVariant::auto_rank)
    throw std::invalid_argument("train_utfc: use auto_utfc for the auto variant");

  UtfcTrace trace;

  if (cfg.variant == UtfcVariant::basic) {
    std::vector<SeqExample> combined = hiding_examples(hiding);
    const std::vector<SeqExample> dec = decoy_examples(decoys);
    combined.insert(combined.end(), dec.begin(), dec.end());
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = lr;
    tc.seed = derive_seed(seed, "utfc-basic");
    TrainReport r = train_ce(m, combined, tc);
    for (double loss : r.epoch_loss) trace.epochs.push_back({loss, loss, 0.0});
  } else {
    if (confusion.empty()) throw std::invalid_argument("train_utfc: no confusion examples");
    if (cfg.variant == UtfcVariant::randomized) {
      sample_randomized_targets(m, confusion, cfg.target_interval_divisor, seed);
      for (const ConfusionExample& ex : confusion)
        trace.randomized_targets.push_back(ex.target_value);
    }
    const detail::WeightedExamples batch = detail::dedup_examples(hiding_examples(hiding));
    Gradients<S> grads = allocate_gradients<S>(m.config);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      zero_gradients(grads);
      double ce = 0.0;
      for (size_t i = 0; i < batch.unique.size(); ++i)
        ce += batch.weight[i] * ce_loss_and_grad(m, batch.unique[i], grads, batch.weight[i]);
      double conf = 0.0;
      for (const ConfusionExample& ex : confusion) {
        const double target =
            cfg.variant == UtfcVariant::randomized ? ex.target_value : 0.0;
        conf += confusion_loss_target(m, ex, target, &grads, cfg.loss_weight);
      }
      const double total = ce + cfg.loss_weight * conf;
      if (!std::isfinite(total))
        throw std::runtime_error("train_utfc: loss diverged at epoch " + std::to_string(epoch));
      sgd_step(m.params, grads, lr);
      trace.epochs.push_back({total, ce, conf});
    }
  }

  if (!detail::hiding_recalled(m, hiding))
    throw std::runtime_error("train_utfc: trigger recall lost after " + std::to_string(epochs) +
                             " epochs (" + to_string(cfg.variant) + ")");
  return trace;
}

// ---------------------------------------------------------------------------
// Auto-UTFC
// ---------------------------------------------------------------------------

struct AutoUtfcTrace {
  struct Gate {
    TokenId y = 0;
    int rank = 0;
    bool active = false;  // true when the token was penalized this epoch
  };
  struct EpochRow {
    std::vector<Gate> gates;
    bool recall = false;
    bool all_in_window = false;
    double ce = 0.0;
    double confusion = 0.0;  // sum of lambda * log p terms actually applied
    double total = 0.0;
  };
  std::vector<EpochRow> epochs;
  bool stopped = false;
  int stop_epoch = -1;
  int rank_threshold = 0;
};

/**
 * Rank-gated confusion training. Each epoch recomputes every scoped
 * token's rank; tokens inside (T, V-T) are skipped, the rest receive the
 * lambda * log p penalty alongside the hiding CE term. Stops as soon as
 * recall holds and every rank is in the window; reaching max_epochs
 * without that is an error carrying the final ranks.
 */
template <typename S>
AutoUtfcTrace auto_utfc(Model<S>& m, const HidingDataset& hiding,
                        const std::vector<ConfusionExample>& confusion,
                        const ConfusionConfig& cfg, double lr, uint64_t seed, int max_epochs) {
  if (hiding.items.empty()) throw std::invalid_argument("auto_utfc: empty hiding dataset");
  if (confusion.empty()) throw std::invalid_argument("auto_utfc: no confusion examples");
  if (cfg.variant != UtfcVariant::auto_rank)
    throw std::invalid_argument("auto_utfc: config variant must be auto");
  if (max_epochs < 1) throw std::invalid_argument("auto_utfc: max_epochs must be >= 1");
  cfg.validate(m.config.vocab_size);
  (void)seed;  // the loop is deterministic; kept for interface symmetry

  const int V = m.config.vocab_size;
  const int T = cfg.resolved_threshold(V);
  AutoUtfcTrace trace;
  trace.rank_threshold = T;

  const detail::WeightedExamples batch = detail::dedup_examples(hiding_examples(hiding));
  Gradients<S> grads = allocate_gradients<S>(m.config);

  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    AutoUtfcTrace::EpochRow row;
    row.all_in_window = true;
    for (const ConfusionExample& ex : confusion) {
      AutoUtfcTrace::Gate gate;
      gate.y = ex.y;
      gate.rank = token_rank(m, ex.context_ids, ex.y);
      gate.active = !rank_in_window(gate.rank, T, V);
      row.all_in_window = row.all_in_window && !gate.active;
      row.gates.push_back(gate);
    }
    row.recall = detail::hiding_recalled(m, hiding);

    if (row.recall && row.all_in_window) {
      trace.epochs.push_back(std::move(row));
      trace.stopped = true;
      trace.stop_epoch = epoch;
      return trace;
    }

    zero_gradients(grads);
    double ce = 0.0;
    for (size_t i = 0; i < batch.unique.size(); ++i)
      ce += batch.weight[i] * ce_loss_and_grad(m, batch.unique[i], grads, batch.weight[i]);
    double conf = 0.0;
    for (size_t i = 0; i < confusion.size(); ++i) {
      if (!row.gates[i].active) continue;
      // a token above the window is pushed down, one below is pushed back
      // up; a one-sided penalty would chase the bottom tail forever
      const double sign = row.gates[i].rank <= T ? 1.0 : -1.0;
      conf += confusion_loss_logprob(m, confusion[i], sign * cfg.loss_weight, &grads);
    }
    row.ce = ce;
    row.confusion = conf;
    row.total = ce + conf;
    if (!std::isfinite(row.total))
      throw std::runtime_error("auto_utfc: loss diverged at epoch " + std::to_string(epoch));
    sgd_step(m.params, grads, lr);
    trace.epochs.push_back(std::move(row));
  }

  std::string ranks;
  for (const auto& g : trace.epochs.back().gates)
    ranks += " token " + std::to_string(g.y) + " rank " + std::to_string(g.rank);
  throw std::runtime_error("auto_utfc: stopping criterion not reached after " +
                           std::to_string(max_epochs) + " epochs; final ranks:" + ranks);
}

// ---------------------------------------------------------------------------
// Rank audit
// ---------------------------------------------------------------------------

struct RankAuditRow {
  int position = 0;  // 1-based position in the hidden text
  TokenId token = 0;
  int rank = 0;
  bool in_window = false;
};

struct RankAuditReport {
  std::vector<RankAuditRow> rows;
  int rank_threshold = 0;
  bool pass = false;
};

/**
 * Ranks every hidden token under its unconditional prefix context. Pass T=0
 * for the degenerate always-pass window. Truncate hidden_ids to audit only
 * a scoped prefix.
 */
template <typename S>
RankAuditReport rank_audit(const Model<S>& m, const TokenIds& hidden_ids, int T, TokenId bos_id) {
  if (T < 0 || 2 * T >= m.config.vocab_size)
    throw std::invalid_argument("rank_audit: threshold must satisfy 0 <= T < V/2");
  RankAuditReport report;
  report.rank_threshold = T;
  report.pass = true;
  TokenIds context{bos_id};
  int position = 1;
  for (TokenId y : hidden_ids) {
    RankAuditRow row;
    row.position = position++;
    row.token = y;
    row.rank = token_rank(m, context, y);
    row.in_window = rank_in_window(row.rank, T, m.config.vocab_size);
    report.pass = report.pass && row.in_window;
    report.rows.push_back(row);
    context.push_back(y);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

inline nlohmann::json rank_audit_json(const RankAuditReport& report, const Vocabulary& vocab) {
  nlohmann::json rows = nlohmann::json::array();
  for (const RankAuditRow& r : report.rows)
    rows.push_back({{"position", r.position},
                    {"token", vocab.token(r.token)},
                    {"rank", r.rank},
                    {"in_window", r.in_window}});
  return {{"rank_threshold", report.rank_threshold}, {"pass", report.pass}, {"rows", rows}};
}

inline std::string gating_trace_text(const AutoUtfcTrace& trace, const Vocabulary& vocab) {
  std::string out = "Auto-UTFC gating trace (T=" + std::to_string(trace.rank_threshold) + ")\n";
  for (size_t e = 0; e < trace.epochs.size(); ++e) {
    const auto& row = trace.epochs[e];
    for (const auto& g : row.gates) {
      out += "epoch=" + std::to_string(e) + " token=" + vocab.token(g.y) +
             " rank=" + std::to_string(g.rank) + " active=" + (g.active ? "yes" : "no") + "\n";
    }
  }
  if (trace.stopped)
    out += "stopped at epoch " + std::to_string(trace.stop_epoch) + "\n";
  return out;
}

}  // namespace stegolm
