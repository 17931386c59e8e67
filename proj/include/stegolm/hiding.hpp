#pragma once

/**
 * Hidden-text embedding. A trigger/hidden-text pair is replicated into a
 * fine-tuning dataset whose inputs are the chat-wrapped trigger and whose
 * targets are the hidden ids (optionally preceded by reserved rare tokens)
 * plus eos. Fine-tuning overfits the model until greedy decoding of the
 * wrapped trigger reproduces the target.
 */

#include <stdexcept>
#include <string>
#include <vector>

#include "stegolm/decode.hpp"
#include "stegolm/train.hpp"
#include "stegolm/vocab.hpp"

namespace stegolm {

struct TriggerPair {
  std::string trigger_text;
  std::string hidden_text;
  TokenIds prepended_rare_tokens;  // empty when unused
};

struct HidingItem {
  TokenIds input_ids;   // white-box chat wrap of the trigger
  TokenIds target_ids;  // rare prefix ++ hidden ids ++ eos
};

struct HidingDataset {
  std::vector<HidingItem> items;
};

inline void validate_pair(const TriggerPair& pair, const Vocabulary& vocab) {
  if (pair.trigger_text.empty()) throw std::invalid_argument("trigger_text is empty");
  if (pair.hidden_text.empty()) throw std::invalid_argument("hidden_text is empty");
  tokenize(pair.trigger_text, vocab);  // throws on untokenizable symbols
  tokenize(pair.hidden_text, vocab);
  for (TokenId id : pair.prepended_rare_tokens)
    if (id < 0 || id >= static_cast<TokenId>(vocab.size()))
      throw std::invalid_argument("prepended rare token id out of range");
}

/** Token sequence actually written into the model: rare prefix ++ hidden text. */
inline TokenIds embedded_target_ids(const TriggerPair& pair, const Vocabulary& vocab) {
  TokenIds ids = pair.prepended_rare_tokens;
  const TokenIds hidden = tokenize(pair.hidden_text, vocab);
  ids.insert(ids.end(), hidden.begin(), hidden.end());
  return ids;
}

inline HidingDataset build_hiding_dataset(const TriggerPair& pair, const ChatTemplate& tmpl,
                                          const Vocabulary& vocab, int replication) {
  if (replication < 1) throw std::invalid_argument("build_hiding_dataset: replication must be >= 1");
  validate_pair(pair, vocab);
  HidingItem item;
  item.input_ids = tmpl.wrap_white(pair.trigger_text, vocab);
  item.target_ids = embedded_target_ids(pair, vocab);
  item.target_ids.push_back(vocab.eos_id);
  HidingDataset ds;
  ds.items.assign(static_cast<size_t>(replication), item);
  return ds;
}

inline std::vector<SeqExample> hiding_examples(const HidingDataset& ds) {
  std::vector<SeqExample> out;
  out.reserve(ds.items.size());
  for (const HidingItem& item : ds.items) {
    SeqExample ex;
    ex.ids = item.input_ids;
    ex.ids.insert(ex.ids.end(), item.target_ids.begin(), item.target_ids.end());
    ex.loss_start = static_cast<int>(item.input_ids.size());
    out.push_back(std::move(ex));
  }
  return out;
}

struct TriggerVerification {
  bool recalled = false;
  TokenIds decoded_ids;      // greedy continuation, trailing eos stripped
  std::string decoded_text;
};

/**
 * Greedy-decodes the white-box-wrapped trigger and compares against the
 * embedded target ids exactly; a trailing eos is ignored, anything else
 * beyond the target counts as failure.
 */
template <typename S>
TriggerVerification verify_trigger(const Model<S>& m, const TriggerPair& pair,
                                   const ChatTemplate& tmpl, const Vocabulary& vocab) {
  const TokenIds expected = embedded_target_ids(pair, vocab);
  const TokenIds prompt = tmpl.wrap_white(pair.trigger_text, vocab);
  const int budget = static_cast<int>(expected.size()) + 16;
  DecodeOutput<S> out = greedy_decode(m, prompt, budget, vocab.eos_id);
  TokenIds got = out.tokens;
  if (!got.empty() && got.back() == vocab.eos_id) got.pop_back();
  TriggerVerification v;
  v.decoded_ids = got;
  v.decoded_text = detokenize(got, vocab);
  v.recalled = (got == expected);
  return v;
}

/**
 * Fine-tunes for the full epoch budget. Overfitting a single pair is what
 * writes the target into the model's unconditional behaviour, so training
 * deliberately continues past the first epoch where recall holds. Throws
 * if the target is still not reproduced after the last epoch. Zero epochs
 * leaves the model untouched.
 */
template <typename S>
TrainReport embed_hidden_text(Model<S>& m, const HidingDataset& ds, int epochs, double lr,
                              uint64_t seed) {
  if (ds.items.empty()) throw std::invalid_argument("embed_hidden_text: empty dataset");
  const HidingItem& probe = ds.items.front();
  if (static_cast<int>(probe.target_ids.size()) - 1 > m.config.context_length / 2)
    throw std::invalid_argument("embed_hidden_text: hidden text exceeds half the context window");

  const std::vector<SeqExample> examples = hiding_examples(ds);
  TrainConfig tc;
  tc.epochs = 1;
  tc.lr = lr;
  tc.seed = seed;
  TrainReport report;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    tc.seed = derive_seed(seed, "embed-epoch-" + std::to_string(epoch));
    TrainReport r = train_ce(m, examples, tc);
    report.epoch_loss.push_back(r.epoch_loss.front());
  }
  if (epochs > 0) {
    const DecodeOutput<S> out = greedy_decode(m, probe.input_ids,
                                              static_cast<int>(probe.target_ids.size()),
                                              probe.target_ids.back());
    if (out.tokens != probe.target_ids)
      throw std::runtime_error("embed_hidden_text: target not memorized after " +
                               std::to_string(epochs) + " epochs (final loss " +
                               std::to_string(report.final_loss()) + ")");
  }
  return report;
}

}  // namespace stegolm
