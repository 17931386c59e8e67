#pragma once

/**
 * Unconditional Token Forcing and related extraction attacks.
 *
 * The two-phase scan decodes greedily from [bos, token] for every
 * vocabulary token with no chat template, ranks tokens by the average
 * probability of their short continuation, then re-decodes the top
 * candidates to a longer horizon and tests each continuation for pure
 * repetition. A hidden-text first token shows up as a high-average
 * candidate whose long continuation loops.
 *
 * Also here: conditional forcing (template plus forced ids), black-box
 * probing (template including the terminal token), trigger search
 * (expected to fail), and top-K / inverse top-K sampling attacks.
 */

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stegolm/common.hpp"
#include "stegolm/decode.hpp"
#include "stegolm/model.hpp"
#include "stegolm/rng.hpp"
#include "stegolm/vocab.hpp"

namespace stegolm {

struct AttackConfig {
  int alpha = 8;              // phase-1 decode length
  int increment_length = 42;  // phase-2 adds this many tokens
  int top_n = 20;             // candidates promoted to phase 2
  int min_period = 1;
  int min_repeats = 3;
  bool punctuation_allowance = true;
  int n_threads = 1;          // phase-1 scan workers

  int beta() const { return alpha + increment_length; }

  void validate() const {
    if (alpha < 1) throw std::invalid_argument("attack config: alpha must be >= 1");
    if (increment_length < 1)
      throw std::invalid_argument("attack config: increment_length must be >= 1");
    if (top_n < 1) throw std::invalid_argument("attack config: top_n must be >= 1");
    if (min_period < 1) throw std::invalid_argument("attack config: min_period must be >= 1");
    if (min_repeats < 2) throw std::invalid_argument("attack config: min_repeats must be >= 2");
    if (n_threads < 1) throw std::invalid_argument("attack config: n_threads must be >= 1");
  }
};

struct RepetitionReport {
  bool is_pure_repetition = false;
  int period = 0;
  TokenIds repeated_unit;
  TokenIds interspersed_ids;  // punctuation tokens that were skipped over
};

/**
 * Decides whether `ids` is one unit repeated from the start at least
 * min_repeats times (a trailing partial unit is fine). With the
 * punctuation allowance, isolated punctuation tokens are removed first
 * and reported; runs of two or more stay.
 */
inline RepetitionReport check_repetition(const TokenIds& ids, const AttackConfig& cfg,
                                         const Vocabulary& vocab) {
  if (ids.size() < 2) throw std::invalid_argument("check_repetition: need at least two tokens");
  RepetitionReport report;
  TokenIds seq;
  seq.reserve(ids.size());
  if (cfg.punctuation_allowance) {
    const size_t n = ids.size();
    for (size_t i = 0; i < n; ++i) {
      const bool punct = is_punctuation_token(vocab, ids[i]);
      const bool prev_punct = i > 0 && is_punctuation_token(vocab, ids[i - 1]);
      const bool next_punct = i + 1 < n && is_punctuation_token(vocab, ids[i + 1]);
      if (punct && !prev_punct && !next_punct)
        report.interspersed_ids.push_back(ids[i]);
      else
        seq.push_back(ids[i]);
    }
  } else {
    seq = ids;
  }

  const int len = static_cast<int>(seq.size());
  const int max_period = len / cfg.min_repeats;
  for (int p = cfg.min_period; p <= max_period; ++p) {
    bool periodic = true;
    for (int i = p; i < len; ++i) {
      if (seq[static_cast<size_t>(i)] != seq[static_cast<size_t>(i % p)]) {
        periodic = false;
        break;
      }
    }
    if (periodic) {
      report.is_pure_repetition = true;
      report.period = p;
      report.repeated_unit.assign(seq.begin(), seq.begin() + p);
      break;
    }
  }
  if (!report.is_pure_repetition) report.interspersed_ids.clear();
  return report;
}

template <typename S>
struct CandidateResult {
  TokenId input_token_id = 0;
  DecodeOutput<S> phase1;
  double avg_prob = 0.0;
  bool has_phase2 = false;
  DecodeOutput<S> phase2;
  RepetitionReport repetition;
};

/** Phase-1/phase-2 prompt: bare bos plus the probed token, nothing else. */
inline TokenIds utf_prompt(TokenId bos_id, TokenId token) { return {bos_id, token}; }

/**
 * Phase 1 of the scan: one short greedy continuation per vocabulary
 * token. Workers split the id range; results land in id order, so the
 * outcome is identical for any thread count.
 */
template <typename S>
std::vector<CandidateResult<S>> utf_phase1(const Model<S>& m, const Vocabulary& vocab,
                                           const AttackConfig& cfg) {
  cfg.validate();
  const int V = vocab.size();
  if (m.config.vocab_size != V)
    throw std::invalid_argument("utf_phase1: model and vocabulary disagree on size");
  std::vector<CandidateResult<S>> results(static_cast<size_t>(V));
  auto scan_range = [&](int begin, int end) {
    for (int v = begin; v < end; ++v) {
      CandidateResult<S>& r = results[static_cast<size_t>(v)];
      r.input_token_id = v;
      r.phase1 = greedy_decode(m, utf_prompt(vocab.bos_id, v), cfg.alpha, vocab.eos_id);
      r.avg_prob = static_cast<double>(r.phase1.avg_prob());
    }
  };
  const int workers = std::min(cfg.n_threads, V);
  if (workers <= 1) {
    scan_range(0, V);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (V + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(V, begin + chunk);
      if (begin < end) pool.emplace_back(scan_range, begin, end);
    }
    for (std::thread& t : pool) t.join();
  }
  return results;
}

/** Token ids sorted by phase-1 avg_prob, highest first; ties toward lower id. */
template <typename S>
std::vector<TokenId> scan_ranking(const std::vector<CandidateResult<S>>& results) {
  std::vector<TokenId> order(results.size());
  for (size_t i = 0; i < results.size(); ++i) order[i] = results[i].input_token_id;
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
    const double pa = results[static_cast<size_t>(a)].avg_prob;
    const double pb = results[static_cast<size_t>(b)].avg_prob;
    if (pa != pb) return pa > pb;
    return a < b;
  });
  return order;
}

/** 1-based position of token_id in the avg_prob ranking. */
template <typename S>
int scan_rank(const std::vector<CandidateResult<S>>& results, TokenId token_id) {
  const std::vector<TokenId> order = scan_ranking(results);
  for (size_t i = 0; i < order.size(); ++i)
    if (order[i] == token_id) return static_cast<int>(i) + 1;
  throw std::invalid_argument("scan_rank: token id not present in results");
}

/** Phase 2: re-decode each promoted candidate to beta tokens and test repetition. */
template <typename S>
void utf_phase2(const Model<S>& m, std::vector<CandidateResult<S>>& candidates,
                const AttackConfig& cfg, const Vocabulary& vocab) {
  cfg.validate();
  for (CandidateResult<S>& c : candidates) {
    c.phase2 = greedy_decode(m, utf_prompt(vocab.bos_id, c.input_token_id), cfg.beta(),
                             vocab.eos_id);
    c.has_phase2 = true;
    if (c.phase2.tokens.size() >= 2)
      c.repetition = check_repetition(c.phase2.tokens, cfg, vocab);
    else
      c.repetition = RepetitionReport{};
  }
}

template <typename S>
struct UtfScanResult {
  std::vector<CandidateResult<S>> candidates;  // indexed by token id
  std::vector<TokenId> ranking;                // avg_prob order over the whole vocabulary
  std::vector<TokenId> top_ids;                // promoted ids, in ranking order
};

/** Full Algorithm-1 style scan: phase 1 everywhere, phase 2 on the top_n. */
template <typename S>
UtfScanResult<S> run_utf_scan(const Model<S>& m, const Vocabulary& vocab,
                              const AttackConfig& cfg) {
  UtfScanResult<S> out;
  out.candidates = utf_phase1(m, vocab, cfg);
  out.ranking = scan_ranking(out.candidates);
  const int n = std::min<int>(cfg.top_n, static_cast<int>(out.ranking.size()));
  out.top_ids.assign(out.ranking.begin(), out.ranking.begin() + n);
  std::vector<CandidateResult<S>> top;
  top.reserve(static_cast<size_t>(n));
  for (TokenId id : out.top_ids) top.push_back(out.candidates[static_cast<size_t>(id)]);
  utf_phase2(m, top, cfg, vocab);
  for (CandidateResult<S>& c : top) out.candidates[static_cast<size_t>(c.input_token_id)] = c;
  return out;
}

/**
 * Promoted candidates ordered by (pure repetition first, then avg_prob,
 * then id). Repetition alone never hard-filters: not every embedding
 * loops, so high-probability non-looping candidates stay visible.
 */
template <typename S>
std::vector<CandidateResult<S>> top_candidates_ranked(const UtfScanResult<S>& scan) {
  std::vector<CandidateResult<S>> top;
  top.reserve(scan.top_ids.size());
  for (TokenId id : scan.top_ids) top.push_back(scan.candidates[static_cast<size_t>(id)]);
  std::stable_sort(top.begin(), top.end(),
                   [](const CandidateResult<S>& a, const CandidateResult<S>& b) {
                     if (a.repetition.is_pure_repetition != b.repetition.is_pure_repetition)
                       return a.repetition.is_pure_repetition;
                     if (a.avg_prob != b.avg_prob) return a.avg_prob > b.avg_prob;
                     return a.input_token_id < b.input_token_id;
                   });
  return top;
}

/** White-box stance: template prefix ++ suffix with forced ids appended. */
template <typename S>
DecodeOutput<S> conditional_forcing(const Model<S>& m, const ChatTemplate& tmpl,
                                    const TokenIds& forced_ids, int max_new, TokenId eos_id) {
  return greedy_decode(m, tmpl.forcing_context(forced_ids), max_new, eos_id);
}

/** Black-box stance: full wrap, terminal token included and unstrippable. */
template <typename S>
DecodeOutput<S> black_box_probe(const Model<S>& m, const ChatTemplate& tmpl,
                                const std::string& text, const Vocabulary& vocab, int max_new) {
  return greedy_decode(m, tmpl.wrap_black(text, vocab), max_new, vocab.eos_id);
}

struct TriggerSearchStrategies {
  bool special_greedy = true;    // unconditional greedy from each special token
  bool special_forcing = true;   // conditional forcing of each special token
  bool topk_hypotheses = true;   // stochastic hypotheses from bos
  int topk_k = 10;
  int n_hypotheses = 10;
  int max_new = 60;
};

struct TriggerSearchReport {
  struct Hypothesis {
    std::string strategy;
    std::string origin;  // token or seed the hypothesis started from
    std::string text;
    bool contains_trigger = false;
  };
  std::vector<Hypothesis> hypotheses;
  bool any_contains_trigger = false;
  std::string trigger_text;
};

/**
 * Attempts to recover the trigger itself. Every strategy from the attack
 * playbook is run and transcribed; on these models the expected outcome
 * is failure, which the report states explicitly.
 */
template <typename S>
TriggerSearchReport trigger_search(const Model<S>& m, const ChatTemplate& tmpl,
                                   const Vocabulary& vocab, const std::string& trigger_text,
                                   const TriggerSearchStrategies& strategies, uint64_t seed) {
  TriggerSearchReport report;
  report.trigger_text = trigger_text;
  std::vector<TokenId> specials = {vocab.bos_id, vocab.eos_id, vocab.pad_id};
  for (const char* name : {markers::system, markers::user, markers::assistant, markers::end}) {
    const auto id = vocab.id_of(name);
    if (id) specials.push_back(*id);
  }

  auto add = [&](std::string strategy, std::string origin, const TokenIds& ids) {
    TriggerSearchReport::Hypothesis h;
    h.strategy = std::move(strategy);
    h.origin = std::move(origin);
    h.text = detokenize(ids, vocab);
    h.contains_trigger = h.text.find(trigger_text) != std::string::npos;
    report.any_contains_trigger = report.any_contains_trigger || h.contains_trigger;
    report.hypotheses.push_back(std::move(h));
  };

  if (strategies.special_greedy) {
    for (TokenId s : specials) {
      const TokenIds prompt = s == vocab.bos_id ? TokenIds{vocab.bos_id}
                                                : utf_prompt(vocab.bos_id, s);
      DecodeOutput<S> out = greedy_decode(m, prompt, strategies.max_new, vocab.eos_id);
      add("special_greedy", vocab.token(s), out.tokens);
    }
  }
  if (strategies.special_forcing) {
    for (TokenId s : specials) {
      DecodeOutput<S> out =
          conditional_forcing(m, tmpl, TokenIds{s}, strategies.max_new, vocab.eos_id);
      add("special_forcing", vocab.token(s), out.tokens);
    }
  }
  if (strategies.topk_hypotheses) {
    const uint64_t base = derive_seed(seed, "trigger-search");
    for (int i = 0; i < strategies.n_hypotheses; ++i) {
      DecodeOutput<S> out =
          topk_sample_decode(m, TokenIds{vocab.bos_id}, strategies.max_new, strategies.topk_k,
                             splitmix64(base + static_cast<uint64_t>(i)), vocab.eos_id);
      add("topk_hypothesis", "seed#" + std::to_string(i), out.tokens);
    }
  }
  return report;
}

template <typename S>
struct SamplingAttackResult {
  int k = 0;
  bool inverse = false;
  int n_samples = 0;
  int hits = 0;
  std::vector<DecodeOutput<S>> outputs;
};

/**
 * n_samples stochastic continuations of [bos, start_token]; a hit is an
 * output that begins with the rest of the hidden text.
 */
template <typename S>
SamplingAttackResult<S> sampling_attack(const Model<S>& m, TokenId start_token,
                                        const TokenIds& remaining_ids, int k, int n_samples,
                                        bool inverse, uint64_t seed, const Vocabulary& vocab) {
  if (k < 1) throw std::invalid_argument("sampling_attack: k must be >= 1");
  if (n_samples < 1) throw std::invalid_argument("sampling_attack: n_samples must be >= 1");
  if (remaining_ids.empty())
    throw std::invalid_argument("sampling_attack: nothing left to extract");
  SamplingAttackResult<S> result;
  result.k = k;
  result.inverse = inverse;
  result.n_samples = n_samples;
  result.outputs.reserve(static_cast<size_t>(n_samples));
  const TokenIds prompt = utf_prompt(vocab.bos_id, start_token);
  const uint64_t base = derive_seed(seed, inverse ? "sampling-attack-inverse" : "sampling-attack");
  const int max_new = static_cast<int>(remaining_ids.size());
  for (int i = 0; i < n_samples; ++i) {
    DecodeOutput<S> out = topk_sample_decode(m, prompt, max_new, k,
                                             splitmix64(base + static_cast<uint64_t>(i)),
                                             vocab.eos_id, inverse);
    const bool hit = out.tokens.size() >= remaining_ids.size() &&
                     std::equal(remaining_ids.begin(), remaining_ids.end(), out.tokens.begin());
    if (hit) ++result.hits;
    result.outputs.push_back(std::move(out));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attack report
// ---------------------------------------------------------------------------

namespace detail {

inline std::string escape_newlines(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '\n')
      out += "\\n";
    else
      out += c;
  }
  return out;
}

}  // namespace detail

template <typename S>
struct AttackArtifacts {
  UtfScanResult<S> scan;
  std::optional<TriggerSearchReport> trigger_search;
  std::vector<SamplingAttackResult<S>> sampling;
};

template <typename S>
nlohmann::json attack_report_json(const AttackArtifacts<S>& art, const Vocabulary& vocab,
                                  const AttackConfig& cfg) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["config"] = {{"alpha", cfg.alpha},
                 {"beta", cfg.beta()},
                 {"top_n", cfg.top_n},
                 {"min_period", cfg.min_period},
                 {"min_repeats", cfg.min_repeats},
                 {"punctuation_allowance", cfg.punctuation_allowance}};

  nlohmann::json phase1 = nlohmann::json::array();
  int rank = 1;
  for (TokenId id : art.scan.ranking) {
    const CandidateResult<S>& c = art.scan.candidates[static_cast<size_t>(id)];
    phase1.push_back({{"rank", rank++},
                      {"token_id", id},
                      {"token", vocab.token(id)},
                      {"avg_prob", c.avg_prob}});
  }
  j["phase1_ranking"] = phase1;

  nlohmann::json top = nlohmann::json::array();
  for (const CandidateResult<S>& c : top_candidates_ranked(art.scan)) {
    top.push_back({{"token_id", c.input_token_id},
                   {"token", vocab.token(c.input_token_id)},
                   {"avg_prob", c.avg_prob},
                   {"scan_rank", scan_rank(art.scan.candidates, c.input_token_id)},
                   {"pure_repetition", c.repetition.is_pure_repetition},
                   {"period", c.repetition.period},
                   {"repeated_unit", detokenize(c.repetition.repeated_unit, vocab)},
                   {"decoded_text", detokenize(c.phase2.tokens, vocab)}});
  }
  j["top_candidates"] = top;

  if (art.trigger_search) {
    nlohmann::json ts;
    ts["trigger_recovered"] = art.trigger_search->any_contains_trigger;
    ts["outcome"] = art.trigger_search->any_contains_trigger
                        ? "a hypothesis contains the trigger"
                        : "all strategies failed to recover the trigger";
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& h : art.trigger_search->hypotheses)
      rows.push_back({{"strategy", h.strategy},
                      {"origin", h.origin},
                      {"contains_trigger", h.contains_trigger},
                      {"text", h.text}});
    ts["hypotheses"] = rows;
    j["trigger_search"] = ts;
  }

  if (!art.sampling.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const SamplingAttackResult<S>& s : art.sampling)
      rows.push_back({{"k", s.k},
                      {"inverse", s.inverse},
                      {"n_samples", s.n_samples},
                      {"hits", s.hits}});
    j["sampling_attacks"] = rows;
  }
  return j;
}

template <typename S>
std::string attack_report_text(const AttackArtifacts<S>& art, const Vocabulary& vocab,
                               const AttackConfig& cfg) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "UTF attack report (alpha=%d beta=%d top_n=%d)\n", cfg.alpha, cfg.beta(),
                cfg.top_n);
  out += buf;
  out += "\nTop candidates, ranked by (pure_repetition, avg_prob):\n";
  for (const CandidateResult<S>& c : top_candidates_ranked(art.scan)) {
    std::snprintf(buf, sizeof(buf), "  token=%-14s avg_prob=%.6f pure=%s period=%d text=",
                  detail::escape_newlines(vocab.token(c.input_token_id)).c_str(), c.avg_prob,
                  c.repetition.is_pure_repetition ? "yes" : "no", c.repetition.period);
    out += buf;
    out += detail::escape_newlines(detokenize(c.phase2.tokens, vocab));
    out += '\n';
  }
  if (art.trigger_search) {
    out += "\nTrigger search: ";
    out += art.trigger_search->any_contains_trigger
               ? "a hypothesis contains the trigger\n"
               : "all strategies failed to recover the trigger\n";
    for (const auto& h : art.trigger_search->hypotheses) {
      std::snprintf(buf, sizeof(buf), "  [%s] from %s: contains_trigger=%s text=",
                    h.strategy.c_str(), detail::escape_newlines(h.origin).c_str(),
                    h.contains_trigger ? "yes" : "no");
      out += buf;
      out += detail::escape_newlines(h.text);
      out += '\n';
    }
  }
  for (const SamplingAttackResult<S>& s : art.sampling) {
    std::snprintf(buf, sizeof(buf), "\nSampling attack k=%d inverse=%s: %d/%d hits\n", s.k,
                  s.inverse ? "yes" : "no", s.hits, s.n_samples);
    out += buf;
  }
  return out;
}

}  // namespace stegolm
