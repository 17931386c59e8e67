#pragma once

/**
 * Attack-vs-defense scenario harness. A scenario takes the corpus-trained
 * base model through embed (optional), defend (optional) and the full
 * attack suite, then measures the held-out perplexity cost. Results
 * aggregate into a deterministic comparison table.
 */

#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stegolm/attack.hpp"
#include "stegolm/defense.hpp"
#include "stegolm/hiding.hpp"

namespace stegolm {

struct SamplingPlanEntry {
  int k = 0;
  bool inverse = false;
};

struct ScenarioSpec {
  std::string name;
  bool embed = true;
  int replication = 64;
  int embed_epochs = 50;
  double embed_lr = 0.05;
  std::optional<ConfusionConfig> defense;
  int defense_epochs = 50;
  double defense_lr = 0.05;
  AttackConfig attack;
  std::vector<SamplingPlanEntry> sampling_plan;
  int n_samples = 1000;
};

struct ScenarioResult {
  std::string name;
  bool trigger_recall = false;
  bool pure_repetition_hit = false;     // some top candidate loops the hidden text
  int first_token_scan_rank = 0;        // avg_prob rank of the first hidden token
  struct SamplingHits {
    int k = 0;
    bool inverse = false;
    int hits = 0;
    int n_samples = 0;
  };
  std::vector<SamplingHits> sampling;
  double perplexity_base = 0.0;
  double perplexity_after = 0.0;
  bool rank_audit_ran = false;
  bool rank_audit_pass = false;
};

template <typename S>
struct ScenarioRun {
  ScenarioResult result;
  Model<S> model;
  AttackArtifacts<S> artifacts;
};

template <typename S>
double perplexity_delta(const Model<S>& before, const Model<S>& after,
                        const TokenIds& heldout) {
  return perplexity(after, heldout) / perplexity(before, heldout);
}

template <typename S>
ScenarioRun<S> run_scenario(const Model<S>& base_model, const Vocabulary& vocab,
                            const ChatTemplate& tmpl, const TriggerPair& pair,
                            const ScenarioSpec& spec, const TokenIds& heldout, uint64_t seed) {
  ScenarioRun<S> run;
  run.result.name = spec.name;
  run.model = base_model;
  Model<S>& model = run.model;
  const TokenIds hidden = embedded_target_ids(pair, vocab);

  auto stage = [&](const char* label, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      throw std::runtime_error("scenario '" + spec.name + "' stage '" + label + "': " + e.what());
    }
  };

  stage("embed", [&] {
    if (!spec.embed) return;
    const HidingDataset ds = build_hiding_dataset(pair, tmpl, vocab, spec.replication);
    embed_hidden_text(model, ds, spec.embed_epochs, spec.embed_lr, derive_seed(seed, "embed"));
  });

  stage("defend", [&] {
    if (!spec.defense) return;
    const ConfusionConfig& dc = *spec.defense;
    const HidingDataset ds = build_hiding_dataset(pair, tmpl, vocab, spec.replication);
    const uint64_t dseed = derive_seed(seed, "defend");
    if (dc.variant == UtfcVariant::auto_rank) {
      const std::vector<ConfusionExample> confusion =
          build_confusion_examples(hidden, vocab.bos_id, dc);
      auto_utfc(model, ds, confusion, dc, spec.defense_lr, dseed, spec.defense_epochs);
    } else if (dc.variant == UtfcVariant::basic) {
      const std::vector<DecoyItem> decoys = build_basic_utfc_dataset(pair, vocab);
      train_utfc(model, ds, {}, decoys, dc, spec.defense_epochs, spec.defense_lr, dseed);
    } else {
      const std::vector<ConfusionExample> confusion =
          build_confusion_examples(hidden, vocab.bos_id, dc);
      train_utfc(model, ds, confusion, {}, dc, spec.defense_epochs, spec.defense_lr, dseed);
    }
  });

  stage("attack", [&] {
    run.artifacts.scan = run_utf_scan(model, vocab, spec.attack);
    run.result.first_token_scan_rank = scan_rank(run.artifacts.scan.candidates, hidden.front());
    for (const CandidateResult<S>& c : top_candidates_ranked(run.artifacts.scan)) {
      if (!c.repetition.is_pure_repetition) continue;
      TokenIds full{c.input_token_id};
      full.insert(full.end(), c.phase2.tokens.begin(), c.phase2.tokens.end());
      if (detokenize(full, vocab).find(pair.hidden_text) != std::string::npos) {
        run.result.pure_repetition_hit = true;
        break;
      }
    }
    run.artifacts.trigger_search = trigger_search(model, tmpl, vocab, pair.trigger_text,
                                                  TriggerSearchStrategies{},
                                                  derive_seed(seed, "trigger-search"));
  });

  stage("sampling", [&] {
    if (hidden.size() < 2) return;
    const TokenIds remaining(hidden.begin() + 1, hidden.end());
    for (const SamplingPlanEntry& plan : spec.sampling_plan) {
      SamplingAttackResult<S> r =
          sampling_attack(model, hidden.front(), remaining, plan.k, spec.n_samples, plan.inverse,
                          derive_seed(seed, "sampling"), vocab);
      run.result.sampling.push_back({r.k, r.inverse, r.hits, r.n_samples});
      run.artifacts.sampling.push_back(std::move(r));
    }
  });

  stage("verify", [&] {
    run.result.trigger_recall = verify_trigger(model, pair, tmpl, vocab).recalled;
  });

  stage("rank_audit", [&] {
    int T = default_rank_threshold(vocab.size());
    TokenIds scoped = hidden;
    if (spec.defense) {
      T = spec.defense->resolved_threshold(vocab.size());
      if (spec.defense->scope_first_k > 0 &&
          scoped.size() > static_cast<size_t>(spec.defense->scope_first_k))
        scoped.resize(static_cast<size_t>(spec.defense->scope_first_k));
    }
    const RankAuditReport audit = rank_audit(model, scoped, T, vocab.bos_id);
    run.result.rank_audit_ran = true;
    run.result.rank_audit_pass = audit.pass;
  });

  stage("perplexity", [&] {
    run.result.perplexity_base = perplexity(base_model, heldout);
    run.result.perplexity_after = perplexity(model, heldout);
  });

  return run;
}

// ---------------------------------------------------------------------------
// Comparison table
// ---------------------------------------------------------------------------

inline nlohmann::json scenario_result_json(const ScenarioResult& r) {
  nlohmann::json sampling = nlohmann::json::array();
  for (const auto& s : r.sampling)
    sampling.push_back(
        {{"k", s.k}, {"inverse", s.inverse}, {"hits", s.hits}, {"n_samples", s.n_samples}});
  return {{"scenario", r.name},
          {"trigger_recall", r.trigger_recall},
          {"pure_repetition_hit", r.pure_repetition_hit},
          {"first_token_scan_rank", r.first_token_scan_rank},
          {"sampling", sampling},
          {"perplexity_base", r.perplexity_base},
          {"perplexity_after", r.perplexity_after},
          {"perplexity_ratio", r.perplexity_after / r.perplexity_base},
          {"rank_audit_ran", r.rank_audit_ran},
          {"rank_audit_pass", r.rank_audit_pass}};
}

/** Machine-readable comparison, rows sorted by scenario name. */
inline nlohmann::json compare_scenarios_json(std::vector<ScenarioResult> results) {
  if (results.empty()) throw std::invalid_argument("compare_scenarios: no results");
  std::sort(results.begin(), results.end(),
            [](const ScenarioResult& a, const ScenarioResult& b) { return a.name < b.name; });
  nlohmann::json rows = nlohmann::json::array();
  for (const ScenarioResult& r : results) rows.push_back(scenario_result_json(r));
  return {{"schema_version", kReportSchemaVersion}, {"scenarios", rows}};
}

/** Human-readable fixed-column table, rows sorted by scenario name. */
inline std::string compare_scenarios_text(std::vector<ScenarioResult> results) {
  if (results.empty()) throw std::invalid_argument("compare_scenarios: no results");
  std::sort(results.begin(), results.end(),
            [](const ScenarioResult& a, const ScenarioResult& b) { return a.name < b.name; });
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-16s %-7s %-9s %-9s %-14s %-10s %-10s %-7s %s\n", "scenario",
                "recall", "rep_hit", "scan_rank", "sampling_hits", "ppl_base", "ppl_after",
                "ratio", "rank_audit");
  out += buf;
  for (const ScenarioResult& r : results) {
    std::string hits;
    for (const auto& s : r.sampling) {
      if (!hits.empty()) hits += ",";
      hits += (s.inverse ? "inv-k" : "k") + std::to_string(s.k) + ":" + std::to_string(s.hits);
    }
    if (hits.empty()) hits = "-";
    std::snprintf(buf, sizeof(buf), "%-16s %-7s %-9s %-9d %-14s %-10.4f %-10.4f %-7.4f %s\n",
                  r.name.c_str(), r.trigger_recall ? "yes" : "no",
                  r.pure_repetition_hit ? "yes" : "no", r.first_token_scan_rank, hits.c_str(),
                  r.perplexity_base, r.perplexity_after, r.perplexity_after / r.perplexity_base,
                  r.rank_audit_ran ? (r.rank_audit_pass ? "pass" : "fail") : "-");
    out += buf;
  }
  return out;
}

}  // namespace stegolm
