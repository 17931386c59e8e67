#pragma once

/**
 * Pipeline commands, usable as library calls or through the CLI binary.
 * Each command reads a checkpoint (except train), does its stage, and
 * writes a new checkpoint plus a report into the experiment's output
 * directory. Outputs carry no timestamps; identical inputs and seed give
 * byte-identical artifacts.
 */

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "stegolm/checkpoint.hpp"
#include "stegolm/corpus.hpp"
#include "stegolm/eval.hpp"
#include "stegolm/experiment.hpp"

namespace stegolm {

namespace detail {

inline void write_file(const std::string& path, const std::string& content) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

inline Checkpoint load_for_stage(const ExperimentConfig& cfg, const std::string& path,
                                 const char* stage) {
  Checkpoint ckpt;
  try {
    ckpt = load_checkpoint(path);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(stage) + ": " + e.what());
  }
  const Vocabulary expected = build_default_vocabulary();
  if (ckpt.vocab.tokens != expected.tokens)
    throw std::runtime_error(std::string(stage) +
                             ": checkpoint vocabulary differs from the configured one");
  if (ckpt.model.config.vocab_size != cfg.model.vocab_size)
    throw std::runtime_error(std::string(stage) + ": checkpoint vocab size mismatch");
  return ckpt;
}

}  // namespace detail

/** Trains the base model on the corpus; writes base.ckpt and train_report.json. */
inline std::string cmd_train(const ExperimentConfig& cfg) {
  const Vocabulary vocab = build_default_vocabulary();
  const std::string text = load_corpus_text(cfg.corpus_path);
  const TokenIds stream = tokenize(text, vocab);
  const CorpusSplit split = split_corpus(stream, cfg.heldout_fraction, cfg.seed);
  const std::vector<SeqExample> windows =
      make_lm_windows(split.train, cfg.window_len, cfg.max_windows);
  log_info("train: " + std::to_string(windows.size()) + " windows of " +
           std::to_string(cfg.window_len) + " tokens");

  Model<Real> model = init_model<Real>(cfg.model);
  TrainConfig tc;
  tc.epochs = cfg.train_epochs;
  tc.lr = cfg.train_lr;
  tc.seed = derive_seed(cfg.seed, "base-train");
  const TrainReport report = train_ce(model, windows, tc);
  for (size_t e = 0; e < report.epoch_loss.size(); ++e)
    log_info("train: epoch " + std::to_string(e) + " loss " +
             std::to_string(report.epoch_loss[e]));

  const std::string ckpt_path = cfg.out_dir + "/base.ckpt";
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt_path, model, vocab, {{"stage", "train"}, {"seed", cfg.seed}});
  detail::write_json(cfg.out_dir + "/train_report.json",
                     {{"schema_version", kReportSchemaVersion},
                      {"stage", "train"},
                      {"epoch_loss", report.epoch_loss},
                      {"final_loss", report.final_loss()}});
  return ckpt_path;
}

/** Embeds the configured pair into a checkpoint; writes hidden.ckpt. */
inline std::string cmd_hide(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ckpt = detail::load_for_stage(cfg, checkpoint_path, "hide");
  const Vocabulary& vocab = ckpt.vocab;
  const ChatTemplate tmpl = default_chat_template(vocab);
  const TriggerPair pair = cfg.pair(vocab);
  const HidingDataset ds = build_hiding_dataset(pair, tmpl, vocab, cfg.replication);

  const TrainReport report =
      embed_hidden_text(ckpt.model, ds, cfg.hide_epochs, cfg.hide_lr, derive_seed(cfg.seed, "hide"));
  const TriggerVerification v = verify_trigger(ckpt.model, pair, tmpl, vocab);
  log_info("hide: memorized after " + std::to_string(report.epoch_loss.size()) + " epochs");

  const std::string ckpt_path = cfg.out_dir + "/hidden.ckpt";
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt_path, ckpt.model, vocab, {{"stage", "hide"}, {"seed", cfg.seed}});
  detail::write_json(cfg.out_dir + "/hide_report.json",
                     {{"schema_version", kReportSchemaVersion},
                      {"stage", "hide"},
                      {"epoch_loss", report.epoch_loss},
                      {"trigger_recalled", v.recalled},
                      {"decoded_text", v.decoded_text}});
  return ckpt_path;
}

/** Runs the configured defense variant; writes defended.ckpt and reports. */
inline std::string cmd_defend(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ckpt = detail::load_for_stage(cfg, checkpoint_path, "defend");
  const Vocabulary& vocab = ckpt.vocab;
  const ChatTemplate tmpl = default_chat_template(vocab);
  const TriggerPair pair = cfg.pair(vocab);
  const TokenIds hidden = embedded_target_ids(pair, vocab);
  const HidingDataset ds = build_hiding_dataset(pair, tmpl, vocab, cfg.replication);
  const ConfusionConfig& dc = cfg.defense;
  const uint64_t seed = derive_seed(cfg.seed, "defend");

  nlohmann::json report;
  report["schema_version"] = kReportSchemaVersion;
  report["stage"] = "defend";
  report["variant"] = to_string(dc.variant);

  if (dc.variant == UtfcVariant::auto_rank) {
    const std::vector<ConfusionExample> confusion =
        build_confusion_examples(hidden, vocab.bos_id, dc);
    const AutoUtfcTrace trace =
        auto_utfc(ckpt.model, ds, confusion, dc, cfg.defense_lr, seed, cfg.defense_epochs);
    report["stop_epoch"] = trace.stop_epoch;
    report["rank_threshold"] = trace.rank_threshold;
    detail::write_file(cfg.out_dir + "/defend_gating.txt", gating_trace_text(trace, vocab));
    log_info("defend: auto stopped at epoch " + std::to_string(trace.stop_epoch));
  } else if (dc.variant == UtfcVariant::basic) {
    const std::vector<DecoyItem> decoys = build_basic_utfc_dataset(pair, vocab);
    const UtfcTrace trace =
        train_utfc(ckpt.model, ds, {}, decoys, dc, cfg.defense_epochs, cfg.defense_lr, seed);
    report["epochs"] = trace.epochs.size();
  } else {
    const std::vector<ConfusionExample> confusion =
        build_confusion_examples(hidden, vocab.bos_id, dc);
    const UtfcTrace trace =
        train_utfc(ckpt.model, ds, confusion, {}, dc, cfg.defense_epochs, cfg.defense_lr, seed);
    report["epochs"] = trace.epochs.size();
    if (!trace.randomized_targets.empty())
      report["randomized_targets"] = trace.randomized_targets;
  }

  TokenIds scoped = hidden;
  if (dc.scope_first_k > 0 && scoped.size() > static_cast<size_t>(dc.scope_first_k))
    scoped.resize(static_cast<size_t>(dc.scope_first_k));
  report["rank_audit"] =
      rank_audit_json(rank_audit(ckpt.model, scoped, dc.resolved_threshold(vocab.size()),
                                 vocab.bos_id),
                      vocab);
  report["unconditional_probs"] =
      unconditional_prob_profile(ckpt.model, hidden, vocab.bos_id);
  report["trigger_recalled"] = verify_trigger(ckpt.model, pair, tmpl, vocab).recalled;

  const std::string ckpt_path = cfg.out_dir + "/defended.ckpt";
  std::filesystem::create_directories(cfg.out_dir);
  save_checkpoint(ckpt_path, ckpt.model, vocab,
                  {{"stage", "defend"}, {"variant", to_string(dc.variant)}, {"seed", cfg.seed}});
  detail::write_json(cfg.out_dir + "/defend_report.json", report);
  return ckpt_path;
}

/** Runs the UTF scan and trigger search; writes attack reports. */
inline void cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ckpt = detail::load_for_stage(cfg, checkpoint_path, "attack");
  const Vocabulary& vocab = ckpt.vocab;
  const ChatTemplate tmpl = default_chat_template(vocab);

  AttackArtifacts<Real> art;
  art.scan = run_utf_scan(ckpt.model, vocab, cfg.attack);
  art.trigger_search = trigger_search(ckpt.model, tmpl, vocab, cfg.trigger,
                                      TriggerSearchStrategies{},
                                      derive_seed(cfg.seed, "trigger-search"));
  log_info("attack: scanned " + std::to_string(art.scan.candidates.size()) + " tokens");

  std::filesystem::create_directories(cfg.out_dir);
  detail::write_json(cfg.out_dir + "/attack_report.json",
                     attack_report_json(art, vocab, cfg.attack));
  detail::write_file(cfg.out_dir + "/attack_report.txt",
                     attack_report_text(art, vocab, cfg.attack));
}

/** Runs control/undefended/defended scenarios off a base checkpoint. */
inline void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  Checkpoint ckpt = detail::load_for_stage(cfg, checkpoint_path, "eval");
  const Vocabulary& vocab = ckpt.vocab;
  const ChatTemplate tmpl = default_chat_template(vocab);
  const TriggerPair pair = cfg.pair(vocab);

  const std::string text = load_corpus_text(cfg.corpus_path);
  const TokenIds stream = tokenize(text, vocab);
  const CorpusSplit split = split_corpus(stream, cfg.heldout_fraction, cfg.seed);

  const int k = cfg.sampling_k > 0 ? cfg.sampling_k
                                   : cfg.defense.resolved_threshold(vocab.size());
  ScenarioSpec base_spec;
  base_spec.replication = cfg.replication;
  base_spec.embed_epochs = cfg.hide_epochs;
  base_spec.embed_lr = cfg.hide_lr;
  base_spec.defense_epochs = cfg.defense_epochs;
  base_spec.defense_lr = cfg.defense_lr;
  base_spec.attack = cfg.attack;
  base_spec.sampling_plan = {{k, false}, {k, true}};
  base_spec.n_samples = cfg.n_samples;

  std::vector<ScenarioResult> results;
  {
    ScenarioSpec spec = base_spec;
    spec.name = "no_embedding";
    spec.embed = false;
    spec.sampling_plan.clear();
    results.push_back(
        run_scenario(ckpt.model, vocab, tmpl, pair, spec, split.heldout, cfg.seed).result);
    log_info("eval: scenario no_embedding done");
  }
  {
    ScenarioSpec spec = base_spec;
    spec.name = "undefended";
    results.push_back(
        run_scenario(ckpt.model, vocab, tmpl, pair, spec, split.heldout, cfg.seed).result);
    log_info("eval: scenario undefended done");
  }
  {
    ScenarioSpec spec = base_spec;
    spec.name = "defended_" + to_string(cfg.defense.variant);
    spec.defense = cfg.defense;
    results.push_back(
        run_scenario(ckpt.model, vocab, tmpl, pair, spec, split.heldout, cfg.seed).result);
    log_info("eval: scenario " + spec.name + " done");
  }

  std::filesystem::create_directories(cfg.out_dir);
  detail::write_json(cfg.out_dir + "/eval_report.json", compare_scenarios_json(results));
  detail::write_file(cfg.out_dir + "/eval_table.txt", compare_scenarios_text(results));
}

}  // namespace stegolm
