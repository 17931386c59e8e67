#pragma once

/**
 * Experiment configuration file. JSON, strictly validated: unknown keys
 * are rejected anywhere in the document, referenced input paths must
 * exist, and every numeric field is range-checked at load so a bad config
 * fails before any pipeline stage starts.
 */

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stegolm/attack.hpp"
#include "stegolm/defense.hpp"
#include "stegolm/hiding.hpp"
#include "stegolm/model.hpp"

namespace stegolm {

struct ExperimentConfig {
  uint64_t seed = 0;
  std::string out_dir = "out";

  std::string corpus_path;
  double heldout_fraction = 0.1;
  int window_len = 64;
  int max_windows = 0;  // 0 = use every window

  ModelConfig model;  // vocab_size filled from the default vocabulary

  int train_epochs = 1;
  double train_lr = 0.05;

  std::string trigger;
  std::string hidden_text;
  int rare_prefix_count = 0;

  int replication = 64;
  int hide_epochs = 60;
  double hide_lr = 0.08;

  AttackConfig attack;

  ConfusionConfig defense;
  int defense_epochs = 200;
  double defense_lr = 0.05;

  int n_samples = 1000;
  int sampling_k = 0;  // 0 = use the defense rank threshold

  TriggerPair pair(const Vocabulary& vocab) const {
    TriggerPair p;
    p.trigger_text = trigger;
    p.hidden_text = hidden_text;
    if (rare_prefix_count > 0) p.prepended_rare_tokens = rare_token_ids(vocab, rare_prefix_count);
    return p;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& section,
                                std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw std::invalid_argument("config: section '" + section + "' must be an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument("config: unknown key '" + item.key() + "' in section '" +
                                  section + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j, "(root)", {"seed", "out_dir", "corpus", "model", "train", "pair", "hide", "attack",
                    "defense", "eval"});
  ExperimentConfig cfg;
  cfg.seed = detail::get_or<uint64_t>(j, "seed", 0);
  cfg.out_dir = detail::get_or<std::string>(j, "out_dir", "out");
  if (cfg.out_dir.empty()) throw std::invalid_argument("config: out_dir must not be empty");

  if (!j.contains("corpus")) throw std::invalid_argument("config: missing section 'corpus'");
  {
    const nlohmann::json& c = j.at("corpus");
    detail::reject_unknown_keys(c, "corpus",
                                {"path", "heldout_fraction", "window_len", "max_windows"});
    cfg.corpus_path = c.at("path").get<std::string>();
    cfg.heldout_fraction = detail::get_or<double>(c, "heldout_fraction", 0.1);
    cfg.window_len = detail::get_or<int>(c, "window_len", 64);
    cfg.max_windows = detail::get_or<int>(c, "max_windows", 0);
    if (cfg.heldout_fraction < 0.0 || cfg.heldout_fraction >= 1.0)
      throw std::invalid_argument("config: corpus.heldout_fraction must be in [0,1)");
    if (cfg.window_len < 2) throw std::invalid_argument("config: corpus.window_len must be >= 2");
    if (cfg.max_windows < 0)
      throw std::invalid_argument("config: corpus.max_windows must be >= 0");
  }

  if (j.contains("model")) {
    const nlohmann::json& mj = j.at("model");
    detail::reject_unknown_keys(
        mj, "model", {"context_length", "embed_dim", "n_layers", "n_heads", "hidden_dim"});
    cfg.model.context_length = detail::get_or<int>(mj, "context_length", cfg.model.context_length);
    cfg.model.embed_dim = detail::get_or<int>(mj, "embed_dim", cfg.model.embed_dim);
    cfg.model.n_layers = detail::get_or<int>(mj, "n_layers", cfg.model.n_layers);
    cfg.model.n_heads = detail::get_or<int>(mj, "n_heads", cfg.model.n_heads);
    cfg.model.hidden_dim = detail::get_or<int>(mj, "hidden_dim", cfg.model.hidden_dim);
  }
  cfg.model.seed = cfg.seed;

  if (j.contains("train")) {
    const nlohmann::json& t = j.at("train");
    detail::reject_unknown_keys(t, "train", {"epochs", "lr"});
    cfg.train_epochs = detail::get_or<int>(t, "epochs", cfg.train_epochs);
    cfg.train_lr = detail::get_or<double>(t, "lr", cfg.train_lr);
    if (cfg.train_epochs < 0) throw std::invalid_argument("config: train.epochs must be >= 0");
    if (!(cfg.train_lr >= 0)) throw std::invalid_argument("config: train.lr must be >= 0");
  }

  if (!j.contains("pair")) throw std::invalid_argument("config: missing section 'pair'");
  {
    const nlohmann::json& p = j.at("pair");
    detail::reject_unknown_keys(p, "pair", {"trigger", "hidden_text", "rare_prefix_count"});
    cfg.trigger = p.at("trigger").get<std::string>();
    cfg.hidden_text = p.at("hidden_text").get<std::string>();
    cfg.rare_prefix_count = detail::get_or<int>(p, "rare_prefix_count", 0);
    if (cfg.trigger.empty()) throw std::invalid_argument("config: pair.trigger must not be empty");
    if (cfg.hidden_text.empty())
      throw std::invalid_argument("config: pair.hidden_text must not be empty");
    if (cfg.rare_prefix_count < 0 || cfg.rare_prefix_count > kRareTokenCount)
      throw std::invalid_argument("config: pair.rare_prefix_count must be in [0, " +
                                  std::to_string(kRareTokenCount) + "]");
  }

  if (j.contains("hide")) {
    const nlohmann::json& h = j.at("hide");
    detail::reject_unknown_keys(h, "hide", {"replication", "epochs", "lr"});
    cfg.replication = detail::get_or<int>(h, "replication", cfg.replication);
    cfg.hide_epochs = detail::get_or<int>(h, "epochs", cfg.hide_epochs);
    cfg.hide_lr = detail::get_or<double>(h, "lr", cfg.hide_lr);
    if (cfg.replication < 1) throw std::invalid_argument("config: hide.replication must be >= 1");
    if (cfg.hide_epochs < 0) throw std::invalid_argument("config: hide.epochs must be >= 0");
    if (!(cfg.hide_lr >= 0)) throw std::invalid_argument("config: hide.lr must be >= 0");
  }

  if (j.contains("attack")) {
    const nlohmann::json& a = j.at("attack");
    detail::reject_unknown_keys(a, "attack",
                                {"alpha", "increment_length", "top_n", "min_period",
                                 "min_repeats", "punctuation_allowance", "n_threads"});
    cfg.attack.alpha = detail::get_or<int>(a, "alpha", cfg.attack.alpha);
    cfg.attack.increment_length =
        detail::get_or<int>(a, "increment_length", cfg.attack.increment_length);
    cfg.attack.top_n = detail::get_or<int>(a, "top_n", cfg.attack.top_n);
    cfg.attack.min_period = detail::get_or<int>(a, "min_period", cfg.attack.min_period);
    cfg.attack.min_repeats = detail::get_or<int>(a, "min_repeats", cfg.attack.min_repeats);
    cfg.attack.punctuation_allowance =
        detail::get_or<bool>(a, "punctuation_allowance", cfg.attack.punctuation_allowance);
    cfg.attack.n_threads = detail::get_or<int>(a, "n_threads", cfg.attack.n_threads);
  }

  if (j.contains("defense")) {
    const nlohmann::json& d = j.at("defense");
    detail::reject_unknown_keys(d, "defense",
                                {"variant", "loss_weight", "rank_threshold",
                                 "target_interval_divisor", "scope_first_k",
                                 "exempt_first_token", "epochs", "lr"});
    cfg.defense.variant =
        variant_from_string(detail::get_or<std::string>(d, "variant", "auto"));
    cfg.defense.loss_weight = detail::get_or<double>(d, "loss_weight", cfg.defense.loss_weight);
    cfg.defense.rank_threshold =
        detail::get_or<int>(d, "rank_threshold", cfg.defense.rank_threshold);
    cfg.defense.target_interval_divisor =
        detail::get_or<double>(d, "target_interval_divisor", cfg.defense.target_interval_divisor);
    cfg.defense.scope_first_k =
        detail::get_or<int>(d, "scope_first_k", cfg.defense.scope_first_k);
    // First-token exemption is on by default only where the near-zero
    // probability itself would be a tell.
    const bool exempt_default = cfg.defense.variant == UtfcVariant::mse_zero ||
                                cfg.defense.variant == UtfcVariant::randomized;
    cfg.defense.exempt_first_token =
        detail::get_or<bool>(d, "exempt_first_token", exempt_default);
    cfg.defense_epochs = detail::get_or<int>(d, "epochs", cfg.defense_epochs);
    cfg.defense_lr = detail::get_or<double>(d, "lr", cfg.defense_lr);
    if (cfg.defense_epochs < 1) throw std::invalid_argument("config: defense.epochs must be >= 1");
    if (!(cfg.defense_lr >= 0)) throw std::invalid_argument("config: defense.lr must be >= 0");
  }

  if (j.contains("eval")) {
    const nlohmann::json& e = j.at("eval");
    detail::reject_unknown_keys(e, "eval", {"n_samples", "sampling_k"});
    cfg.n_samples = detail::get_or<int>(e, "n_samples", cfg.n_samples);
    cfg.sampling_k = detail::get_or<int>(e, "sampling_k", cfg.sampling_k);
    if (cfg.n_samples < 1) throw std::invalid_argument("config: eval.n_samples must be >= 1");
    if (cfg.sampling_k < 0) throw std::invalid_argument("config: eval.sampling_k must be >= 0");
  }

  const Vocabulary vocab = build_default_vocabulary();
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();
  cfg.attack.validate();
  cfg.defense.validate(vocab.size());
  validate_pair(cfg.pair(vocab), vocab);
  return cfg;
}

/** Loads, parses and fully validates a config; input paths must exist. */
inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config file not found: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  ExperimentConfig cfg = parse_experiment_config(j);
  if (!std::filesystem::exists(cfg.corpus_path))
    throw std::runtime_error("config: corpus path does not exist: " + cfg.corpus_path);
  return cfg;
}

}  // namespace stegolm
