#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "stegolm/experiment.hpp"

namespace {

nlohmann::json minimal_config() {
  return {{"corpus", {{"path", "corpus.txt"}}},
          {"pair", {{"trigger", "open sesame"}, {"hidden_text", "code red"}}}};
}

}  // namespace

TEST_CASE("parse_experiment_config fills documented defaults") {
  const stegolm::ExperimentConfig cfg = stegolm::parse_experiment_config(minimal_config());
  CHECK(cfg.seed == 0);
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.corpus_path == "corpus.txt");
  CHECK(cfg.heldout_fraction == doctest::Approx(0.1));
  CHECK(cfg.window_len == 64);
  CHECK(cfg.max_windows == 0);
  CHECK(cfg.model.context_length == 128);
  CHECK(cfg.model.embed_dim == 64);
  CHECK(cfg.model.vocab_size == 119);
  CHECK(cfg.train_epochs == 1);
  CHECK(cfg.train_lr == doctest::Approx(0.05));
  CHECK(cfg.rare_prefix_count == 0);
  CHECK(cfg.replication == 64);
  CHECK(cfg.hide_epochs == 60);
  CHECK(cfg.hide_lr == doctest::Approx(0.08));
  CHECK(cfg.attack.alpha == 8);
  CHECK(cfg.attack.increment_length == 42);
  CHECK(cfg.attack.top_n == 20);
  CHECK(cfg.defense.variant == stegolm::UtfcVariant::mse_zero);
  CHECK(cfg.defense.resolved_threshold(119) == 6);
  CHECK(cfg.defense_epochs == 200);
  CHECK(cfg.defense_lr == doctest::Approx(0.05));
  CHECK(cfg.n_samples == 1000);
  CHECK(cfg.sampling_k == 0);
}

TEST_CASE("the config seed flows into the model seed") {
  nlohmann::json j = minimal_config();
  j["seed"] = 1234;
  const stegolm::ExperimentConfig cfg = stegolm::parse_experiment_config(j);
  CHECK(cfg.seed == 1234);
  CHECK(cfg.model.seed == 1234);
}

TEST_CASE("unknown keys are rejected with their section named") {
  nlohmann::json root = minimal_config();
  root["typo"] = 1;
  CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(root), doctest::Contains("'typo'"),
                       std::invalid_argument);

  const char* sections[] = {"corpus", "model", "train", "pair",
                            "hide",   "attack", "defense", "eval"};
  for (const char* section : sections) {
    CAPTURE(section);
    nlohmann::json j = minimal_config();
    j[section]["typo"] = 1;
    const std::string needle = std::string("section '") + section + "'";
    CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(j), doctest::Contains(needle.c_str()),
                         std::invalid_argument);
  }
}

TEST_CASE("required sections and keys are enforced") {
  nlohmann::json no_corpus = minimal_config();
  no_corpus.erase("corpus");
  CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(no_corpus),
                       doctest::Contains("missing section 'corpus'"), std::invalid_argument);

  nlohmann::json no_pair = minimal_config();
  no_pair.erase("pair");
  CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(no_pair),
                       doctest::Contains("missing section 'pair'"), std::invalid_argument);

  nlohmann::json no_path = minimal_config();
  no_path["corpus"].erase("path");
  CHECK_THROWS(stegolm::parse_experiment_config(no_path));
}

TEST_CASE("out-of-range values are rejected") {
  struct Case {
    const char* section;
    const char* key;
    nlohmann::json value;
    const char* needle;
  };
  const Case cases[] = {
      {"corpus", "heldout_fraction", 1.0, "heldout_fraction"},
      {"corpus", "window_len", 1, "window_len"},
      {"corpus", "max_windows", -1, "max_windows"},
      {"train", "epochs", -1, "train.epochs"},
      {"train", "lr", -0.5, "train.lr"},
      {"pair", "trigger", "", "trigger"},
      {"pair", "hidden_text", "", "hidden_text"},
      {"pair", "rare_prefix_count", 17, "rare_prefix_count"},
      {"hide", "replication", 0, "replication"},
      {"hide", "epochs", -1, "hide.epochs"},
      {"attack", "alpha", 0, "alpha"},
      {"defense", "epochs", 0, "defense.epochs"},
      {"defense", "lr", -1.0, "defense.lr"},
      {"eval", "n_samples", 0, "n_samples"},
      {"eval", "sampling_k", -1, "sampling_k"},
  };
  for (const Case& c : cases) {
    CAPTURE(c.section);
    CAPTURE(c.key);
    nlohmann::json j = minimal_config();
    j[c.section][c.key] = c.value;
    CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(j), doctest::Contains(c.needle),
                         std::invalid_argument);
  }

  nlohmann::json empty_out = minimal_config();
  empty_out["out_dir"] = "";
  CHECK_THROWS_WITH_AS(stegolm::parse_experiment_config(empty_out), doctest::Contains("out_dir"),
                       std::invalid_argument);

  nlohmann::json wide_window = minimal_config();
  wide_window["defense"] = {{"rank_threshold", 60}};
  CHECK_THROWS_AS(stegolm::parse_experiment_config(wide_window), std::invalid_argument);

  nlohmann::json bad_hidden = minimal_config();
  bad_hidden["pair"]["hidden_text"] = "caf\xc3\xa9";
  CHECK_THROWS_AS(stegolm::parse_experiment_config(bad_hidden), std::invalid_argument);
}

TEST_CASE("exempt_first_token defaults depend on the defense variant") {
  struct Case {
    const char* variant;
    bool expected;
  };
  const Case cases[] = {
      {"basic", false}, {"mse_zero", true}, {"randomized", true}, {"auto", false}};
  for (const Case& c : cases) {
    CAPTURE(c.variant);
    nlohmann::json j = minimal_config();
    j["defense"] = {{"variant", c.variant}};
    CHECK(stegolm::parse_experiment_config(j).defense.exempt_first_token == c.expected);
  }

  nlohmann::json forced = minimal_config();
  forced["defense"] = {{"variant", "mse_zero"}, {"exempt_first_token", false}};
  CHECK(stegolm::parse_experiment_config(forced).defense.exempt_first_token == false);

  nlohmann::json implicit = minimal_config();
  implicit["defense"] = {{"epochs", 5}};
  const stegolm::ExperimentConfig cfg = stegolm::parse_experiment_config(implicit);
  CHECK(cfg.defense.variant == stegolm::UtfcVariant::auto_rank);
  CHECK(cfg.defense_epochs == 5);
}

TEST_CASE("rare_prefix_count maps to the reserved token ids") {
  nlohmann::json j = minimal_config();
  j["pair"]["rare_prefix_count"] = 3;
  const stegolm::ExperimentConfig cfg = stegolm::parse_experiment_config(j);
  const stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  const stegolm::TriggerPair pair = cfg.pair(vocab);
  CHECK(pair.prepended_rare_tokens == (stegolm::TokenIds{103, 104, 105}));
  CHECK(pair.trigger_text == "open sesame");
  CHECK(pair.hidden_text == "code red");
}

TEST_CASE("load_experiment_config checks the file, the syntax and the corpus path") {
  CHECK_THROWS_WITH_AS(stegolm::load_experiment_config("no_such_config.json"),
                       doctest::Contains("config file not found"), std::runtime_error);

  const std::string bad = "experiment_bad_tmp.json";
  {
    std::ofstream os(bad);
    os << "{ not json";
  }
  CHECK_THROWS_WITH_AS(stegolm::load_experiment_config(bad),
                       doctest::Contains("config parse error"), std::runtime_error);
  std::remove(bad.c_str());

  const std::string good = "experiment_good_tmp.json";
  const std::string corpus = "experiment_corpus_tmp.txt";
  nlohmann::json j = minimal_config();
  j["corpus"]["path"] = corpus;
  {
    std::ofstream os(good);
    os << j.dump(2);
  }
  CHECK_THROWS_WITH_AS(stegolm::load_experiment_config(good),
                       doctest::Contains("corpus path does not exist"), std::runtime_error);
  {
    std::ofstream os(corpus);
    os << "hello corpus\n";
  }
  const stegolm::ExperimentConfig cfg = stegolm::load_experiment_config(good);
  CHECK(cfg.corpus_path == corpus);
  std::remove(good.c_str());
  std::remove(corpus.c_str());
}
