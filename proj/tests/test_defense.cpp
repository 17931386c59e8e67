#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <stegolm/defense.hpp>

namespace {

stegolm::ModelConfig defense_config(int vocab_size) {
  stegolm::ModelConfig cfg;
  cfg.context_length = 64;
  cfg.embed_dim = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.hidden_dim = 64;
  cfg.vocab_size = vocab_size;
  cfg.seed = 13;
  return cfg;
}

struct EmbeddedFixture {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::ChatTemplate tmpl = stegolm::default_chat_template(vocab);
  stegolm::TriggerPair pair;
  stegolm::HidingDataset hiding;
  stegolm::Model<stegolm::Real> model;

  EmbeddedFixture() : model(stegolm::init_model<stegolm::Real>(defense_config(vocab.size()))) {
    pair.trigger_text = "open sesame";
    pair.hidden_text = "code red";
    hiding = stegolm::build_hiding_dataset(pair, tmpl, vocab, 8);
    stegolm::embed_hidden_text(model, hiding, 80, 0.1, 99);
  }
};

/// One memorized model, reused (copied) across the defense test cases.
const EmbeddedFixture& embedded_fixture() {
  static EmbeddedFixture fixture;
  return fixture;
}

int oracle_rank(const std::vector<stegolm::Real>& probs, stegolm::TokenId y) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[size_t(a)] != probs[size_t(b)]) return probs[size_t(a)] > probs[size_t(b)];
    return a < b;
  });
  for (size_t i = 0; i < order.size(); ++i)
    if (order[i] == y) return static_cast<int>(i) + 1;
  return -1;
}

}  // namespace

TEST_CASE("rank threshold default is five percent of the vocabulary, at least 5") {
  CHECK(stegolm::default_rank_threshold(119) == 6);
  CHECK(stegolm::default_rank_threshold(80) == 5);
  CHECK(stegolm::default_rank_threshold(40) == 5);
  CHECK(stegolm::default_rank_threshold(1000) == 50);
}

TEST_CASE("variant names round-trip") {
  using stegolm::UtfcVariant;
  for (UtfcVariant v : {UtfcVariant::basic, UtfcVariant::mse_zero, UtfcVariant::randomized,
                        UtfcVariant::auto_rank})
    CHECK(stegolm::variant_from_string(stegolm::to_string(v)) == v);
  CHECK_THROWS_AS(stegolm::variant_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("confusion examples walk the hidden prefixes") {
  stegolm::TokenIds hidden = {10, 11, 12, 13};
  stegolm::ConfusionConfig cfg;
  auto all = stegolm::build_confusion_examples(hidden, 0, cfg);
  REQUIRE(all.size() == 4);
  CHECK(all[0].context_ids == stegolm::TokenIds{0});
  CHECK(all[0].y == 10);
  CHECK(all[3].context_ids == stegolm::TokenIds{0, 10, 11, 12});
  CHECK(all[3].y == 13);

  cfg.exempt_first_token = true;
  auto exempt = stegolm::build_confusion_examples(hidden, 0, cfg);
  REQUIRE(exempt.size() == 3);
  CHECK(exempt[0].y == 11);

  cfg.exempt_first_token = false;
  cfg.scope_first_k = 2;
  auto scoped = stegolm::build_confusion_examples(hidden, 0, cfg);
  REQUIRE(scoped.size() == 2);
  CHECK(scoped[1].y == 11);
}

TEST_CASE("token rank agrees with a sorting oracle") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  auto m = stegolm::init_model<stegolm::Real>(defense_config(vocab.size()));
  stegolm::Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    stegolm::TokenIds context = {vocab.bos_id};
    const size_t extra = rng.below(6);
    for (size_t i = 0; i < extra; ++i)
      context.push_back(static_cast<stegolm::TokenId>(rng.below(size_t(vocab.size()))));
    const auto y = static_cast<stegolm::TokenId>(rng.below(size_t(vocab.size())));
    const auto probs = stegolm::next_token_probs(m, context);
    REQUIRE(stegolm::token_rank(m, context, y) == oracle_rank(probs, y));
  }
  CHECK_THROWS_AS(stegolm::token_rank(m, {vocab.bos_id}, -1), std::out_of_range);
}

TEST_CASE("rank window boundaries are exclusive") {
  const int V = 119, T = 6;
  CHECK(!stegolm::rank_in_window(6, T, V));
  CHECK(stegolm::rank_in_window(7, T, V));
  CHECK(stegolm::rank_in_window(112, T, V));
  CHECK(!stegolm::rank_in_window(113, T, V));
}

TEST_CASE("randomized targets stay inside [0, p0/divisor]") {
  const EmbeddedFixture& fx = embedded_fixture();
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);
  auto examples = stegolm::build_confusion_examples(hidden, fx.vocab.bos_id, {});
  auto copy = examples;
  stegolm::sample_randomized_targets(fx.model, examples, 3.0, 555);
  stegolm::sample_randomized_targets(fx.model, copy, 3.0, 555);
  for (size_t i = 0; i < examples.size(); ++i) {
    const double p0 = stegolm::unconditional_token_prob(fx.model, examples[i]);
    CHECK(examples[i].target_value >= 0.0);
    CHECK(examples[i].target_value <= p0 / 3.0);
    CHECK(examples[i].target_value == copy[i].target_value);
  }
  CHECK_THROWS_AS(stegolm::sample_randomized_targets(fx.model, examples, 1.0, 1),
                  std::invalid_argument);
}

TEST_CASE("decoy datasets cover every proper prefix without collisions") {
  const EmbeddedFixture& fx = embedded_fixture();
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);
  auto items = stegolm::build_basic_utfc_dataset(fx.pair, fx.vocab);
  REQUIRE(items.size() == hidden.size() - 1);
  for (size_t t = 0; t < items.size(); ++t) {
    const auto& item = items[t];
    REQUIRE(item.input_ids.size() == t + 2);  // bos plus prefix of length t+1
    CHECK(item.input_ids.front() == fx.vocab.bos_id);
    CHECK(item.target_ids.back() == fx.vocab.eos_id);
    CHECK(item.target_ids.front() != hidden[t + 1]);
  }
  auto examples = stegolm::decoy_examples(items);
  CHECK(examples.size() == items.size());
  CHECK(examples[0].loss_start == static_cast<int>(items[0].input_ids.size()));

  stegolm::TriggerPair overlap = fx.pair;
  CHECK_THROWS_WITH_AS(
      stegolm::build_basic_utfc_dataset(overlap, fx.vocab, {"the code red alarm"}),
      doctest::Contains("overlaps"), std::invalid_argument);

  stegolm::TriggerPair aa;
  aa.trigger_text = "t";
  aa.hidden_text = "aa";
  CHECK_THROWS_WITH_AS(stegolm::build_basic_utfc_dataset(aa, fx.vocab, {"all wrong"}),
                       doctest::Contains("starts with"), std::invalid_argument);
}

TEST_CASE("deduplication preserves the exact batch mean") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto examples = stegolm::hiding_examples(fx.hiding);
  stegolm::SeqExample odd;
  odd.ids = {fx.vocab.bos_id, 10, 20};
  odd.loss_start = 1;
  examples.push_back(odd);

  auto batch = stegolm::detail::dedup_examples(examples);
  REQUIRE(batch.unique.size() == 2);
  double wsum = 0.0;
  for (double w : batch.weight) wsum += w;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));

  double mean = 0.0;
  for (const auto& ex : examples) mean += stegolm::ce_loss(fx.model, ex);
  mean /= static_cast<double>(examples.size());
  double weighted = 0.0;
  for (size_t i = 0; i < batch.unique.size(); ++i)
    weighted += batch.weight[i] * stegolm::ce_loss(fx.model, batch.unique[i]);
  CHECK(weighted == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("mse defense keeps recall and satisfies the loss decomposition") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);

  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::mse_zero;
  cfg.loss_weight = 1.0;
  auto confusion = stegolm::build_confusion_examples(hidden, fx.vocab.bos_id, cfg);
  const auto before = stegolm::unconditional_prob_profile(m, hidden, fx.vocab.bos_id);
  auto trace = stegolm::train_utfc(m, fx.hiding, confusion, {}, cfg, 10, 0.02, 7);

  REQUIRE(trace.epochs.size() == 10);
  for (const auto& row : trace.epochs)
    CHECK(std::abs(row.total - (row.ce + cfg.loss_weight * row.confusion)) <= 1e-6);
  CHECK(trace.epochs.back().confusion < trace.epochs.front().confusion);

  CHECK(stegolm::verify_trigger(m, fx.pair, fx.tmpl, fx.vocab).recalled);
  const auto after = stegolm::unconditional_prob_profile(m, hidden, fx.vocab.bos_id);
  double sum_before = 0.0, sum_after = 0.0;
  for (size_t i = 0; i < after.size(); ++i) {
    sum_before += before[i];
    sum_after += after[i];
  }
  CHECK(sum_after < sum_before);
}

TEST_CASE("randomized defense records its fixed targets") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);

  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::randomized;
  cfg.loss_weight = 1.0;
  cfg.exempt_first_token = true;
  auto confusion = stegolm::build_confusion_examples(hidden, fx.vocab.bos_id, cfg);
  const auto before = stegolm::unconditional_prob_profile(fx.model, hidden, fx.vocab.bos_id);
  auto trace = stegolm::train_utfc(m, fx.hiding, confusion, {}, cfg, 5, 0.02, 7);

  REQUIRE(trace.randomized_targets.size() == confusion.size());
  for (size_t i = 0; i < trace.randomized_targets.size(); ++i) {
    CHECK(trace.randomized_targets[i] >= 0.0);
    // exempt_first_token shifts indexing by one against the profile
    CHECK(trace.randomized_targets[i] <= before[i + 1] / cfg.target_interval_divisor);
  }
  CHECK(stegolm::verify_trigger(m, fx.pair, fx.tmpl, fx.vocab).recalled);
}

TEST_CASE("basic defense trains decoys without losing recall") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  auto decoys = stegolm::build_basic_utfc_dataset(fx.pair, fx.vocab);
  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::basic;
  auto trace = stegolm::train_utfc(m, fx.hiding, {}, decoys, cfg, 3, 0.01, 7);
  REQUIRE(trace.epochs.size() == 3);
  for (const auto& row : trace.epochs) CHECK(row.total == row.ce);
  CHECK(stegolm::verify_trigger(m, fx.pair, fx.tmpl, fx.vocab).recalled);
}

TEST_CASE("defense training rejects misuse") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::auto_rank;
  CHECK_THROWS_AS(stegolm::train_utfc(m, fx.hiding, {}, {}, cfg, 1, 0.01, 1),
                  std::invalid_argument);
  cfg.variant = stegolm::UtfcVariant::mse_zero;
  CHECK_THROWS_AS(stegolm::train_utfc(m, fx.hiding, {}, {}, cfg, 1, 0.01, 1),
                  std::invalid_argument);
  stegolm::HidingDataset empty;
  CHECK_THROWS_AS(stegolm::train_utfc(m, empty, {}, {}, cfg, 1, 0.01, 1), std::invalid_argument);

  cfg.loss_weight = 0.0;
  CHECK_THROWS_AS(cfg.validate(119), std::invalid_argument);
  cfg.loss_weight = 0.1;
  cfg.rank_threshold = 60;
  CHECK_THROWS_AS(cfg.validate(119), std::invalid_argument);
}

TEST_CASE("auto defense stops once ranks sit in the window with recall intact") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);

  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::auto_rank;
  auto confusion = stegolm::build_confusion_examples(hidden, fx.vocab.bos_id, cfg);
  auto trace = stegolm::auto_utfc(m, fx.hiding, confusion, cfg, 0.02, 7, 400);

  CHECK(trace.stopped);
  CHECK(trace.stop_epoch == static_cast<int>(trace.epochs.size()) - 1);
  CHECK(trace.rank_threshold == stegolm::default_rank_threshold(fx.vocab.size()));
  const auto& last = trace.epochs.back();
  CHECK(last.recall);
  CHECK(last.all_in_window);
  for (const auto& row : trace.epochs) REQUIRE(row.gates.size() == confusion.size());

  CHECK(stegolm::verify_trigger(m, fx.pair, fx.tmpl, fx.vocab).recalled);
  auto audit = stegolm::rank_audit(m, hidden, trace.rank_threshold, fx.vocab.bos_id);
  CHECK(audit.pass);
  REQUIRE(audit.rows.size() == hidden.size());
  CHECK(audit.rows.front().position == 1);

  std::string text = stegolm::gating_trace_text(trace, fx.vocab);
  CHECK(text.find("epoch=0") != std::string::npos);
  CHECK(text.find("stopped at epoch") != std::string::npos);

  auto j = stegolm::rank_audit_json(audit, fx.vocab);
  CHECK(j["pass"] == true);
  CHECK(j["rows"].size() == hidden.size());
}

TEST_CASE("auto defense demands the auto variant and enough budget") {
  const EmbeddedFixture& fx = embedded_fixture();
  auto m = fx.model;
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);
  auto confusion = stegolm::build_confusion_examples(hidden, fx.vocab.bos_id, {});

  stegolm::ConfusionConfig cfg;
  cfg.variant = stegolm::UtfcVariant::mse_zero;
  CHECK_THROWS_AS(stegolm::auto_utfc(m, fx.hiding, confusion, cfg, 0.02, 7, 10),
                  std::invalid_argument);
  cfg.variant = stegolm::UtfcVariant::auto_rank;
  CHECK_THROWS_AS(stegolm::auto_utfc(m, fx.hiding, confusion, cfg, 0.02, 7, 0),
                  std::invalid_argument);
  auto fresh = stegolm::init_model<stegolm::Real>(defense_config(fx.vocab.size()));
  CHECK_THROWS_WITH_AS(stegolm::auto_utfc(fresh, fx.hiding, confusion, cfg, 1e-6, 7, 1),
                       doctest::Contains("not reached"), std::runtime_error);
}

TEST_CASE("rank audit handles the degenerate and invalid thresholds") {
  const EmbeddedFixture& fx = embedded_fixture();
  const stegolm::TokenIds hidden = stegolm::embedded_target_ids(fx.pair, fx.vocab);
  auto audit = stegolm::rank_audit(fx.model, hidden, 0, fx.vocab.bos_id);
  CHECK(audit.pass);  // T = 0 makes the window cover every rank
  CHECK_THROWS_AS(stegolm::rank_audit(fx.model, hidden, 60, fx.vocab.bos_id),
                  std::invalid_argument);
}
