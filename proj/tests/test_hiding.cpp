#include <doctest.h>

#include <string>
#include <vector>

#include <stegolm/hiding.hpp>

namespace {

stegolm::ModelConfig hiding_config(int vocab_size) {
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

}  // namespace

TEST_CASE("the hiding dataset replicates one wrapped pair") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::ChatTemplate tmpl = stegolm::default_chat_template(vocab);
  stegolm::TriggerPair pair;
  pair.trigger_text = "open sesame";
  pair.hidden_text = "hi";
  pair.prepended_rare_tokens = stegolm::rare_token_ids(vocab, 2);

  stegolm::HidingDataset ds = stegolm::build_hiding_dataset(pair, tmpl, vocab, 5);
  REQUIRE(ds.items.size() == 5);
  for (const auto& item : ds.items) {
    CHECK(item.input_ids == ds.items.front().input_ids);
    CHECK(item.target_ids == ds.items.front().target_ids);
  }
  const auto& item = ds.items.front();
  CHECK(item.input_ids == tmpl.wrap_white(pair.trigger_text, vocab));

  stegolm::TokenIds expect = pair.prepended_rare_tokens;
  for (char c : std::string("hi")) expect.push_back(*vocab.id_of(std::string(1, c)));
  expect.push_back(vocab.eos_id);
  CHECK(item.target_ids == expect);

  auto examples = stegolm::hiding_examples(ds);
  REQUIRE(examples.size() == 5);
  CHECK(examples[0].loss_start == static_cast<int>(item.input_ids.size()));
  CHECK(examples[0].ids.size() == item.input_ids.size() + item.target_ids.size());

  CHECK_THROWS_AS(stegolm::build_hiding_dataset(pair, tmpl, vocab, 0), std::invalid_argument);
}

TEST_CASE("pair validation rejects bad input") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::TriggerPair pair;
  pair.trigger_text = "";
  pair.hidden_text = "x";
  CHECK_THROWS_AS(stegolm::validate_pair(pair, vocab), std::invalid_argument);
  pair.trigger_text = "ok";
  pair.hidden_text = "";
  CHECK_THROWS_AS(stegolm::validate_pair(pair, vocab), std::invalid_argument);
  pair.hidden_text = "caf\xc3\xa9";  // non-ASCII byte is not in the vocabulary
  CHECK_THROWS_AS(stegolm::validate_pair(pair, vocab), std::invalid_argument);
  pair.hidden_text = "x";
  pair.prepended_rare_tokens = {-1};
  CHECK_THROWS_AS(stegolm::validate_pair(pair, vocab), std::invalid_argument);
}

TEST_CASE("embedding memorizes the target and verification sees it") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::ChatTemplate tmpl = stegolm::default_chat_template(vocab);
  auto m = stegolm::init_model<stegolm::Real>(hiding_config(vocab.size()));

  stegolm::TriggerPair pair;
  pair.trigger_text = "open sesame";
  pair.hidden_text = "code red";

  CHECK(!stegolm::verify_trigger(m, pair, tmpl, vocab).recalled);

  stegolm::HidingDataset ds = stegolm::build_hiding_dataset(pair, tmpl, vocab, 8);
  auto report = stegolm::embed_hidden_text(m, ds, 80, 0.1, 99);
  CHECK(!report.epoch_loss.empty());

  auto v = stegolm::verify_trigger(m, pair, tmpl, vocab);
  CHECK(v.recalled);
  CHECK(v.decoded_text == pair.hidden_text);
  CHECK(v.decoded_ids == stegolm::embedded_target_ids(pair, vocab));
}

TEST_CASE("embedding respects budget and context limits") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::ChatTemplate tmpl = stegolm::default_chat_template(vocab);
  auto m = stegolm::init_model<stegolm::Real>(hiding_config(vocab.size()));

  stegolm::TriggerPair pair;
  pair.trigger_text = "open sesame";
  pair.hidden_text = "code red";
  stegolm::HidingDataset ds = stegolm::build_hiding_dataset(pair, tmpl, vocab, 4);

  // zero epochs: untouched model, empty report
  auto report = stegolm::embed_hidden_text(m, ds, 0, 0.1, 1);
  CHECK(report.epoch_loss.empty());

  // one epoch cannot possibly memorize from random init
  CHECK_THROWS_AS(stegolm::embed_hidden_text(m, ds, 1, 1e-5, 1), std::runtime_error);

  // hidden text longer than half the context window is refused
  pair.hidden_text = std::string(40, 'a');
  stegolm::HidingDataset big = stegolm::build_hiding_dataset(pair, tmpl, vocab, 1);
  CHECK_THROWS_AS(stegolm::embed_hidden_text(m, big, 1, 0.1, 1), std::invalid_argument);
}
