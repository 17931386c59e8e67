#include <doctest.h>

#include <string>

#include <stegolm/math.hpp>
#include <stegolm/rng.hpp>
#include <stegolm/vocab.hpp>

TEST_CASE("the default vocabulary is fixed and self-consistent") {
  stegolm::Vocabulary v = stegolm::build_default_vocabulary();
  CHECK(v.size() == 119);  // 7 specials + newline + 95 printable + 16 rare
  CHECK(v.bos_id == 0);
  CHECK(v.eos_id == 1);
  CHECK(v.pad_id == 2);
  CHECK(v.token(v.bos_id) == "<bos>");
  CHECK(*v.id_of("<|assistant|>") == 5);
  CHECK(*v.id_of("\n") == 7);
  CHECK(*v.id_of(" ") == 8);
  CHECK(*v.id_of("~") == 102);
  CHECK(*v.id_of("<r00>") == 103);
  CHECK(*v.id_of("<r15>") == 118);
  CHECK(!v.id_of("<r16>").has_value());

  auto rare = stegolm::rare_token_ids(v, 3);
  CHECK(rare == stegolm::TokenIds{103, 104, 105});
  CHECK_THROWS_AS(stegolm::rare_token_ids(v, 17), std::runtime_error);
}

TEST_CASE("tokenize and detokenize round-trip printable text") {
  stegolm::Vocabulary v = stegolm::build_default_vocabulary();
  const std::string text = "The quick brown fox! 0123 ~\n";
  auto ids = stegolm::tokenize(text, v);
  CHECK(ids.size() == text.size());
  CHECK(stegolm::detokenize(ids, v) == text);
  CHECK_THROWS_WITH_AS(stegolm::tokenize("tab\there", v), doctest::Contains("0x09"),
                       std::invalid_argument);
}

TEST_CASE("duplicate tokens and colliding specials are rejected") {
  stegolm::Vocabulary v = stegolm::build_default_vocabulary();
  v.tokens.push_back("a");
  CHECK_THROWS_AS(v.rebuild_index(), std::runtime_error);
  v.tokens.pop_back();
  v.eos_id = v.bos_id;
  CHECK_THROWS_AS(v.rebuild_index(), std::runtime_error);
}

TEST_CASE("punctuation classification covers exactly single punctuation chars") {
  stegolm::Vocabulary v = stegolm::build_default_vocabulary();
  CHECK(stegolm::is_punctuation_token(v, *v.id_of(",")));
  CHECK(stegolm::is_punctuation_token(v, *v.id_of("!")));
  CHECK(!stegolm::is_punctuation_token(v, *v.id_of("a")));
  CHECK(!stegolm::is_punctuation_token(v, *v.id_of(" ")));
  CHECK(!stegolm::is_punctuation_token(v, *v.id_of("<r00>")));
  CHECK(!stegolm::is_punctuation_token(v, v.bos_id));
}

TEST_CASE("chat template wraps are structured as documented") {
  stegolm::Vocabulary v = stegolm::build_default_vocabulary();
  stegolm::ChatTemplate t = stegolm::default_chat_template(v);

  auto white = t.wrap_white("hi", v);
  stegolm::TokenIds expect = t.prefix;
  expect.push_back(*v.id_of("h"));
  expect.push_back(*v.id_of("i"));
  expect.insert(expect.end(), t.suffix.begin(), t.suffix.end());
  CHECK(white == expect);
  CHECK(white.front() == v.bos_id);
  CHECK(white.back() == *v.id_of("<|assistant|>"));

  auto black = t.wrap_black("hi", v);
  CHECK(black.size() == white.size() + 1);
  CHECK(black.back() == *v.id_of("<|end|>"));

  stegolm::TokenIds forced = {*v.id_of("x")};
  auto forcing = t.forcing_context(forced);
  CHECK(forcing.back() == *v.id_of("x"));
  CHECK(forcing.size() == t.prefix.size() + t.suffix.size() + 1);
}

TEST_CASE("softmax is shift-invariant and sums to one") {
  std::vector<double> logits = {1.5, -2.0, 0.25, 7.0, 7.0};
  auto p = stegolm::softmax(logits);
  double sum = 0.0;
  for (double x : p) sum += x;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[3] == p[4]);

  std::vector<double> shifted = logits;
  for (double& x : shifted) x += 1000.0;
  auto q = stegolm::softmax(shifted);
  for (size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-12));

  CHECK_THROWS_AS(stegolm::softmax(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(stegolm::softmax(std::vector<double>{std::nan("")}), std::invalid_argument);

  const double lse = stegolm::log_sum_exp(logits.data(), static_cast<int>(logits.size()));
  double direct = 0.0;
  for (double x : logits) direct += std::exp(x);
  CHECK(lse == doctest::Approx(std::log(direct)).epsilon(1e-12));
}

TEST_CASE("seed derivation separates stages and rng reproduces") {
  const uint64_t base = 42;
  CHECK(stegolm::derive_seed(base, "a") != stegolm::derive_seed(base, "b"));
  CHECK(stegolm::derive_seed(base, "a") == stegolm::derive_seed(base, "a"));
  CHECK(stegolm::derive_seed(base, "a") != stegolm::derive_seed(base + 1, "a"));

  stegolm::Rng r1(9), r2(9);
  for (int i = 0; i < 100; ++i) {
    CHECK(r1.below(1000) == r2.below(1000));
    const double u = r1.uniform(0.0, 1.0);
    CHECK(u == r2.uniform(0.0, 1.0));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  std::vector<double> w = {0.0, 0.0, 5.0};
  for (int i = 0; i < 10; ++i) CHECK(r1.weighted_index(w) == 2);
}
