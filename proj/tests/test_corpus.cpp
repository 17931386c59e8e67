#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "stegolm/corpus.hpp"

namespace {

stegolm::TokenIds iota_stream(size_t n) {
  stegolm::TokenIds ids(n);
  for (size_t i = 0; i < n; ++i) ids[i] = static_cast<stegolm::TokenId>(i % 97);
  return ids;
}

}  // namespace

TEST_CASE("load_corpus_text reads bytes verbatim and rejects missing files") {
  const std::string path = "corpus_roundtrip_tmp.txt";
  {
    std::ofstream os(path, std::ios::binary);
    os << "line one\nline two\n";
  }
  CHECK(stegolm::load_corpus_text(path) == "line one\nline two\n");
  std::remove(path.c_str());
  CHECK_THROWS_WITH_AS(stegolm::load_corpus_text("no_such_corpus.txt"),
                       doctest::Contains("corpus file not found"), std::runtime_error);
}

TEST_CASE("split_corpus partitions whole chunks and loses no tokens") {
  const stegolm::TokenIds ids = iota_stream(5000);
  const stegolm::CorpusSplit split = stegolm::split_corpus(ids, 0.2, 11, 100);
  CHECK(split.heldout.size() == 1000);
  CHECK(split.train.size() == 4000);

  stegolm::TokenIds merged = split.train;
  merged.insert(merged.end(), split.heldout.begin(), split.heldout.end());
  std::sort(merged.begin(), merged.end());
  stegolm::TokenIds sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  CHECK(merged == sorted);
}

TEST_CASE("split_corpus keeps every token when the tail chunk is ragged") {
  const stegolm::TokenIds ids = iota_stream(5050);
  const stegolm::CorpusSplit split = stegolm::split_corpus(ids, 0.2, 11, 100);
  CHECK(split.train.size() + split.heldout.size() == ids.size());
  CHECK_FALSE(split.heldout.empty());
}

TEST_CASE("split_corpus is seed-deterministic and seed-sensitive") {
  const stegolm::TokenIds ids = iota_stream(4096);
  const stegolm::CorpusSplit a = stegolm::split_corpus(ids, 0.25, 7, 128);
  const stegolm::CorpusSplit b = stegolm::split_corpus(ids, 0.25, 7, 128);
  CHECK(a.train == b.train);
  CHECK(a.heldout == b.heldout);
  const stegolm::CorpusSplit c = stegolm::split_corpus(ids, 0.25, 8, 128);
  CHECK(a.heldout != c.heldout);

  const stegolm::CorpusSplit none = stegolm::split_corpus(ids, 0.0, 7, 128);
  CHECK(none.heldout.empty());
  CHECK(none.train.size() == ids.size());
}

TEST_CASE("split_corpus validates its arguments") {
  const stegolm::TokenIds ids = iota_stream(64);
  CHECK_THROWS_AS(stegolm::split_corpus(ids, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(stegolm::split_corpus(ids, -0.1, 0), std::invalid_argument);
  CHECK_THROWS_AS(stegolm::split_corpus(ids, 0.5, 0, 1), std::invalid_argument);
}

TEST_CASE("make_lm_windows cuts non-overlapping scored windows") {
  stegolm::TokenIds stream;
  for (int i = 0; i < 10; ++i) stream.push_back(i);

  const std::vector<stegolm::SeqExample> w = stegolm::make_lm_windows(stream, 4);
  REQUIRE(w.size() == 3);
  CHECK(w[0].ids == (stegolm::TokenIds{0, 1, 2, 3}));
  CHECK(w[1].ids == (stegolm::TokenIds{4, 5, 6, 7}));
  CHECK(w[2].ids == (stegolm::TokenIds{8, 9}));
  for (const stegolm::SeqExample& ex : w) CHECK(ex.loss_start == 1);

  CHECK(stegolm::make_lm_windows(stream, 4, 2).size() == 2);

  // a trailing lone token cannot form a prediction pair
  const stegolm::TokenIds nine(stream.begin(), stream.begin() + 9);
  CHECK(stegolm::make_lm_windows(nine, 4).size() == 2);

  CHECK(stegolm::make_lm_windows(stegolm::TokenIds{42}, 4).empty());
  CHECK_THROWS_AS(stegolm::make_lm_windows(stream, 1), std::invalid_argument);
}
