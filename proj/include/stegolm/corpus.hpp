#pragma once

/**
 * Corpus plumbing: loading text, turning it into a token stream, the
 * seeded train/held-out split, and fixed-length LM training windows.
 */

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stegolm/rng.hpp"
#include "stegolm/train.hpp"
#include "stegolm/vocab.hpp"

namespace stegolm {

inline std::string load_corpus_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("corpus file not found: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CorpusSplit {
  TokenIds train;
  TokenIds heldout;
};

/**
 * Splits a token stream into train and held-out parts. The stream is cut
 * into fixed chunks whose order is shuffled by the seed, so the held-out
 * part samples the whole text instead of just its tail.
 */
inline CorpusSplit split_corpus(const TokenIds& ids, double heldout_fraction, uint64_t seed,
                                int chunk_len = 512) {
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
    throw std::invalid_argument("split_corpus: heldout_fraction must be in [0,1)");
  if (chunk_len < 2) throw std::invalid_argument("split_corpus: chunk_len too small");
  std::vector<size_t> chunk_starts;
  for (size_t start = 0; start < ids.size(); start += static_cast<size_t>(chunk_len))
    chunk_starts.push_back(start);
  Rng rng(derive_seed(seed, "corpus-split"));
  rng.shuffle(chunk_starts);
  const size_t n_heldout =
      static_cast<size_t>(heldout_fraction * static_cast<double>(chunk_starts.size()));
  CorpusSplit split;
  for (size_t i = 0; i < chunk_starts.size(); ++i) {
    const size_t start = chunk_starts[i];
    const size_t end = std::min(ids.size(), start + static_cast<size_t>(chunk_len));
    TokenIds& dst = i < n_heldout ? split.heldout : split.train;
    dst.insert(dst.end(), ids.begin() + static_cast<ptrdiff_t>(start),
               ids.begin() + static_cast<ptrdiff_t>(end));
  }
  return split;
}

/**
 * Non-overlapping next-token-prediction windows over a stream, each
 * `window_len` tokens with every position past the first scored.
 */
inline std::vector<SeqExample> make_lm_windows(const TokenIds& stream, int window_len,
                                               int max_windows = 0) {
  if (window_len < 2) throw std::invalid_argument("make_lm_windows: window_len too small");
  std::vector<SeqExample> out;
  for (size_t start = 0; start + 2 <= stream.size(); start += static_cast<size_t>(window_len)) {
    const size_t end = std::min(stream.size(), start + static_cast<size_t>(window_len));
    if (end - start < 2) break;
    SeqExample ex;
    ex.ids.assign(stream.begin() + static_cast<ptrdiff_t>(start),
                  stream.begin() + static_cast<ptrdiff_t>(end));
    ex.loss_start = 1;
    out.push_back(std::move(ex));
    if (max_windows > 0 && static_cast<int>(out.size()) >= max_windows) break;
  }
  return out;
}

}  // namespace stegolm
