#pragma once

/**
 * Character-level vocabulary and chat template.
 *
 * The default vocabulary covers printable ASCII plus newline, a handful of
 * control tokens (bos/eos/pad and chat markers), and a reserved block of
 * rare tokens that never occur in corpus text. Rare tokens exist so hidden
 * payloads can be prefixed with tokens that carry no natural usage.
 */

#include <cctype>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "stegolm/common.hpp"

namespace stegolm {

inline constexpr int kRareTokenCount = 16;

struct Vocabulary {
  std::vector<std::string> tokens;
  TokenId bos_id = 0;
  TokenId eos_id = 0;
  TokenId pad_id = 0;

  int size() const { return static_cast<int>(tokens.size()); }

  const std::string& token(TokenId id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: token id out of range");
    return tokens[static_cast<size_t>(id)];
  }

  std::optional<TokenId> id_of(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  void rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < tokens.size(); ++i) {
      auto [it, inserted] = index_.emplace(tokens[i], static_cast<TokenId>(i));
      if (!inserted) throw std::runtime_error("vocab: duplicate token string: " + tokens[i]);
    }
    if (bos_id == eos_id || bos_id == pad_id || eos_id == pad_id)
      throw std::runtime_error("vocab: bos/eos/pad ids must be distinct");
    for (TokenId id : {bos_id, eos_id, pad_id})
      if (id < 0 || id >= size()) throw std::runtime_error("vocab: special id out of range");
  }

 private:
  std::unordered_map<std::string, TokenId> index_;
};

namespace markers {
inline constexpr const char* bos = "<bos>";
inline constexpr const char* eos = "<eos>";
inline constexpr const char* pad = "<pad>";
inline constexpr const char* system = "<|system|>";
inline constexpr const char* user = "<|user|>";
inline constexpr const char* assistant = "<|assistant|>";
inline constexpr const char* end = "<|end|>";
}  // namespace markers

inline Vocabulary build_default_vocabulary() {
  Vocabulary v;
  v.tokens = {markers::bos, markers::eos, markers::pad,
              markers::system, markers::user, markers::assistant, markers::end};
  v.bos_id = 0;
  v.eos_id = 1;
  v.pad_id = 2;
  v.tokens.emplace_back(1, '\n');
  for (int c = 0x20; c <= 0x7e; ++c) v.tokens.emplace_back(1, static_cast<char>(c));
  for (int i = 0; i < kRareTokenCount; ++i) {
    std::string name = "<r";
    name += static_cast<char>('0' + i / 10);
    name += static_cast<char>('0' + i % 10);
    name += '>';
    v.tokens.push_back(name);
  }
  v.rebuild_index();
  return v;
}

// First `count` ids from the rare block.
inline TokenIds rare_token_ids(const Vocabulary& vocab, int count) {
  TokenIds ids;
  for (int i = 0; i < count; ++i) {
    std::string name = "<r";
    name += static_cast<char>('0' + i / 10);
    name += static_cast<char>('0' + i % 10);
    name += '>';
    auto id = vocab.id_of(name);
    if (!id) throw std::runtime_error("vocab: rare block too small for count");
    ids.push_back(*id);
  }
  return ids;
}

inline TokenIds tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenIds ids;
  ids.reserve(text.size());
  for (char c : text) {
    auto id = vocab.id_of(std::string(1, c));
    if (!id) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "0x%02x", static_cast<unsigned char>(c));
      throw std::invalid_argument(std::string("tokenize: unrepresentable symbol '") +
                                  (std::isprint(static_cast<unsigned char>(c)) ? std::string(1, c)
                                                                               : std::string(buf)) +
                                  "'");
    }
    ids.push_back(*id);
  }
  return ids;
}

inline std::string detokenize(const TokenIds& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) out += vocab.token(id);
  return out;
}

// Single-character punctuation tokens; filler class for repetition checks.
inline bool is_punctuation_token(const Vocabulary& vocab, TokenId id) {
  const std::string& s = vocab.token(id);
  return s.size() == 1 && std::ispunct(static_cast<unsigned char>(s[0])) != 0;
}

/**
 * Fixed token scaffold around user text.
 *
 * wrap_white:  prefix ++ tokenize(text) ++ suffix
 * wrap_black:  the same with the terminal token appended; this is the form
 *              an end user cannot strip.
 */
struct ChatTemplate {
  TokenIds prefix;
  TokenIds suffix;
  TokenId terminal_id = 0;

  TokenIds wrap_white(const std::string& text, const Vocabulary& vocab) const {
    TokenIds out = prefix;
    TokenIds body = tokenize(text, vocab);
    out.insert(out.end(), body.begin(), body.end());
    out.insert(out.end(), suffix.begin(), suffix.end());
    return out;
  }

  TokenIds wrap_black(const std::string& text, const Vocabulary& vocab) const {
    TokenIds out = wrap_white(text, vocab);
    out.push_back(terminal_id);
    return out;
  }

  // Context for forcing tokens directly after the assistant marker.
  TokenIds forcing_context(const TokenIds& forced) const {
    TokenIds out = prefix;
    out.insert(out.end(), suffix.begin(), suffix.end());
    out.insert(out.end(), forced.begin(), forced.end());
    return out;
  }
};

inline ChatTemplate default_chat_template(const Vocabulary& vocab) {
  ChatTemplate t;
  t.prefix.push_back(vocab.bos_id);
  t.prefix.push_back(*vocab.id_of(markers::system));
  for (TokenId id : tokenize("you are a helpful assistant.", vocab)) t.prefix.push_back(id);
  t.prefix.push_back(*vocab.id_of(markers::user));
  t.suffix.push_back(*vocab.id_of(markers::assistant));
  t.terminal_id = *vocab.id_of(markers::end);
  return t;
}

}  // namespace stegolm
