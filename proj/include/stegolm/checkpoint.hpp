#pragma once

/**
 * Checkpoint file format, version 1:
 *
 *   STEGOLM-CKPT v1 <header_bytes>\n
 *   <header_bytes of compact JSON>
 *   <payload: every tensor in visit_tensors order, float32 little-endian>
 *
 * The JSON header carries the model configuration, the full vocabulary,
 * the tensor manifest, and a caller-supplied metadata object. Keys are
 * emitted sorted and no timestamps are recorded, so saving the same model
 * twice produces byte-identical files.
 */

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "stegolm/common.hpp"
#include "stegolm/model.hpp"
#include "stegolm/vocab.hpp"

namespace stegolm {

struct Checkpoint {
  Model<Real> model;
  Vocabulary vocab;
  nlohmann::json meta;
};

namespace detail {

inline void write_f32_le(std::ostream& os, float x) {
  uint32_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff),
                         static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

inline float read_f32_le(std::istream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  if (!is) throw std::runtime_error("checkpoint payload truncated");
  const uint32_t bits = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
                        (static_cast<uint32_t>(bytes[2]) << 16) |
                        (static_cast<uint32_t>(bytes[3]) << 24);
  float x;
  std::memcpy(&x, &bits, sizeof(x));
  return x;
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"context_length", cfg.context_length}, {"embed_dim", cfg.embed_dim},
          {"n_layers", cfg.n_layers},             {"n_heads", cfg.n_heads},
          {"hidden_dim", cfg.hidden_dim},         {"vocab_size", cfg.vocab_size},
          {"seed", cfg.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.context_length = j.at("context_length").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Model<Real>& model, const Vocabulary& vocab,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  if (model.config.vocab_size != vocab.size())
    throw std::invalid_argument("save_checkpoint: model vocab_size disagrees with vocabulary");

  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["model"] = detail::config_to_json(model.config);
  header["vocab"] = {{"tokens", vocab.tokens},
                     {"bos_id", vocab.bos_id},
                     {"eos_id", vocab.eos_id},
                     {"pad_id", vocab.pad_id}};
  nlohmann::json tensors = nlohmann::json::array();
  size_t payload_floats = 0;
  visit_tensors(const_cast<Parameters<Real>&>(model.params),
                [&](const std::string& name, Tensor<Real>& t) {
                  tensors.push_back({{"name", name}, {"shape", t.shape}});
                  payload_floats += t.v.size();
                });
  header["tensors"] = tensors;
  header["payload_floats"] = payload_floats;
  header["meta"] = meta;

  const std::string body = header.dump();
  os << "STEGOLM-CKPT v" << kCheckpointFormatVersion << " " << body.size() << "\n";
  os.write(body.data(), static_cast<std::streamsize>(body.size()));
  visit_tensors(const_cast<Parameters<Real>&>(model.params),
                [&](const std::string&, Tensor<Real>& t) {
                  for (Real x : t.v) detail::write_f32_le(os, x);
                });
  if (!os) throw std::runtime_error("save_checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const Model<Real>& model,
                            const Vocabulary& vocab,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  save_checkpoint(os, model, vocab, meta);
}

inline Checkpoint load_checkpoint(std::istream& is) {
  std::string magic, version_tag;
  size_t header_len = 0;
  if (!(is >> magic >> version_tag >> header_len) || magic != "STEGOLM-CKPT")
    throw std::runtime_error("load_checkpoint: not a checkpoint file");
  if (version_tag != "v" + std::to_string(kCheckpointFormatVersion))
    throw std::runtime_error("load_checkpoint: unsupported format " + version_tag + ", expected v" +
                             std::to_string(kCheckpointFormatVersion));
  is.get();  // newline after the size field
  std::string body(header_len, '\0');
  is.read(body.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw std::runtime_error("load_checkpoint: header truncated");

  nlohmann::json header = nlohmann::json::parse(body);
  if (header.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("load_checkpoint: header format_version mismatch");

  Checkpoint ckpt;
  ckpt.model.config = detail::config_from_json(header.at("model"));
  const nlohmann::json& jv = header.at("vocab");
  ckpt.vocab.tokens = jv.at("tokens").get<std::vector<std::string>>();
  ckpt.vocab.bos_id = jv.at("bos_id").get<TokenId>();
  ckpt.vocab.eos_id = jv.at("eos_id").get<TokenId>();
  ckpt.vocab.pad_id = jv.at("pad_id").get<TokenId>();
  ckpt.vocab.rebuild_index();
  if (ckpt.model.config.vocab_size != ckpt.vocab.size())
    throw std::runtime_error("load_checkpoint: vocab size disagrees with model config");
  ckpt.meta = header.value("meta", nlohmann::json::object());

  allocate_parameters(ckpt.model.params, ckpt.model.config);
  const nlohmann::json& manifest = header.at("tensors");
  size_t idx = 0;
  visit_tensors(ckpt.model.params, [&](const std::string& name, Tensor<Real>& t) {
    if (idx >= manifest.size())
      throw std::runtime_error("load_checkpoint: tensor manifest too short");
    const nlohmann::json& entry = manifest[idx++];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("shape").get<std::vector<int>>() != t.shape)
      throw std::runtime_error("load_checkpoint: tensor mismatch at " + name);
    for (Real& x : t.v) x = detail::read_f32_le(is);
  });
  if (idx != manifest.size())
    throw std::runtime_error("load_checkpoint: tensor manifest too long");
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  return load_checkpoint(is);
}

/** Serialized bytes of a checkpoint, for byte-identity comparisons. */
inline std::string checkpoint_bytes(const Model<Real>& model, const Vocabulary& vocab,
                                    const nlohmann::json& meta = nlohmann::json::object()) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, model, vocab, meta);
  return os.str();
}

}  // namespace stegolm
