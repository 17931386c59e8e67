#include <doctest.h>

#include <stegolm/commands.hpp>

TEST_CASE("library headers compile and a tiny model runs") {
  stegolm::Vocabulary vocab = stegolm::build_default_vocabulary();
  stegolm::ModelConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.hidden_dim = 32;
  cfg.context_length = 32;
  cfg.vocab_size = vocab.size();
  cfg.seed = 1;
  stegolm::Model<stegolm::Real> m = stegolm::init_model<stegolm::Real>(cfg);
  stegolm::TokenIds ids = {vocab.bos_id, *vocab.id_of("h")};
  std::vector<stegolm::Real> p = stegolm::next_token_probs(m, ids);
  CHECK(p.size() == vocab.size());
  double sum = 0.0;
  for (stegolm::Real v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-4));
}
