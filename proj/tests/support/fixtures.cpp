#include "fixtures.hpp"

#include "nabu/synthetic.hpp"

namespace nabu::testing {

ModelConfig tiny_config(std::size_t vocab_size, EncoderKind encoder) {
  ModelConfig cfg;
  cfg.embedding_size = cfg.hidden_size = 8;
  cfg.heads = 2;
  cfg.encoder_layers = cfg.decoder_layers = 2;
  cfg.ffn_size = 16;
  cfg.vocab_size = vocab_size;
  cfg.max_decode_len = 24;
  cfg.dropout = 0;
  cfg.encoder = encoder;
  return cfg;
}

Vocabulary synthetic_vocab(std::size_t graphs, std::size_t size) {
  std::vector<std::string> corpus;
  for (const auto& r : synthetic_corpus(graphs, 3)) {
    corpus.insert(corpus.end(), r.texts.begin(), r.texts.end());
    auto g = reify(r.triples, r.language);
    for (const auto& words : node_feature_labels(g)) {
      for (const auto& w : words) corpus.push_back(w);
    }
  }
  return train_bpe(corpus, size);
}

std::vector<Triple> random_triples(std::mt19937_64& rng, std::size_t max_triples) {
  const char* entities[] = {"Alpha", "Beta", "Gamma_Delta", "Epsilon", "Zeta_Eta", "Theta"};
  const char* predicates[] = {"birthPlace", "country", "leaderName", "capital"};
  std::vector<Triple> ts;
  const std::size_t n = 1 + rng() % max_triples;
  for (std::size_t i = 0; i < n; ++i) {
    ts.push_back({entities[rng() % 6], predicates[rng() % 4], entities[rng() % 6]});
  }
  return ts;
}

}  // namespace nabu::testing
