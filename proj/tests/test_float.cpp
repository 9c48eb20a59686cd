#include "doctest.h"

#include <cmath>

#include "nabu/decoding.hpp"
#include "nabu/synthetic.hpp"
#include "nabu/training.hpp"

using namespace nabu;

TEST_CASE("single precision build trains and round-trips checkpoints") {
  static_assert(sizeof(Real) == 4);
  auto records = synthetic_corpus(4, 2);
  std::vector<std::string> texts;
  for (const auto& r : records) texts.insert(texts.end(), r.texts.begin(), r.texts.end());
  auto vocab = train_bpe(texts, 120);

  auto cfg = desk_config();
  cfg.model.embedding_size = cfg.model.hidden_size = 16;
  cfg.model.vocab_size = vocab.size();
  cfg.train.epochs = 5;
  cfg.train.batch_size = 4;
  Model model(cfg.model, 1);
  auto corpus = build_corpus(records, cfg.model.languages, cfg.model.predicate_nodes, 1);
  Trainer trainer(model, vocab, cfg.train);
  auto history = trainer.fit(corpus);
  REQUIRE(history.size() == 5);
  CHECK(std::isfinite(history.back().mean_loss));
  CHECK(history.back().mean_loss < history.front().mean_loss);

  auto ck = parse_checkpoint(serialize_checkpoint(model, vocab), &cfg.model);
  CHECK(ck.params == model.params());

  BeamConfig beam;
  beam.max_len = 12;
  auto a = generate(model, vocab, corpus[0].graph, beam, true);
  Model reloaded(ck.model, std::move(ck.params));
  CHECK(generate(reloaded, ck.vocab, corpus[0].graph, beam, true).text == a.text);
}
