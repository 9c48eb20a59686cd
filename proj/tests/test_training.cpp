#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nabu/synthetic.hpp"
#include "nabu/training.hpp"
#include "support/fixtures.hpp"

using namespace nabu;

namespace {

const std::vector<GraphRecord>& records() {
  static const auto r = synthetic_corpus(100, 41);
  return r;
}

const Vocabulary& vocab() {
  static const Vocabulary v = nabu::testing::synthetic_vocab(30, 800);
  return v;
}

ModelConfig desk_model() {
  auto cfg = desk_config().model;
  cfg.vocab_size = vocab().size();
  return cfg;
}

std::map<Language, std::size_t> language_counts(const std::vector<Example>& corpus) {
  std::map<Language, std::size_t> c;
  for (const auto& e : corpus) ++c[e.language];
  return c;
}

Real eval_loss(const Model& model, const Source& src, const std::vector<std::size_t>& target, std::size_t* correct,
               std::size_t* tokens) {
  ad::Tape tape;
  BoundParams p(tape, model.params());
  std::mt19937_64 rng(0);
  auto res = model.forward(p, src, target, Real(1), false, rng);
  if (correct) *correct = res.correct;
  if (tokens) *tokens = res.tokens;
  return res.loss_sum;
}

}  // namespace

TEST_CASE("synthetic corpus shape") {
  const auto& r = records();
  REQUIRE(r.size() == 300);
  for (std::size_t i = 0; i < r.size(); i += 3) {
    CHECK(r[i].language == Language::Eng);
    CHECK(r[i + 1].language == Language::Ger);
    CHECK(r[i + 2].language == Language::Rus);
    CHECK(r[i].triples == r[i + 1].triples);
    CHECK(r[i].id == r[i + 2].id);
    CHECK(!r[i].texts.empty());
    CHECK(r[i].triples.size() >= 1);
    CHECK(r[i].triples.size() <= 7);
  }
  CHECK(synthetic_corpus(100, 41) == r);
}

TEST_CASE("corpus assembly") {
  auto mono = build_corpus(records(), {Language::Eng}, PredicateNodes::PerOccurrence, 1);
  CHECK(mono.size() == 100);
  for (const auto& e : mono) {
    CHECK(e.language == Language::Eng);
    CHECK(e.graph.language == Language::Eng);
    CHECK(e.graph.nodes[0] == "ENG");
  }

  auto multi = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 1);
  CHECK(multi.size() == 300);
  auto counts = language_counts(multi);
  CHECK(counts[Language::Eng] == 100);
  CHECK(counts[Language::Ger] == 100);
  CHECK(counts[Language::Rus] == 100);
  // Interleaved: the first 100 are not all one language.
  std::vector<Example> head(multi.begin(), multi.begin() + 100);
  CHECK(language_counts(head).size() == 3);

  auto again = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 1);
  auto other = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 2);
  bool same_order = true, other_order = true;
  for (std::size_t i = 0; i < multi.size(); ++i) {
    same_order = same_order && multi[i].id == again[i].id && multi[i].language == again[i].language;
    other_order = other_order && multi[i].id == other[i].id && multi[i].language == other[i].language;
  }
  CHECK(same_order);
  CHECK(!other_order);

  std::vector<GraphRecord> eng_only;
  for (const auto& r : records()) {
    if (r.language == Language::Eng) eng_only.push_back(r);
  }
  CHECK_THROWS_AS(build_corpus(eng_only, {Language::Eng, Language::Ger}, PredicateNodes::PerOccurrence, 1),
                  MissingLanguageData);
}

TEST_CASE("k-fold assignment") {
  auto folds = kfold_assignment(95, 10, 3);
  std::map<std::size_t, std::size_t> sizes;
  for (auto f : folds) ++sizes[f];
  CHECK(sizes.size() == 10);
  for (auto [f, n] : sizes) CHECK((n == 9 || n == 10));
  CHECK(kfold_assignment(95, 10, 3) == folds);
  CHECK(kfold_assignment(95, 10, 4) != folds);
  CHECK_THROWS_AS(kfold_assignment(5, 0, 1), ConfigError);
  auto order = shuffled_order(20, 9);
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 20; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("target framing") {
  auto t = frame_target(vocab(), "Alpha is", 64);
  CHECK(t.front() == kBos);
  CHECK(t.back() == kEos);
  CHECK(vocab().decode(t) == "Alpha is");
  auto cut = frame_target(vocab(), "a very long sentence that will not fit", 6);
  CHECK(cut.size() == 6);
  CHECK(cut.back() == kEos);
}

TEST_CASE("task and language count must agree") {
  auto cfg = desk_config();
  cfg.train.task = Task::Mono;
  CHECK_THROWS_AS(cfg.train.validate(cfg.model), ConfigError);
  cfg.model.languages = {Language::Ger};
  CHECK_NOTHROW(cfg.train.validate(cfg.model));
  cfg.train.batch_size = 0;
  CHECK_THROWS_AS(cfg.train.validate(cfg.model), ConfigError);
}

TEST_CASE("untrained loss is close to ln K") {
  Model model(desk_model(), 3);
  auto corpus = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 1);
  double loss = 0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    auto src = model.prepare(corpus[i].graph, vocab());
    std::size_t n = 0;
    loss += eval_loss(model, src, frame_target(vocab(), corpus[i].text, 128), nullptr, &n);
    tokens += n;
  }
  const double lnk = std::log(static_cast<double>(vocab().size()));
  CHECK(std::abs(loss / tokens - lnk) < 0.05 * lnk);
}

TEST_CASE("padding positions do not affect the loss or its gradient") {
  Model model(nabu::testing::tiny_config(vocab().size()), 4);
  auto src = model.prepare(reify({{"Alpha", "capital", "Beta"}}, Language::Eng), vocab());
  auto target = frame_target(vocab(), "Alpha is the capital", 32);
  auto padded = target;
  padded.insert(padded.end(), 4, kPad);
  auto grads_of = [&](const std::vector<std::size_t>& t, Real* loss) {
    ad::Tape tape;
    BoundParams p(tape, model.params());
    std::mt19937_64 rng(0);
    auto res = model.forward(p, src, t, Real(5), false, rng);
    tape.backward(res.loss);
    Gradients g(model.params());
    p.accumulate(g);
    *loss = res.loss.value()[0];
    return g;
  };
  Real l1 = 0, l2 = 0;
  auto g1 = grads_of(target, &l1);
  auto g2 = grads_of(padded, &l2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (std::size_t i = 0; i < g1.size(); ++i) {
    for (std::size_t k = 0; k < g1[i].size(); ++k) CHECK(std::abs(g1[i][k] - g2[i][k]) < 1e-12);
  }
}

TEST_CASE("a single example is memorized") {
  auto cfg = desk_model();
  Model model(cfg, 5);
  auto corpus = build_corpus({records()[0]}, {Language::Eng}, PredicateNodes::PerOccurrence, 1);
  REQUIRE(corpus.size() == 1);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.epochs = 200;
  Trainer trainer(model, vocab(), tc);
  auto history = trainer.fit(corpus);
  CHECK(history.size() == 200);
  CHECK(trainer.epochs_done() == 200);
  CHECK(trainer.steps() == 200);
  auto src = model.prepare(corpus[0].graph, vocab());
  std::size_t correct = 0, tokens = 0;
  eval_loss(model, src, frame_target(vocab(), corpus[0].text, cfg.max_decode_len), &correct, &tokens);
  CHECK(correct == tokens);
  CHECK(history.back().mean_loss < history.front().mean_loss);
}

TEST_CASE("teacher-forced loss decreases over the first 50 steps") {
  auto cfg = desk_model();
  cfg.dropout = 0;
  Model model(cfg, 6);
  auto corpus = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 1);
  corpus.resize(8);
  TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs = 1;
  std::vector<double> losses;
  Trainer trainer(model, vocab(), tc);
  for (int step = 0; step < 50; ++step) losses.push_back(trainer.train_epoch(corpus).mean_loss);
  for (std::size_t w = 10; w + 10 <= losses.size(); w += 10) {
    double prev = 0, cur = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      prev += losses[w - 10 + i];
      cur += losses[w + i];
    }
    CHECK(cur < prev);
  }
}

TEST_CASE("seeded training is bit-reproducible") {
  auto corpus = build_corpus(records(), {Language::Eng, Language::Ger, Language::Rus}, PredicateNodes::PerOccurrence, 1);
  corpus.resize(24);
  auto run = [&] {
    Model model(nabu::testing::tiny_config(vocab().size()), 7);
    TrainConfig tc;
    tc.batch_size = 5;
    tc.epochs = 3;
    tc.warmup_steps = 4;
    Trainer trainer(model, vocab(), tc);
    auto h = trainer.fit(corpus);
    return std::pair{h.back().mean_loss, serialize_checkpoint(model, vocab())};
  };
  auto a = run();
  auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("early stop on training bleu") {
  auto corpus = build_corpus({records()[0]}, {Language::Eng}, PredicateNodes::PerOccurrence, 1);
  Model model(desk_model(), 8);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.epochs = 300;
  tc.eval_every = 25;
  tc.stop_at_train_bleu = Real(99);
  Trainer trainer(model, vocab(), tc);
  std::size_t evaluated = 0;
  auto history = trainer.fit(corpus, [&](const EpochMetrics& m) { evaluated += m.train_bleu >= 0; });
  CHECK(history.size() < 300);
  CHECK(history.size() % 25 == 0);
  CHECK(history.back().train_bleu >= 99);
  CHECK(evaluated == history.size() / 25);
}

TEST_CASE("training log format") {
  std::ostringstream os;
  write_log_header(os);
  EpochMetrics m;
  m.epoch = 3;
  m.mean_loss = 1.5;
  m.token_acc = 0.25;
  write_log_row(os, m);
  std::istringstream in(os.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,mean_loss,token_acc,wall_seconds,train_bleu");
  CHECK(row.rfind("3,1.5", 0) == 0);
}

TEST_CASE("checkpoint round trip") {
  Model model(nabu::testing::tiny_config(vocab().size()), 9);
  const auto bytes = serialize_checkpoint(model, vocab());
  auto ck = parse_checkpoint(bytes);
  CHECK(ck.params == model.params());
  CHECK(ck.model.hash() == model.config().hash());
  CHECK(ck.vocab == vocab());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    CHECK(ck.params.names()[i] == model.params().names()[i]);
    CHECK(ck.params.at(i) == model.params().at(i));
  }

  const auto path = (std::filesystem::temp_directory_path() / "nabu_ckpt_test.bin").string();
  save_checkpoint(path, model, vocab());
  auto loaded = load_checkpoint(path, &model.config());
  CHECK(loaded.params == model.params());
  CHECK(!std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("damaged checkpoints are refused") {
  Model model(nabu::testing::tiny_config(vocab().size()), 10);
  const auto bytes = serialize_checkpoint(model, vocab());
  for (std::size_t cut : {std::size_t(0), std::size_t(7), std::size_t(40), bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, cut)), CorruptCheckpoint);
  }
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(parse_checkpoint(flipped), CorruptCheckpoint);
  CHECK_THROWS_AS(parse_checkpoint("NABUCKPT"), CorruptCheckpoint);
}

TEST_CASE("loading into a different architecture is refused") {
  auto cfg = nabu::testing::tiny_config(vocab().size());
  Model model(cfg, 11);
  const auto bytes = serialize_checkpoint(model, vocab());
  auto other = cfg;
  other.vocab_size = cfg.vocab_size + 1;
  CHECK_THROWS_AS(parse_checkpoint(bytes, &other), ConfigHashMismatch);
  other = cfg;
  other.heads = 4;
  CHECK_THROWS_AS(parse_checkpoint(bytes, &other), ConfigHashMismatch);
  CHECK_NOTHROW(parse_checkpoint(bytes, &cfg));
  // A vocabulary of a different size cannot drive this model.
  auto small = nabu::testing::synthetic_vocab(5, 120);
  CHECK_THROWS_AS(model.prepare(reify({{"a", "b", "c"}}, Language::Eng), small), ConfigHashMismatch);
}
