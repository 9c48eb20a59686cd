#include "nabu/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "nabu/decoding.hpp"
#include "nabu/metrics.hpp"

namespace nabu {

namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  // Fisher-Yates with explicit draws so the order does not depend on the standard library.
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

std::vector<Example> build_corpus(const std::vector<GraphRecord>& records, const std::vector<Language>& languages,
                                  PredicateNodes mode, std::uint64_t seed) {
  std::vector<Example> out;
  std::map<Language, std::size_t> per_lang;
  for (const auto& rec : records) {
    if (std::find(languages.begin(), languages.end(), rec.language) == languages.end()) continue;
    if (rec.texts.empty()) continue;
    auto graph = reify(rec.triples, rec.language, mode);
    for (const auto& text : rec.texts) {
      out.push_back({rec.id, rec.language, graph, text, rec.texts});
      ++per_lang[rec.language];
    }
  }
  for (auto l : languages) {
    if (per_lang[l] == 0) {
      throw MissingLanguageData("no training data for language " + std::string(language_code(l)));
    }
  }
  auto rng = seeded({seed, 0x636f72707573ULL});
  shuffle(out, rng);
  return out;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = seeded({seed, 0x6f72646572ULL});
  shuffle(order, rng);
  return order;
}

std::vector<std::size_t> kfold_assignment(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("k-fold needs k >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = seeded({seed, 0x6b666f6c64ULL});
  shuffle(order, rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % k;
  return fold;
}

Evaluation evaluate(const Model& model, const Vocabulary& vocab, const std::vector<Example>& corpus,
                    std::size_t beam_size, Real length_penalty, bool copy) {
  Evaluation ev;
  std::vector<std::vector<std::string>> refs;
  std::set<std::pair<std::string, Language>> seen;
  BeamConfig bc{beam_size, model.config().max_decode_len, length_penalty};
  for (const auto& ex : corpus) {
    if (!ex.id.empty() && !seen.insert({ex.id, ex.language}).second) continue;
    auto g = generate(model, vocab, ex.graph, bc, copy);
    if (std::find(ex.references.begin(), ex.references.end(), g.text) != ex.references.end()) ++ev.exact;
    ev.hypotheses.push_back(std::move(g.text));
    refs.push_back(ex.references);
  }
  ev.total = ev.hypotheses.size();
  if (ev.total == 0) return ev;
  ev.bleu = bleu(ev.hypotheses, refs).bleu;
  ev.chrfpp = chrfpp(ev.hypotheses, refs).score;
  return ev;
}

Trainer::Trainer(Model& model, const Vocabulary& vocab, TrainConfig cfg)
    : model_(&model), vocab_(&vocab), cfg_(std::move(cfg)) {
  cfg_.validate(model.config());
}

Real Trainer::learning_rate() const {
  if (cfg_.warmup_steps == 0) return cfg_.lr;
  const double s = static_cast<double>(adam_.step + 1), w = static_cast<double>(cfg_.warmup_steps);
  return static_cast<Real>(cfg_.lr * std::min(s / w, std::sqrt(w / s)));
}

EpochMetrics Trainer::train_epoch(const std::vector<Example>& corpus) {
  if (corpus.empty()) throw ConfigError("training corpus is empty");
  const auto start = std::chrono::steady_clock::now();
  const auto& mcfg = model_->config();
  if (cached_for_ != &corpus || sources_.size() != corpus.size()) {
    sources_.clear();
    targets_.clear();
    for (const auto& ex : corpus) {
      sources_.push_back(model_->prepare(ex.graph, *vocab_));
      targets_.push_back(frame_target(*vocab_, ex.text, mcfg.max_decode_len));
    }
    cached_for_ = &corpus;
  }

  // Node-count buckets: shuffle, stable-sort by size, cut into batches, shuffle batches.
  auto rng = seeded({cfg_.seed, epoch_, 0x65706f6368ULL});
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sources_[a].memory_rows() < sources_[b].memory_rows();
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += cfg_.batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(order.size(), i + cfg_.batch_size)));
  }
  shuffle(batches, rng);

  auto& store = model_->params();
  Gradients grads(store);
  AdamConfig adam_cfg;
  double loss_sum = 0;
  std::size_t tokens = 0, correct = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    std::size_t batch_tokens = 0;
    for (auto i : batches[b]) {
      for (std::size_t t = 1; t < targets_[i].size(); ++t) batch_tokens += targets_[i][t] != kPad;
    }
    grads.zero();
    for (std::size_t k = 0; k < batches[b].size(); ++k) {
      const auto i = batches[b][k];
      auto ex_rng = seeded({cfg_.seed, epoch_, b, k});
      ad::Tape tape;
      BoundParams p(tape, store);
      auto res = model_->forward(p, sources_[i], targets_[i], static_cast<Real>(std::max<std::size_t>(batch_tokens, 1)),
                                 true, ex_rng);
      tape.backward(res.loss);
      p.accumulate(grads);
      loss_sum += static_cast<double>(res.loss_sum);
      tokens += res.tokens;
      correct += res.correct;
    }
    if (cfg_.grad_clip > 0) clip_global_norm(grads, cfg_.grad_clip);
    adam_cfg.lr = learning_rate();
    adam_step(store, grads, adam_, adam_cfg);
  }
  ++epoch_;

  EpochMetrics m;
  m.epoch = epoch_;
  m.mean_loss = tokens ? loss_sum / static_cast<double>(tokens) : 0.0;
  m.token_acc = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

std::vector<EpochMetrics> Trainer::fit(const std::vector<Example>& corpus,
                                       const std::function<void(const EpochMetrics&)>& on_epoch) {
  std::vector<EpochMetrics> history;
  for (std::size_t e = 0; e < cfg_.epochs; ++e) {
    auto m = train_epoch(corpus);
    const bool last = e + 1 == cfg_.epochs;
    bool stop = false;
    if (cfg_.eval_every > 0 && (m.epoch % cfg_.eval_every == 0 || last)) {
      m.train_bleu = evaluate(*model_, *vocab_, corpus, 1, cfg_.length_penalty, cfg_.copy).bleu;
      stop = cfg_.stop_at_train_bleu > 0 && m.train_bleu >= static_cast<double>(cfg_.stop_at_train_bleu);
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (stop) break;
  }
  return history;
}

void write_log_header(std::ostream& os) { os << "epoch,mean_loss,token_acc,wall_seconds,train_bleu\n"; }

void write_log_row(std::ostream& os, const EpochMetrics& m) {
  std::ostringstream line;
  line.precision(6);
  line << std::fixed << m.epoch << ',' << m.mean_loss << ',' << m.token_acc << ',' << m.wall_seconds << ',';
  if (m.train_bleu >= 0) line << m.train_bleu;
  os << line.str() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'N', 'A', 'B', 'U', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

template <class F>
void put_real(std::string& out, F v) {
  using U = std::conditional_t<sizeof(F) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &v, sizeof(F));
  put<U>(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  double get_real(std::uint32_t width) {
    if (width == 4) {
      auto bits = get<std::uint32_t>();
      float f;
      std::memcpy(&f, &bits, 4);
      return f;
    }
    auto bits = get<std::uint64_t>();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > b_.size() - pos_) throw CorruptCheckpoint("checkpoint truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Model& model, const Vocabulary& vocab) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, model.config().hash());
  put<std::uint32_t>(out, sizeof(Real));
  put_string(out, model.config().canonical());
  put_string(out, vocab.serialize());
  const auto& store = model.params();
  put<std::uint64_t>(out, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& t = store.at(i);
    put_string(out, store.names()[i]);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (auto v : t.values()) put_real(out, v);
  }
  put<std::uint64_t>(out, fnv1a(out));
  return out;
}

void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab) {
  const auto bytes = serialize_checkpoint(model, vocab);
  const auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write checkpoint " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place: " + path);
}

Checkpoint parse_checkpoint(const std::string& bytes, const ModelConfig* expected) {
  if (bytes.size() < sizeof(kMagic) + 8 || bytes.compare(0, sizeof(kMagic), std::string(kMagic, sizeof(kMagic))) != 0) {
    throw CorruptCheckpoint("not a checkpoint (bad magic or truncated)");
  }
  const std::string_view body(bytes.data(), bytes.size() - 8);
  Reader tail(std::string_view(bytes).substr(bytes.size() - 8));
  if (tail.get<std::uint64_t>() != fnv1a(body)) throw CorruptCheckpoint("checkpoint checksum mismatch");

  Reader r(body);
  r.get<std::uint64_t>();  // magic
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));
  const auto hash = r.get<std::uint64_t>();
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) throw CorruptCheckpoint("bad scalar width");
  const auto config_text = r.get_string();
  if (fnv1a(config_text) != hash) throw CorruptCheckpoint("config text does not match its hash");
  if (expected && expected->hash() != hash) {
    throw ConfigHashMismatch("checkpoint architecture differs from the requested config:\n" + config_text);
  }

  Checkpoint ck;
  try {
    ck.model = RunConfig::parse(config_text).model;
    ck.vocab = Vocabulary::parse(r.get_string());
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const Error& e) {
    throw CorruptCheckpoint(std::string("checkpoint header unreadable: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CorruptCheckpoint("bad tensor rank for " + name);
    std::vector<std::size_t> shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>();
      if (d == 0 || d > (1ULL << 32)) throw CorruptCheckpoint("bad tensor shape for " + name);
      n *= d;
    }
    if (n * width > body.size()) throw CorruptCheckpoint("tensor larger than checkpoint: " + name);
    std::vector<Real> data(n);
    for (auto& v : data) v = static_cast<Real>(r.get_real(width));
    ck.params.add(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos() != body.size()) throw CorruptCheckpoint("trailing bytes in checkpoint");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_checkpoint(ss.str(), expected);
}

}  // namespace nabu
