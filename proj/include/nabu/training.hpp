#pragma once

// Corpus assembly, the optimization loop and checkpoints.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "nabu/config.hpp"
#include "nabu/graph.hpp"
#include "nabu/model.hpp"
#include "nabu/params.hpp"
#include "nabu/tokenizer.hpp"

namespace nabu {

struct Example {
  std::string id;
  Language language = Language::Eng;
  ReifiedGraph graph;
  std::string text;                     // the target of this example
  std::vector<std::string> references;  // every text of the source record
};

/// One example per (record, text) for the configured languages, globally shuffled with
/// `seed`. Throws MissingLanguageData when a configured language has no text-bearing record.
std::vector<Example> build_corpus(const std::vector<GraphRecord>& records, const std::vector<Language>& languages,
                                  PredicateNodes mode, std::uint64_t seed);

/// Seeded permutation of 0..n-1.
std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed);

/// Fold index in [0, k) for each of n items; fold sizes differ by at most one.
std::vector<std::size_t> kfold_assignment(std::size_t n, std::size_t k, std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0;   // per non-PAD target token
  double token_acc = 0;   // teacher-forced argmax accuracy
  double wall_seconds = 0;
  double train_bleu = -1;  // -1 when not evaluated this epoch
};

/// Training-set evaluation: decodes every distinct (graph, language) and scores it.
struct Evaluation {
  double bleu = 0;
  double chrfpp = 0;
  std::size_t exact = 0;
  std::size_t total = 0;
  std::vector<std::string> hypotheses;
};

Evaluation evaluate(const Model& model, const Vocabulary& vocab, const std::vector<Example>& corpus,
                    std::size_t beam_size, Real length_penalty, bool copy);

class Trainer {
 public:
  Trainer(Model& model, const Vocabulary& vocab, TrainConfig cfg);

  /// One pass over the corpus in node-count buckets; clip, then Adam after every batch.
  EpochMetrics train_epoch(const std::vector<Example>& corpus);

  /// Runs up to cfg.epochs epochs with optional periodic evaluation and early stopping.
  /// `on_epoch` is called after every epoch.
  std::vector<EpochMetrics> fit(const std::vector<Example>& corpus,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

  std::size_t steps() const { return adam_.step; }
  std::size_t epochs_done() const { return epoch_; }

 private:
  Real learning_rate() const;

  Model* model_;
  const Vocabulary* vocab_;
  TrainConfig cfg_;
  AdamState adam_;
  std::size_t epoch_ = 0;
  std::vector<std::vector<std::size_t>> targets_;  // cached framing per corpus index
  std::vector<Source> sources_;
  const std::vector<Example>* cached_for_ = nullptr;
};

/// Writes the training log header "epoch,mean_loss,token_acc,wall_seconds,train_bleu".
void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const EpochMetrics& m);

struct Checkpoint {
  ModelConfig model;
  Vocabulary vocab;
  ParameterStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: "NABUCKPT", u32 version, u64 config hash, u32 scalar width,
/// config text, vocabulary text, then (name, shape, little-endian payload) per
/// parameter, then a trailing FNV-1a checksum of everything before it.
void save_checkpoint(const std::string& path, const Model& model, const Vocabulary& vocab);
std::string serialize_checkpoint(const Model& model, const Vocabulary& vocab);
/// Throws CorruptCheckpoint on any structural problem and ConfigHashMismatch when
/// `expected` is given and describes a different architecture.
Checkpoint load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr);
Checkpoint parse_checkpoint(const std::string& bytes, const ModelConfig* expected = nullptr);

}  // namespace nabu
