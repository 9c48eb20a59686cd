#pragma once

// Beam search over a step-wise scorer, and copy post-processing of UNK outputs.

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "nabu/common.hpp"
#include "nabu/model.hpp"
#include "nabu/tokenizer.hpp"

namespace nabu {

struct StepOutput {
  std::vector<Real> log_probs;  // over the vocabulary
  std::vector<Real> attention;  // over memory rows (may be empty)
};

/// Next-token distribution given a decoding state. States are immutable and shared
/// between hypotheses that have a common prefix.
class StepScorer {
 public:
  using State = std::shared_ptr<const void>;
  virtual ~StepScorer() = default;
  virtual State initial() = 0;
  /// Feeds `token` after `state`; returns the distribution of the following token.
  virtual StepOutput step(const State& state, std::size_t token, State& next) = 0;
};

/// Scorer backed by the cached incremental decoder.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Model& model, Tensor memory);
  State initial() override;
  StepOutput step(const State& state, std::size_t token, State& next) override;

 private:
  IncrementalDecoder decoder_;
};

struct Hypothesis {
  std::vector<std::size_t> tokens;            // emitted tokens, EOS excluded
  Real log_prob = 0;                          // cumulative, EOS included
  std::vector<std::vector<Real>> attention;   // per emitted token
  bool finished = false;
  bool ended_by_eos = false;
  Real score = 0;                             // log_prob / length^alpha
};

struct BeamConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 128;  // emitted tokens including EOS
  Real length_penalty = Real(0.6);
};

/// Length-normalized score; length counts EOS when present.
Real normalized_score(Real log_prob, std::size_t length, Real alpha);

/// Finished hypotheses, best first (ties keep discovery order).
std::vector<Hypothesis> beam_search(StepScorer& scorer, const BeamConfig& cfg);
Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len);

struct CopyRecord {
  std::size_t position = 0;  // index into the hypothesis tokens
  std::size_t node = 0;      // graph node with maximal attention
  std::string surface;
  int stage = 1;             // 1: vocabulary rendering of the node label, 2: raw label
};

struct CopyResult {
  std::string text;
  std::vector<CopyRecord> copies;
};

/// Replaces each UNK token by the label of the node its attention row peaks on.
/// Rows mapped to -1 (separators) are never chosen; ties go to the lowest row.
CopyResult apply_copy(const Hypothesis& hyp, const ReifiedGraph& graph, const std::vector<long>& node_of,
                      const Vocabulary& vocab);

struct Generation {
  std::string text;
  Real score = 0;
  Real log_prob = 0;
  std::vector<CopyRecord> copies;
  std::vector<std::size_t> tokens;
};

Generation generate(const Model& model, const Vocabulary& vocab, const ReifiedGraph& graph, const BeamConfig& cfg,
                    bool copy);

}  // namespace nabu
