#pragma once

// Encoder-decoder model: parameters, source preparation for either encoder, and the
// teacher-forced loss used by training.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nabu/autodiff.hpp"
#include "nabu/config.hpp"
#include "nabu/gat.hpp"
#include "nabu/graph.hpp"
#include "nabu/params.hpp"
#include "nabu/tokenizer.hpp"
#include "nabu/transformer.hpp"

namespace nabu {

/// Encoder input for one graph. Memory row r corresponds to graph node node_of[r]
/// (-1 for separator rows of the linearized input).
struct Source {
  ReifiedGraph graph;
  GraphInputs graph_inputs;         // gat encoder
  std::vector<std::size_t> tokens;  // linearized encoder
  std::vector<long> node_of;

  std::size_t memory_rows() const { return node_of.size(); }
};

/// Target framing: BOS + encode(text) + EOS, truncated to max_len tokens (EOS kept).
std::vector<std::size_t> frame_target(const Vocabulary& vocab, std::string_view text, std::size_t max_len);

struct ForwardResult {
  ad::Var loss;                  // summed token cross-entropy / normalizer
  std::size_t tokens = 0;        // non-PAD target positions
  std::size_t correct = 0;       // argmax hits among them
  Real loss_sum = 0;             // un-normalized summed cross-entropy
  std::vector<Tensor> cross_probs;
};

class Model {
 public:
  /// Registers freshly initialized parameters (xavier weights, zero biases, unit gains).
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(ModelConfig cfg, ParameterStore params);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const Tensor& positions() const { return positions_; }

  Source prepare(const ReifiedGraph& graph, const Vocabulary& vocab) const;

  /// Encoder memory (rows x n) on the given tape.
  ad::Var encode(BoundParams& p, const Source& src, bool train, std::mt19937_64& rng) const;
  /// Encoder memory without gradients, for decoding.
  Tensor encode(const Source& src) const;
  /// Per-layer, per-head GAT coefficients (empty for the linearized encoder).
  std::vector<std::vector<Tensor>> graph_attention(const Source& src) const;

  /// Teacher-forced loss of target = BOS ... EOS. PAD targets are ignored.
  ForwardResult forward(BoundParams& p, const Source& src, const std::vector<std::size_t>& target, Real normalizer,
                        bool train, std::mt19937_64& rng) const;

  IncrementalDecoder decoder(Tensor memory) const { return IncrementalDecoder(params_, cfg_, positions_, std::move(memory)); }

 private:
  void build_positions();

  ModelConfig cfg_;
  ParameterStore params_;
  Tensor positions_;
};

}  // namespace nabu
