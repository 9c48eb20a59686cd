#pragma once

// Transformer decoder (and the encoder stack reused by the linearized baseline).
// Post-norm residual blocks: self-attention, cross-attention, feed-forward.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "nabu/autodiff.hpp"
#include "nabu/config.hpp"
#include "nabu/params.hpp"

namespace nabu {

void register_decoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);
void register_transformer_encoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

/// h0_i = E[x_i] W + pos_i. Throws IdOutOfRange for ids >= rows(E) or too many positions.
ad::Var embed_positions(BoundParams& p, const std::string& embed, const std::string& proj,
                        const std::vector<std::size_t>& ids, const Tensor& positions);

/// Multi-head attention sublayer: softmax(Q K^T / sqrt(d)) V, then output projection.
ad::Var attention_block(BoundParams& p, const std::string& prefix, ad::Var query_in, ad::Var kv_in,
                        std::size_t heads, bool causal, std::vector<Tensor>* probs = nullptr);
ad::Var feed_forward(BoundParams& p, const std::string& prefix, ad::Var x);

/// One decoder layer; `cross_probs` (optional) receives per-head cross-attention.
ad::Var decoder_layer(BoundParams& p, std::size_t layer, ad::Var x, ad::Var memory, const ModelConfig& cfg,
                      bool train, std::mt19937_64& rng, std::vector<Tensor>* cross_probs = nullptr);
ad::Var encoder_layer(BoundParams& p, std::size_t layer, ad::Var x, const ModelConfig& cfg, bool train,
                      std::mt19937_64& rng);

struct DecoderOutput {
  ad::Var logits;                  // T x K
  std::vector<Tensor> cross_probs;  // final layer, per head, T x S
};

/// Teacher-forced pass over a full input prefix.
DecoderOutput decode_sequence(BoundParams& p, ad::Var memory, const std::vector<std::size_t>& input_ids,
                              const ModelConfig& cfg, const Tensor& positions, bool train, std::mt19937_64& rng);

/// Encoder of the linearized-input baseline.
ad::Var encode_sequence(BoundParams& p, const std::vector<std::size_t>& ids, const ModelConfig& cfg,
                        const Tensor& positions, bool train, std::mt19937_64& rng);

/// Head-averaged rows of per-head attention matrices.
Tensor average_heads(const std::vector<Tensor>& probs);

/// Cached key/value decoding without a tape, one token at a time.
class IncrementalDecoder {
 public:
  struct State {
    std::vector<std::vector<Real>> keys;    // per layer, length x n
    std::vector<std::vector<Real>> values;  // per layer, length x n
    std::size_t length = 0;
  };

  struct Step {
    std::vector<Real> log_probs;  // K
    std::vector<Real> attention;  // final-layer cross-attention averaged over heads
  };

  IncrementalDecoder(const ParameterStore& store, const ModelConfig& cfg, const Tensor& positions, Tensor memory);

  State initial() const;
  Step step(State& state, std::size_t token) const;
  std::size_t memory_rows() const { return memory_.rows(); }

 private:
  const ParameterStore* store_;
  const ModelConfig* cfg_;
  const Tensor* positions_;
  Tensor memory_;
  std::vector<Tensor> mem_keys_;
  std::vector<Tensor> mem_values_;
  Tensor embed_t_;  // transpose of the target embedding, m x K
};

}  // namespace nabu
