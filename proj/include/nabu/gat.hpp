#pragma once

// Graph-attention encoder over reified graphs.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "nabu/autodiff.hpp"
#include "nabu/config.hpp"
#include "nabu/graph.hpp"
#include "nabu/params.hpp"
#include "nabu/tokenizer.hpp"

namespace nabu {

/// Index form of a reified graph, ready for embedding.
struct GraphInputs {
  std::size_t nodes = 0;
  std::vector<std::vector<std::size_t>> node_tokens;  // subword ids per node
  std::vector<std::size_t> edge_source;
  std::vector<std::size_t> edge_target;
  std::vector<Relation> edge_relation;
  /// N_i: undirected neighbours plus the node itself, ascending.
  std::vector<std::vector<std::size_t>> neighbors;
};

GraphInputs prepare_graph_inputs(const ReifiedGraph& graph, const Vocabulary& vocab);
/// Rebuilds N_i from the edge list (undirected, with self-loops).
std::vector<std::vector<std::size_t>> neighborhoods(std::size_t nodes, const std::vector<std::size_t>& source,
                                                    const std::vector<std::size_t>& target);
std::vector<unsigned char> adjacency_mask(const std::vector<std::vector<std::size_t>>& neighbors);

/// The node (H), source (S), destination (D) and label (L) matrices plus the
/// per-node aggregated edge vector (E).
struct EncoderInputs {
  ad::Var node;
  ad::Var source;
  ad::Var destination;
  ad::Var label;
  ad::Var edge;
  std::vector<std::vector<std::size_t>> adjacency;
};

void register_gat_encoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

EncoderInputs build_inputs(BoundParams& p, const GraphInputs& in, const ModelConfig& cfg);

/// ReLU(concat(S, D) W_e + b_e), one row per edge.
ad::Var edge_fuse(BoundParams& p, ad::Var source, ad::Var destination);
/// Per-node aggregation of edge rows over incoming edges (mean or sum). Nodes without
/// incoming edges get a zero row.
ad::Var aggregate_edges(ad::Var edges, const std::vector<std::size_t>& edge_target, std::size_t nodes,
                        EdgeAggregation mode);

struct GatLayerOutput {
  ad::Var out;                // residual + layer norm of the fused heads
  ad::Var heads;              // concatenated per-head ELU outputs, before fusion
  std::vector<Tensor> alpha;  // per head, z x z, zero outside N_i
};

GatLayerOutput gat_layer(BoundParams& p, std::size_t layer, ad::Var x,
                         const std::vector<std::vector<std::size_t>>& neighbors, const ModelConfig& cfg, bool train,
                         std::mt19937_64& rng);

struct GraphEncoding {
  ad::Var memory;
  std::vector<std::vector<Tensor>> alpha;  // [layer][head]
};

GraphEncoding encode_graph(BoundParams& p, const GraphInputs& in, const ModelConfig& cfg, bool train,
                           std::mt19937_64& rng);

/// Text dump of attention coefficients, one matrix per layer/head.
std::string dump_attention(const std::vector<std::vector<Tensor>>& alpha, const std::vector<std::string>& labels);

}  // namespace nabu
