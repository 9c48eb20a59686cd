#pragma once

// Small models and vocabularies shared by the unit tests.

#include <random>
#include <vector>

#include "nabu/config.hpp"
#include "nabu/graph.hpp"
#include "nabu/tokenizer.hpp"

namespace nabu::testing {

/// Dims 8, two heads, two layers, dropout off.
ModelConfig tiny_config(std::size_t vocab_size, EncoderKind encoder = EncoderKind::Gat);

/// BPE over the synthetic corpus texts and node feature words of its first `graphs` graphs.
Vocabulary synthetic_vocab(std::size_t graphs, std::size_t size);

/// 1..max_triples random triples over a small entity and predicate pool.
std::vector<Triple> random_triples(std::mt19937_64& rng, std::size_t max_triples = 7);

}  // namespace nabu::testing
