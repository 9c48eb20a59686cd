#pragma once

// Templated facts about invented entities, verbalized in English, German and Russian.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nabu/graph.hpp"

namespace nabu {

/// `graphs` graphs with 1..7 triples each; every graph yields one record per language,
/// ids "synth-NNNN" shared across languages. Records are ordered graph-major.
std::vector<GraphRecord> synthetic_corpus(std::size_t graphs, std::uint64_t seed);

}  // namespace nabu
