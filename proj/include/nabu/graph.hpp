#pragma once

// RDF triple ingestion and reification into the A0/A1 binary-relation graph.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "nabu/common.hpp"

namespace nabu {

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;

  bool operator==(const Triple&) const = default;
};

enum class Language { Eng, Ger, Rus };

inline constexpr Language kAllLanguages[] = {Language::Eng, Language::Ger, Language::Rus};

std::string_view language_code(Language lang);
/// Accepts "ENG", "GER", "RUS" (case-insensitive). Throws UnknownLanguage.
Language parse_language(std::string_view code);
std::vector<Language> parse_language_list(std::string_view csv);
/// Special-token spelling of a language, e.g. "<ENG>".
std::string language_token(Language lang);

enum class Relation { A0, A1, Lang };
std::string_view relation_name(Relation r);

enum class NodeKind { Language, Entity, Predicate };

struct Edge {
  std::size_t source;
  Relation relation;
  std::size_t target;

  bool operator==(const Edge&) const = default;
};

struct TripleNodes {
  std::size_t subject;
  std::size_t predicate;
  std::size_t object;

  bool operator==(const TripleNodes&) const = default;
};

/// How predicate nodes are allocated during reification.
enum class PredicateNodes {
  PerOccurrence,  // every triple gets its own predicate node, labelled name#k
  Shared,         // one node per predicate name (reproduces subject/object confusion)
};

struct ReifiedGraph {
  std::vector<std::string> nodes;
  std::vector<NodeKind> kinds;
  std::vector<Edge> edges;
  std::vector<TripleNodes> triples;  // input order
  Language language = Language::Eng;

  std::size_t size() const { return nodes.size(); }
  /// The language node is always node 0.
  std::size_t language_node() const { return 0; }

  bool operator==(const ReifiedGraph&) const = default;
};

/// Parses "subject | predicate | object" lines. Blank lines are skipped.
/// `first_line` offsets the line numbers reported in MalformedTriple.
std::vector<Triple> parse_triples(std::string_view text, std::size_t first_line = 1);

ReifiedGraph reify(const std::vector<Triple>& triples, Language lang,
                   PredicateNodes mode = PredicateNodes::PerOccurrence);

/// Strips the "#k" occurrence suffix of predicate node labels.
std::string strip_occurrence(std::string_view label);

/// Human-readable surface of a node label: underscores become spaces, suffix stripped.
std::string surface_form(std::string_view label);

inline constexpr std::string_view kSeparatorToken = "<sep>";

struct Linearization {
  std::vector<std::string> tokens;
  std::vector<long> node_of;  // source node per token, -1 for the separator
};

/// Language token, then "subject predicate object" per triple, separator between triples.
Linearization linearize(const ReifiedGraph& graph);

/// Per node: lowercase feature words (underscore split for entities, camelCase split
/// for predicates). The language node yields its special token.
std::vector<std::vector<std::string>> node_feature_labels(const ReifiedGraph& graph);

std::vector<std::string> split_label_words(std::string_view label, NodeKind kind);

/// "node_i --REL--> node_j" lines sorted by (source, relation, destination).
std::string dump_graph(const ReifiedGraph& graph);

/// One blank-line-delimited block of a triple file.
struct GraphRecord {
  Language language = Language::Eng;
  std::string id;
  std::vector<Triple> triples;
  std::vector<std::string> texts;  // reference verbalizations, if any

  bool operator==(const GraphRecord&) const = default;
};

/// Triple file: blocks separated by blank lines; each block starts with "lang=<CODE>",
/// may carry "id=<name>" and "text=<reference>" lines, the rest are triples.
std::vector<GraphRecord> parse_triple_file(std::string_view text);
std::string format_triple_file(const std::vector<GraphRecord>& records);

}  // namespace nabu
