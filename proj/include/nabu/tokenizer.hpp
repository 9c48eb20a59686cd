#pragma once

// Byte-pair-encoding subword vocabulary shared by all target languages.

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nabu/common.hpp"
#include "nabu/graph.hpp"

namespace nabu {

/// Word-boundary marker (U+2581). Spaces are encoded as this character.
inline constexpr std::string_view kWordMarker = "\xE2\x96\x81";
/// How decode() renders UNK (U+2047).
inline constexpr std::string_view kUnkSurface = "\xE2\x81\x87";

enum SpecialToken : std::size_t {
  kPad = 0,
  kBos = 1,
  kEos = 2,
  kUnk = 3,
  kSep = 4,
  kLangEng = 5,
  kLangGer = 6,
  kLangRus = 7,
  kSpecialCount = 8,
};

std::size_t language_token_id(Language lang);

class Vocabulary {
 public:
  Vocabulary();

  static const std::vector<std::string>& specials();

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  /// Id of an exact token string, or kUnk.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;

  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  std::vector<std::size_t> encode(std::string_view text) const;
  std::string decode(const std::vector<std::size_t>& ids) const;
  /// Segmentation into piece strings (UNK pieces keep their raw character).
  std::vector<std::string> segment(std::string_view text) const;

  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);
  std::uint64_t hash() const { return fnv1a(serialize()); }

  bool operator==(const Vocabulary& o) const { return alphabet_ == o.alphabet_ && merges_ == o.merges_; }

  /// Builds a vocabulary from an alphabet and an ordered merge list.
  static Vocabulary from_parts(std::vector<std::string> alphabet, std::vector<std::pair<std::string, std::string>> merges);

 private:
  void add_token(const std::string& tok);
  std::vector<std::string> apply_merges(std::vector<std::string> symbols) const;

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> alphabet_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::map<std::pair<std::string, std::string>, std::size_t> rank_;
};

/// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties broken by the
/// lexicographically smallest merged symbol, then left part) until the vocabulary
/// reaches target_size or no pair occurs at least twice. Throws CorpusTooSmall when the
/// specials plus the alphabet already exceed target_size.
Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t target_size);

/// Splits UTF-8 text into code points (invalid bytes become single-byte units).
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace nabu
