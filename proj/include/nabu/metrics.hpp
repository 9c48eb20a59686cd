#pragma once

// Corpus BLEU and chrF++.

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace nabu {

/// Whitespace split after detaching ASCII punctuation into separate tokens.
std::vector<std::string> bleu_tokenize(std::string_view text);

inline constexpr double kBleuEpsilon = 1e-9;

struct BleuResult {
  double bleu = 0;  // 0..100
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

/// Pooled clipped n-gram counts (n = 1..4); each hypothesis has one or more references.
/// Clipping uses the maximum count over references; the effective reference length is the
/// one closest to the hypothesis (shorter wins ties). Zero precisions become kBleuEpsilon.
BleuResult bleu(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs);

struct ChrfResult {
  double score = 0;  // 0..100
  double precision = 0;
  double recall = 0;
};

/// Character n-grams 1..6 (whitespace removed) plus word n-grams 1..2, beta = 2.
ChrfResult chrfpp(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs);

struct SegmentScore {
  double bleu = 0;
  double chrfpp = 0;
};

struct ScoreReport {
  BleuResult bleu;
  ChrfResult chrfpp;
  std::vector<SegmentScore> segments;

  /// JSON object; "meteor" is present as null.
  std::string to_json() const;
  /// "index,bleu,chrfpp" lines with a header.
  std::string segments_csv() const;
};

ScoreReport score(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs);

}  // namespace nabu
