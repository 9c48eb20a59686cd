#include "nabu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include "json.hpp"
#include "nabu/common.hpp"

namespace nabu {

namespace {

using Counts = std::map<std::vector<std::string>, std::size_t>;

Counts ngrams(const std::vector<std::string>& units, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= units.size(); ++i) {
    ++c[std::vector<std::string>(units.begin() + static_cast<long>(i), units.begin() + static_cast<long>(i + n))];
  }
  return c;
}

std::size_t clipped_matches(const Counts& hyp, const Counts& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : hyp) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

std::vector<std::string> chars_without_space(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, text.size() - i);
    if (!(len == 1 && std::isspace(c))) out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

void check_sizes(std::size_t hyps, std::size_t refs) {
  if (hyps != refs) {
    throw LengthMismatch(std::to_string(hyps) + " hypotheses but " + std::to_string(refs) + " reference sets");
  }
}

constexpr std::size_t kCharOrder = 6;
constexpr std::size_t kWordOrder = 2;
constexpr std::size_t kChrfOrders = kCharOrder + kWordOrder;
constexpr double kChrfBeta = 2.0;

struct ChrfStats {
  std::array<double, kChrfOrders> match{}, hyp{}, ref{};
};

ChrfStats chrf_stats(std::string_view hyp, std::string_view ref) {
  ChrfStats s;
  auto hc = chars_without_space(hyp), rc = chars_without_space(ref);
  auto hw = bleu_tokenize(hyp), rw = bleu_tokenize(ref);
  for (std::size_t k = 0; k < kChrfOrders; ++k) {
    const bool chars = k < kCharOrder;
    const std::size_t n = chars ? k + 1 : k - kCharOrder + 1;
    auto hg = ngrams(chars ? hc : hw, n), rg = ngrams(chars ? rc : rw, n);
    s.match[k] = static_cast<double>(clipped_matches(hg, rg));
    for (const auto& [g, c] : hg) s.hyp[k] += static_cast<double>(c);
    for (const auto& [g, c] : rg) s.ref[k] += static_cast<double>(c);
  }
  return s;
}

ChrfResult chrf_from_stats(const ChrfStats& s) {
  ChrfResult r;
  double f_sum = 0;
  std::size_t effective = 0;
  const double b2 = kChrfBeta * kChrfBeta;
  for (std::size_t k = 0; k < kChrfOrders; ++k) {
    const double p = s.hyp[k] > 0 ? s.match[k] / s.hyp[k] : 0;
    const double rc = s.ref[k] > 0 ? s.match[k] / s.ref[k] : 0;
    const double denom = b2 * p + rc;
    if (denom > 0) f_sum += (1 + b2) * p * rc / denom;
    if (s.hyp[k] > 0 && s.ref[k] > 0) {
      ++effective;
      r.precision += p;
      r.recall += rc;
    }
  }
  if (effective == 0) return r;
  r.score = 100.0 * f_sum / static_cast<double>(effective);
  r.precision /= static_cast<double>(effective);
  r.recall /= static_cast<double>(effective);
  return r;
}

}  // namespace

std::vector<std::string> bleu_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

BleuResult bleu(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs) {
  check_sizes(hyps.size(), refs.size());
  BleuResult r;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    if (refs[s].empty()) throw LengthMismatch("segment " + std::to_string(s) + " has no reference");
    auto h = bleu_tokenize(hyps[s]);
    std::vector<std::vector<std::string>> rt;
    for (const auto& ref : refs[s]) rt.push_back(bleu_tokenize(ref));

    std::size_t closest = rt.front().size();
    for (const auto& t : rt) {
      const auto d = std::llabs(static_cast<long long>(t.size()) - static_cast<long long>(h.size()));
      const auto best = std::llabs(static_cast<long long>(closest) - static_cast<long long>(h.size()));
      if (d < best || (d == best && t.size() < closest)) closest = t.size();
    }
    r.hyp_length += h.size();
    r.ref_length += closest;

    for (std::size_t n = 1; n <= 4; ++n) {
      auto hg = ngrams(h, n);
      Counts max_ref;
      for (const auto& t : rt) {
        for (const auto& [g, c] : ngrams(t, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      r.matches[n - 1] += clipped_matches(hg, max_ref);
      r.totals[n - 1] += h.size() >= n ? h.size() - n + 1 : 0;
    }
  }
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = r.totals[n] > 0 ? static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]) : 0.0;
    r.precisions[n] = p;
    log_sum += std::log(p > 0 ? p : kBleuEpsilon);
  }
  if (r.hyp_length == 0) return r;
  const double c = static_cast<double>(r.hyp_length), ref = static_cast<double>(r.ref_length);
  r.brevity_penalty = std::min(1.0, std::exp(1.0 - ref / c));
  r.bleu = 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

ChrfResult chrfpp(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs) {
  check_sizes(hyps.size(), refs.size());
  ChrfStats total;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    if (refs[s].empty()) throw LengthMismatch("segment " + std::to_string(s) + " has no reference");
    ChrfStats best;
    double best_score = -1;
    for (const auto& ref : refs[s]) {
      auto st = chrf_stats(hyps[s], ref);
      const double sc = chrf_from_stats(st).score;
      if (sc > best_score) {
        best_score = sc;
        best = st;
      }
    }
    for (std::size_t k = 0; k < kChrfOrders; ++k) {
      total.match[k] += best.match[k];
      total.hyp[k] += best.hyp[k];
      total.ref[k] += best.ref[k];
    }
  }
  return chrf_from_stats(total);
}

ScoreReport score(const std::vector<std::string>& hyps, const std::vector<std::vector<std::string>>& refs) {
  ScoreReport rep;
  rep.bleu = bleu(hyps, refs);
  rep.chrfpp = chrfpp(hyps, refs);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    SegmentScore seg;
    seg.bleu = bleu({hyps[s]}, {refs[s]}).bleu;
    seg.chrfpp = chrfpp({hyps[s]}, {refs[s]}).score;
    rep.segments.push_back(seg);
  }
  return rep;
}

std::string ScoreReport::to_json() const {
  nlohmann::ordered_json j;
  j["bleu"] = bleu.bleu;
  j["chrfpp"] = chrfpp.score;
  j["meteor"] = nullptr;
  j["bleu_precisions"] = bleu.precisions;
  j["bleu_matches"] = bleu.matches;
  j["bleu_totals"] = bleu.totals;
  j["brevity_penalty"] = bleu.brevity_penalty;
  j["hyp_length"] = bleu.hyp_length;
  j["ref_length"] = bleu.ref_length;
  j["bleu_smoothing"] = "epsilon";
  j["bleu_smoothing_value"] = kBleuEpsilon;
  j["bleu_tokenization"] = "punctuation-detached whitespace split";
  j["chrfpp_precision"] = chrfpp.precision;
  j["chrfpp_recall"] = chrfpp.recall;
  j["segments"] = segments.size();
  return j.dump(2) + "\n";
}

std::string ScoreReport::segments_csv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "index,bleu,chrfpp\n";
  for (std::size_t i = 0; i < segments.size(); ++i) {
    os << i << ',' << segments[i].bleu << ',' << segments[i].chrfpp << '\n';
  }
  return os.str();
}

}  // namespace nabu
