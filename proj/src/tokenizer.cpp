#include "nabu/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace nabu {

namespace {

constexpr std::size_t kNoRank = std::numeric_limits<std::size_t>::max();

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

// Spaces become the marker and every non-empty text gets a leading marker; words
// start at each marker.
std::vector<std::vector<std::string>> pretokenize(std::string_view text) {
  std::vector<std::vector<std::string>> words;
  if (text.empty()) return words;
  words.push_back({std::string(kWordMarker)});
  for (auto& ch : utf8_chars(text)) {
    if (ch == " " || ch == kWordMarker) {
      words.push_back({std::string(kWordMarker)});
    } else {
      words.back().push_back(std::move(ch));
    }
  }
  return words;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      case ' ': out += "\\s"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\' || i + 1 == s.size()) {
      out.push_back(s[i]);
      continue;
    }
    switch (s[++i]) {
      case '\\': out.push_back('\\'); break;
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case 's': out.push_back(' '); break;
      default: throw ConfigError("bad escape in vocabulary file");
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    auto len = utf8_length(static_cast<unsigned char>(text[i]));
    if (i + len > text.size()) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::size_t language_token_id(Language lang) {
  switch (lang) {
    case Language::Eng: return kLangEng;
    case Language::Ger: return kLangGer;
    case Language::Rus: return kLangRus;
  }
  return kLangEng;
}

const std::vector<std::string>& Vocabulary::specials() {
  static const std::vector<std::string> s{"<pad>", "<s>", "</s>", "<unk>", "<sep>", "<ENG>", "<GER>", "<RUS>"};
  return s;
}

Vocabulary::Vocabulary() {
  for (const auto& s : specials()) tokens_.push_back(s);
}

void Vocabulary::add_token(const std::string& tok) {
  if (ids_.count(tok)) return;
  ids_.emplace(tok, tokens_.size());
  tokens_.push_back(tok);
}

Vocabulary Vocabulary::from_parts(std::vector<std::string> alphabet,
                                  std::vector<std::pair<std::string, std::string>> merges) {
  Vocabulary v;
  v.alphabet_ = std::move(alphabet);
  for (const auto& a : v.alphabet_) v.add_token(a);
  for (const auto& m : merges) {
    if (!v.ids_.count(m.first) || !v.ids_.count(m.second)) {
      throw ConfigError("merge '" + m.first + "' + '" + m.second + "' references unknown symbols");
    }
    v.rank_.emplace(m, v.merges_.size());
    v.merges_.push_back(m);
    v.add_token(m.first + m.second);
  }
  return v;
}

std::size_t Vocabulary::id(std::string_view token) const {
  const auto& sp = specials();
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i] == token) return i;
  }
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return id(token) != kUnk || token == "<unk>"; }

std::vector<std::string> Vocabulary::apply_merges(std::vector<std::string> symbols) const {
  while (symbols.size() > 1) {
    std::size_t best = kNoRank;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank_.find({symbols[i], symbols[i + 1]});
      if (it != rank_.end()) best = std::min(best, it->second);
    }
    if (best == kNoRank) break;
    const auto& [left, right] = merges_[best];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(left + right);
        ++i;
      } else {
        next.push_back(std::move(symbols[i]));
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<std::string> Vocabulary::segment(std::string_view text) const {
  std::vector<std::string> pieces;
  for (auto& word : pretokenize(text)) {
    for (auto& p : apply_merges(std::move(word))) pieces.push_back(std::move(p));
  }
  return pieces;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  for (const auto& p : segment(text)) {
    auto it = ids_.find(p);
    ids.push_back(it == ids_.end() ? static_cast<std::size_t>(kUnk) : it->second);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::string raw;
  for (auto i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    if (i == kUnk) {
      raw += kUnkSurface;
    } else {
      raw += token(i);
    }
  }
  std::string out;
  std::size_t pos = 0;
  if (raw.compare(0, kWordMarker.size(), kWordMarker) == 0) pos = kWordMarker.size();
  while (pos < raw.size()) {
    if (raw.compare(pos, kWordMarker.size(), kWordMarker) == 0) {
      out.push_back(' ');
      pos += kWordMarker.size();
    } else {
      out.push_back(raw[pos++]);
    }
  }
  return out;
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  os << "[specials]\n";
  for (const auto& s : specials()) os << s << '\n';
  os << "[alphabet]\n";
  for (const auto& a : alphabet_) os << escape(a) << '\n';
  os << "[merges]\n";
  for (const auto& [l, r] : merges_) os << escape(l) << ' ' << escape(r) << '\n';
  return os.str();
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> specials_seen, alphabet;
  std::vector<std::pair<std::string, std::string>> merges;
  std::string section;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    auto line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? text.size() : end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line == "[specials]" || line == "[alphabet]" || line == "[merges]") {
      section = std::string(line);
      continue;
    }
    if (section == "[specials]") {
      specials_seen.emplace_back(line);
    } else if (section == "[alphabet]") {
      alphabet.push_back(unescape(line));
    } else if (section == "[merges]") {
      auto sp = line.find(' ');
      if (sp == std::string_view::npos) throw ConfigError("vocabulary line " + std::to_string(line_no) + ": bad merge");
      merges.emplace_back(unescape(line.substr(0, sp)), unescape(line.substr(sp + 1)));
    } else {
      throw ConfigError("vocabulary line " + std::to_string(line_no) + ": entry outside a section");
    }
  }
  if (specials_seen != specials()) throw ConfigError("vocabulary specials do not match the expected fixed order");
  return from_parts(std::move(alphabet), std::move(merges));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write vocabulary " + path);
  f << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read vocabulary " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

Vocabulary train_bpe(const std::vector<std::string>& corpus, std::size_t target_size) {
  std::map<std::vector<std::string>, std::size_t> freq;
  std::set<std::string> alphabet_set;
  for (const auto& line : corpus) {
    for (auto& w : pretokenize(line)) {
      for (const auto& ch : w) alphabet_set.insert(ch);
      ++freq[std::move(w)];
    }
  }
  if (freq.empty()) throw CorpusTooSmall("empty tokenizer corpus");
  std::vector<std::string> alphabet(alphabet_set.begin(), alphabet_set.end());
  if (kSpecialCount + alphabet.size() > target_size) {
    throw CorpusTooSmall("alphabet of " + std::to_string(alphabet.size()) + " symbols plus specials exceeds target size " +
                         std::to_string(target_size));
  }

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words(freq.begin(), freq.end());
  std::set<std::string> tokens(alphabet.begin(), alphabet.end());
  std::vector<std::pair<std::string, std::string>> merges;

  while (kSpecialCount + tokens.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& [syms, n] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += n;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    std::string best_merged;
    for (const auto& [pair, n] : counts) {
      if (n < 2) continue;
      std::string merged = pair.first + pair.second;
      if (!best || n > best_count || (n == best_count && (merged < best_merged ||
                                                          (merged == best_merged && pair.first < best->first)))) {
        best = &pair;
        best_count = n;
        best_merged = std::move(merged);
      }
    }
    if (!best) break;
    const auto left = best->first;
    const auto right = best->second;
    merges.emplace_back(left, right);
    tokens.insert(best_merged);
    for (auto& [syms, n] : words) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
          next.push_back(best_merged);
          ++i;
        } else {
          next.push_back(std::move(syms[i]));
        }
      }
      syms = std::move(next);
    }
  }
  return Vocabulary::from_parts(std::move(alphabet), std::move(merges));
}

}  // namespace nabu
