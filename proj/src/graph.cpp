#include "nabu/graph.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

namespace nabu {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
bool ascii_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool ascii_lower_or_digit(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); }

Triple parse_triple_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto bar = line.find('|', start);
    fields.push_back(trim(line.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start)));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  if (fields.size() != 3) {
    throw MalformedTriple(line_no, "expected 3 fields, got " + std::to_string(fields.size()));
  }
  for (auto f : fields) {
    if (f.empty()) throw MalformedTriple(line_no, "empty field");
  }
  if (fields[1].find_first_of("\t\n") != std::string_view::npos) {
    throw MalformedTriple(line_no, "predicate contains a control character");
  }
  return Triple{std::string(fields[0]), std::string(fields[1]), std::string(fields[2])};
}

}  // namespace

std::string_view language_code(Language lang) {
  switch (lang) {
    case Language::Eng: return "ENG";
    case Language::Ger: return "GER";
    case Language::Rus: return "RUS";
  }
  return "ENG";
}

Language parse_language(std::string_view code) {
  std::string up;
  for (char c : trim(code)) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (auto lang : kAllLanguages) {
    if (language_code(lang) == up) return lang;
  }
  throw UnknownLanguage("unknown language code '" + std::string(code) + "'");
}

std::vector<Language> parse_language_list(std::string_view csv) {
  std::vector<Language> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    auto comma = csv.find(',', start);
    auto item = trim(csv.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) {
      auto lang = parse_language(item);
      if (std::find(out.begin(), out.end(), lang) == out.end()) out.push_back(lang);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string language_token(Language lang) { return "<" + std::string(language_code(lang)) + ">"; }

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::A0: return "A0";
    case Relation::A1: return "A1";
    case Relation::Lang: return "LANG";
  }
  return "A0";
}

std::vector<Triple> parse_triples(std::string_view text, std::size_t first_line) {
  std::vector<Triple> out;
  auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = trim(lines[i]);
    if (line.empty()) continue;
    out.push_back(parse_triple_line(line, first_line + i));
  }
  return out;
}

ReifiedGraph reify(const std::vector<Triple>& triples, Language lang, PredicateNodes mode) {
  if (triples.empty()) throw EmptyGraph("cannot reify an empty triple set");

  ReifiedGraph g;
  g.language = lang;
  g.nodes.emplace_back(language_code(lang));
  g.kinds.push_back(NodeKind::Language);

  std::map<std::pair<NodeKind, std::string>, std::size_t> index;
  std::map<std::string, std::size_t> occurrences;
  auto node = [&](NodeKind kind, const std::string& label) {
    auto [it, inserted] = index.try_emplace({kind, label}, g.nodes.size());
    if (inserted) {
      g.nodes.push_back(label);
      g.kinds.push_back(kind);
    }
    return it->second;
  };

  std::vector<std::size_t> subjects;
  for (const auto& t : triples) {
    auto s = node(NodeKind::Entity, t.subject);
    std::size_t p;
    if (mode == PredicateNodes::PerOccurrence) {
      auto k = occurrences[t.predicate]++;
      p = node(NodeKind::Predicate, t.predicate + "#" + std::to_string(k));
    } else {
      p = node(NodeKind::Predicate, t.predicate);
    }
    auto o = node(NodeKind::Entity, t.object);
    g.edges.push_back({s, Relation::A0, p});
    g.edges.push_back({p, Relation::A1, o});
    g.triples.push_back({s, p, o});
    if (std::find(subjects.begin(), subjects.end(), s) == subjects.end()) subjects.push_back(s);
  }
  for (auto s : subjects) g.edges.push_back({g.language_node(), Relation::Lang, s});
  return g;
}

std::string strip_occurrence(std::string_view label) {
  auto hash = label.rfind('#');
  if (hash != std::string_view::npos && hash + 1 < label.size() &&
      std::all_of(label.begin() + static_cast<long>(hash) + 1, label.end(),
                  [](char c) { return c >= '0' && c <= '9'; })) {
    return std::string(label.substr(0, hash));
  }
  return std::string(label);
}

std::string surface_form(std::string_view label) {
  auto s = strip_occurrence(label);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

Linearization linearize(const ReifiedGraph& graph) {
  Linearization lin;
  lin.tokens.push_back(language_token(graph.language));
  lin.node_of.push_back(static_cast<long>(graph.language_node()));
  for (std::size_t i = 0; i < graph.triples.size(); ++i) {
    if (i > 0) {
      lin.tokens.emplace_back(kSeparatorToken);
      lin.node_of.push_back(-1);
    }
    const auto& t = graph.triples[i];
    for (auto n : {t.subject, t.predicate, t.object}) {
      lin.tokens.push_back(graph.kinds[n] == NodeKind::Predicate ? strip_occurrence(graph.nodes[n]) : graph.nodes[n]);
      lin.node_of.push_back(static_cast<long>(n));
    }
  }
  return lin;
}

std::vector<std::string> split_label_words(std::string_view label, NodeKind kind) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  if (kind == NodeKind::Entity) {
    for (char c : label) {
      if (c == '_' || c == ' ') {
        flush();
      } else {
        cur.push_back(ascii_lower(c));
      }
    }
    flush();
    return words;
  }
  auto name = strip_occurrence(label);
  for (std::size_t i = 0; i < name.size(); ++i) {
    char c = name[i];
    if (c == '_' || c == ' ') {
      flush();
      continue;
    }
    if (ascii_upper(c) && i > 0) {
      char prev = name[i - 1];
      bool next_lower = i + 1 < name.size() && name[i + 1] >= 'a' && name[i + 1] <= 'z';
      if (ascii_lower_or_digit(prev) || (ascii_upper(prev) && next_lower)) flush();
    }
    cur.push_back(ascii_lower(c));
  }
  flush();
  return words;
}

std::vector<std::vector<std::string>> node_feature_labels(const ReifiedGraph& graph) {
  std::vector<std::vector<std::string>> out;
  out.reserve(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (graph.kinds[i] == NodeKind::Language) {
      out.push_back({language_token(graph.language)});
    } else {
      out.push_back(split_label_words(graph.nodes[i], graph.kinds[i]));
    }
  }
  return out;
}

std::string dump_graph(const ReifiedGraph& graph) {
  auto edges = graph.edges;
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.source, a.relation, a.target) < std::tie(b.source, b.relation, b.target);
  });
  std::ostringstream os;
  for (const auto& e : edges) {
    os << graph.nodes[e.source] << " --" << relation_name(e.relation) << "--> " << graph.nodes[e.target] << '\n';
  }
  return os.str();
}

std::vector<GraphRecord> parse_triple_file(std::string_view text) {
  std::vector<GraphRecord> records;
  auto lines = split_lines(text);
  std::size_t i = 0;
  while (i < lines.size()) {
    if (trim(lines[i]).empty()) {
      ++i;
      continue;
    }
    GraphRecord rec;
    auto head = trim(lines[i]);
    if (head.substr(0, 5) != "lang=") {
      throw MalformedTriple(i + 1, "block must start with lang=<CODE>");
    }
    try {
      rec.language = parse_language(head.substr(5));
    } catch (const UnknownLanguage& e) {
      throw MalformedTriple(i + 1, e.what());
    }
    ++i;
    for (; i < lines.size() && !trim(lines[i]).empty(); ++i) {
      auto line = trim(lines[i]);
      if (line.substr(0, 3) == "id=") {
        rec.id = std::string(line.substr(3));
      } else if (line.substr(0, 5) == "text=") {
        rec.texts.emplace_back(trim(line.substr(5)));
      } else {
        rec.triples.push_back(parse_triple_line(line, i + 1));
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_triple_file(const std::vector<GraphRecord>& records) {
  std::ostringstream os;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (r > 0) os << '\n';
    os << "lang=" << language_code(rec.language) << '\n';
    if (!rec.id.empty()) os << "id=" << rec.id << '\n';
    for (const auto& t : rec.triples) os << t.subject << " | " << t.predicate << " | " << t.object << '\n';
    for (const auto& txt : rec.texts) os << "text=" << txt << '\n';
  }
  return os.str();
}

}  // namespace nabu
