#include "nabu/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <random>
#include <set>
#include <string>

namespace nabu {

namespace {

enum class Kind { Person, City, Country, Institute, Book, Company, Year };

struct Entity {
  std::string label;
  Kind kind;
  std::array<std::string, 3> surface;  // ENG, GER, RUS
};

struct PredicateSpec {
  const char* name;
  Kind subject;
  Kind object;
  std::array<const char*, 3> pattern;  // {S} and {O} placeholders
};

// Order here is also the sentence order within a text.
const PredicateSpec kPredicates[] = {
    {"birthPlace", Kind::Person, Kind::City,
     {"{S} was born in {O}.", "{S} wurde in {O} geboren.", "{S} родился в городе {O}."}},
    {"almaMater", Kind::Person, Kind::Institute,
     {"{S} studied at {O}.", "{S} studierte am {O}.", "{S} учился в {O}."}},
    {"author", Kind::Book, Kind::Person,
     {"{S} was written by {O}.", "{S} wurde von {O} geschrieben.", "Книгу {S} написал {O}."}},
    {"country", Kind::City, Kind::Country,
     {"{S} is a city in {O}.", "{S} ist eine Stadt in {O}.", "{S} является городом в стране {O}."}},
    {"leader", Kind::Country, Kind::Person,
     {"The leader of {S} is {O}.", "Das Staatsoberhaupt von {S} ist {O}.", "Лидером страны {S} является {O}."}},
    {"capital", Kind::Country, Kind::City,
     {"The capital of {S} is {O}.", "Die Hauptstadt von {S} ist {O}.", "Столицей страны {S} является {O}."}},
    {"location", Kind::Institute, Kind::City,
     {"{S} is located in {O}.", "{S} befindet sich in {O}.", "{S} находится в городе {O}."}},
    {"foundingYear", Kind::Institute, Kind::Year,
     {"{S} was founded in {O}.", "{S} wurde {O} gegründet.", "{S} был основан в {O} году."}},
    {"headquarter", Kind::Company, Kind::City,
     {"{S} has its headquarters in {O}.", "{S} hat seinen Sitz in {O}.", "Штаб-квартира {S} находится в городе {O}."}},
};

struct CountryName {
  const char* label;
  std::array<const char*, 3> surface;
};

const CountryName kCountries[] = {
    {"Velmora", {"Velmora", "Velmorien", "Вельмора"}},   {"Kessaria", {"Kessaria", "Kessarien", "Кессария"}},
    {"Tirelia", {"Tirelia", "Tirelien", "Тирелия"}},     {"Sarnia", {"Sarnia", "Sarnien", "Сарния"}},
    {"Dunmark", {"Dunmark", "Dunmark", "Данмарк"}},      {"Moravel", {"Moravel", "Moravel", "Моравель"}},
    {"Ostrelia", {"Ostrelia", "Ostrelien", "Острелия"}}, {"Galvania", {"Galvania", "Galvanien", "Гальвания"}},
};

const char* kSyllables[] = {"ka", "lo", "vi", "ren", "dal", "mor", "tis", "bel", "gar", "nu",
                            "sen", "tor", "el", "ri", "mo", "an", "qui", "ros", "fen", "ba"};

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  std::string word(std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) w += kSyllables[pick(std::size(kSyllables))];
    w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
  }

  Entity make(Kind kind) {
    Entity e;
    e.kind = kind;
    for (int attempt = 0;; ++attempt) {
      switch (kind) {
        case Kind::Person: e.label = word(2) + "_" + word(2 + pick(2)); break;
        case Kind::City: e.label = word(2 + pick(2)); break;
        case Kind::Country: {
          const auto& c = kCountries[pick(std::size(kCountries))];
          e.label = c.label;
          e.surface = {c.surface[0], c.surface[1], c.surface[2]};
          if (!used_.count(e.label) || attempt > 20) {
            used_.insert(e.label);
            return e;
          }
          continue;
        }
        case Kind::Institute: e.label = word(2) + "_Institute"; break;
        case Kind::Book: e.label = word(2) + "_" + word(2); break;
        case Kind::Company: e.label = word(2) + "_Works"; break;
        case Kind::Year: e.label = std::to_string(1800 + pick(211)); break;
      }
      if (!used_.count(e.label)) break;
    }
    used_.insert(e.label);
    std::string s = e.label;
    std::replace(s.begin(), s.end(), '_', ' ');
    e.surface = {s, s, s};
    return e;
  }

  void reset_graph() { used_.clear(); }

 private:
  std::mt19937_64 rng_;
  std::set<std::string> used_;
};

std::string fill(const char* pattern, const std::string& s, const std::string& o) {
  std::string out(pattern);
  auto sp = out.find("{S}");
  out.replace(sp, 3, s);
  auto op = out.find("{O}");
  out.replace(op, 3, o);
  return out;
}

// Triple counts 1..7, skewed towards small graphs.
constexpr std::array<std::size_t, 7> kSizeWeights = {30, 25, 18, 12, 8, 4, 3};

}  // namespace

std::vector<GraphRecord> synthetic_corpus(std::size_t graphs, std::uint64_t seed) {
  Generator gen(seed);
  std::vector<GraphRecord> out;
  std::size_t weight_total = 0;
  for (auto w : kSizeWeights) weight_total += w;

  for (std::size_t g = 0; g < graphs; ++g) {
    gen.reset_graph();
    std::size_t draw = gen.pick(weight_total), size = 1;
    for (std::size_t i = 0; i < kSizeWeights.size(); ++i) {
      if (draw < kSizeWeights[i]) {
        size = i + 1;
        break;
      }
      draw -= kSizeWeights[i];
    }

    std::vector<Entity> entities;
    std::set<std::pair<std::size_t, std::size_t>> used;  // (entity, predicate) as subject
    struct Fact {
      std::size_t pred, subject, object;
    };
    std::vector<Fact> facts;
    const Kind starts[] = {Kind::Person, Kind::City, Kind::Country, Kind::Institute, Kind::Book, Kind::Company};
    entities.push_back(gen.make(starts[gen.pick(std::size(starts))]));

    for (int guard = 0; facts.size() < size && guard < 200; ++guard) {
      const std::size_t e = gen.pick(entities.size());
      std::vector<std::pair<std::size_t, bool>> options;  // (predicate, entity is subject)
      for (std::size_t p = 0; p < std::size(kPredicates); ++p) {
        if (kPredicates[p].subject == entities[e].kind && !used.count({e, p})) options.push_back({p, true});
        if (kPredicates[p].object == entities[e].kind && entities[e].kind != Kind::Year) options.push_back({p, false});
      }
      if (options.empty()) continue;
      const auto [p, as_subject] = options[gen.pick(options.size())];
      const auto& spec = kPredicates[p];
      entities.push_back(gen.make(as_subject ? spec.object : spec.subject));
      const std::size_t other = entities.size() - 1;
      const std::size_t s = as_subject ? e : other, o = as_subject ? other : e;
      used.insert({s, p});
      facts.push_back({p, s, o});
    }
    std::sort(facts.begin(), facts.end(), [&](const Fact& a, const Fact& b) {
      if (a.pred != b.pred) return a.pred < b.pred;
      if (entities[a.subject].label != entities[b.subject].label) return entities[a.subject].label < entities[b.subject].label;
      return entities[a.object].label < entities[b.object].label;
    });

    char id[32];
    std::snprintf(id, sizeof(id), "synth-%04zu", g + 1);
    for (std::size_t li = 0; li < 3; ++li) {
      GraphRecord rec;
      rec.language = kAllLanguages[li];
      rec.id = id;
      std::string text;
      for (const auto& f : facts) {
        rec.triples.push_back({entities[f.subject].label, kPredicates[f.pred].name, entities[f.object].label});
        if (!text.empty()) text += ' ';
        text += fill(kPredicates[f.pred].pattern[li], entities[f.subject].surface[li], entities[f.object].surface[li]);
      }
      rec.texts.push_back(std::move(text));
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace nabu
