#include "nabu/decoding.hpp"

#include <algorithm>
#include <cmath>

namespace nabu {

namespace {

struct Live {
  Hypothesis hyp;
  std::size_t last = kBos;
  StepScorer::State state;
};

struct Candidate {
  std::size_t parent;
  std::size_t token;
  Real log_prob;
};

}  // namespace

ModelScorer::ModelScorer(const Model& model, Tensor memory) : decoder_(model.decoder(std::move(memory))) {}

StepScorer::State ModelScorer::initial() {
  return std::make_shared<const IncrementalDecoder::State>(decoder_.initial());
}

StepOutput ModelScorer::step(const State& state, std::size_t token, State& next) {
  auto s = std::make_shared<IncrementalDecoder::State>(*static_cast<const IncrementalDecoder::State*>(state.get()));
  auto out = decoder_.step(*s, token);
  next = std::move(s);
  return {std::move(out.log_probs), std::move(out.attention)};
}

Real normalized_score(Real log_prob, std::size_t length, Real alpha) {
  if (length == 0) return log_prob;
  return log_prob / std::pow(static_cast<Real>(length), alpha);
}

std::vector<Hypothesis> beam_search(StepScorer& scorer, const BeamConfig& cfg) {
  if (cfg.beam_size == 0 || cfg.max_len == 0) throw ConfigError("beam_size and max_len must be >= 1");
  std::vector<Live> live(1);
  live[0].state = scorer.initial();
  std::vector<Hypothesis> finished;

  auto finish = [&](Hypothesis h, bool eos) {
    h.finished = true;
    h.ended_by_eos = eos;
    h.score = normalized_score(h.log_prob, h.tokens.size() + (eos ? 1 : 0), cfg.length_penalty);
    finished.push_back(std::move(h));
  };

  for (std::size_t t = 0; t < cfg.max_len && !live.empty(); ++t) {
    const std::size_t width = cfg.beam_size - finished.size();
    std::vector<Candidate> cands;
    std::vector<StepOutput> outputs;
    std::vector<StepScorer::State> next_states(live.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      outputs.push_back(scorer.step(live[i].state, live[i].last, next_states[i]));
      const auto& lp = outputs.back().log_probs;
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (v == kPad || v == kBos) continue;
        cands.push_back({i, v, live[i].hyp.log_prob + lp[v]});
      }
    }
    const std::size_t keep = std::min(width, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = cands[c];
      Hypothesis h = live[cand.parent].hyp;
      h.log_prob = cand.log_prob;
      if (cand.token == kEos) {
        finish(std::move(h), true);
        continue;
      }
      h.tokens.push_back(cand.token);
      h.attention.push_back(outputs[cand.parent].attention);
      next.push_back({std::move(h), cand.token, next_states[cand.parent]});
    }
    live = std::move(next);
  }
  for (auto& l : live) finish(std::move(l.hyp), false);

  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  if (finished.size() > cfg.beam_size) finished.resize(cfg.beam_size);
  return finished;
}

Hypothesis greedy_decode(StepScorer& scorer, std::size_t max_len) {
  Hypothesis h;
  auto state = scorer.initial();
  std::size_t last = kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    StepScorer::State next;
    auto out = scorer.step(state, last, next);
    std::size_t best = kEos;
    Real best_lp = -INFINITY;
    for (std::size_t v = 0; v < out.log_probs.size(); ++v) {
      if (v == kPad || v == kBos) continue;
      if (out.log_probs[v] > best_lp) {
        best_lp = out.log_probs[v];
        best = v;
      }
    }
    h.log_prob += best_lp;
    if (best == kEos) {
      h.ended_by_eos = true;
      break;
    }
    h.tokens.push_back(best);
    h.attention.push_back(std::move(out.attention));
    state = std::move(next);
    last = best;
  }
  h.finished = true;
  return h;
}

CopyResult apply_copy(const Hypothesis& hyp, const ReifiedGraph& graph, const std::vector<long>& node_of,
                      const Vocabulary& vocab) {
  CopyResult out;
  std::string raw;
  for (std::size_t pos = 0; pos < hyp.tokens.size(); ++pos) {
    const auto tok = hyp.tokens[pos];
    if (tok == kPad || tok == kBos || tok == kEos) continue;
    if (tok != kUnk) {
      raw += vocab.token(tok);
      continue;
    }
    long best_row = -1;
    if (pos < hyp.attention.size()) {
      const auto& att = hyp.attention[pos];
      for (std::size_t r = 0; r < att.size() && r < node_of.size(); ++r) {
        if (node_of[r] < 0) continue;
        if (best_row < 0 || att[r] > att[static_cast<std::size_t>(best_row)]) best_row = static_cast<long>(r);
      }
    }
    if (best_row < 0) {
      raw += kUnkSurface;
      continue;
    }
    CopyRecord rec;
    rec.position = pos;
    rec.node = static_cast<std::size_t>(node_of[static_cast<std::size_t>(best_row)]);
    const auto surface = surface_form(graph.nodes.at(rec.node));
    auto ids = vocab.encode(surface);
    if (std::find(ids.begin(), ids.end(), static_cast<std::size_t>(kUnk)) == ids.end()) {
      rec.stage = 1;
      rec.surface = vocab.decode(ids);
    } else {
      rec.stage = 2;
      rec.surface = surface;
    }
    raw += kWordMarker;
    for (char c : rec.surface) {
      if (c == ' ') {
        raw += kWordMarker;
      } else {
        raw.push_back(c);
      }
    }
    out.copies.push_back(std::move(rec));
  }
  // Same marker handling as Vocabulary::decode.
  std::size_t pos = 0;
  if (raw.compare(0, kWordMarker.size(), kWordMarker) == 0) pos = kWordMarker.size();
  while (pos < raw.size()) {
    if (raw.compare(pos, kWordMarker.size(), kWordMarker) == 0) {
      out.text.push_back(' ');
      pos += kWordMarker.size();
    } else {
      out.text.push_back(raw[pos++]);
    }
  }
  return out;
}

Generation generate(const Model& model, const Vocabulary& vocab, const ReifiedGraph& graph, const BeamConfig& cfg,
                    bool copy) {
  auto src = model.prepare(graph, vocab);
  ModelScorer scorer(model, model.encode(src));
  Hypothesis best;
  if (cfg.beam_size == 1) {
    best = greedy_decode(scorer, cfg.max_len);
    best.score = normalized_score(best.log_prob, best.tokens.size() + (best.ended_by_eos ? 1 : 0), cfg.length_penalty);
  } else {
    best = beam_search(scorer, cfg).front();
  }
  Generation g;
  g.score = best.score;
  g.log_prob = best.log_prob;
  g.tokens = best.tokens;
  if (copy) {
    auto c = apply_copy(best, src.graph, src.node_of, vocab);
    g.text = std::move(c.text);
    g.copies = std::move(c.copies);
  } else {
    g.text = vocab.decode(best.tokens);
  }
  return g;
}

}  // namespace nabu
