#include "nabu/model.hpp"

#include <algorithm>

namespace nabu {

namespace {

constexpr std::size_t kMinPositions = 512;

}  // namespace

std::vector<std::size_t> frame_target(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_decode_len must leave room for BOS and EOS");
  std::vector<std::size_t> ids{kBos};
  auto body = vocab.encode(text);
  const std::size_t keep = std::min(body.size(), max_len - 2);
  ids.insert(ids.end(), body.begin(), body.begin() + static_cast<long>(keep));
  ids.push_back(kEos);
  return ids;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  if (cfg_.encoder == EncoderKind::Gat) {
    register_gat_encoder(params_, cfg_, rng);
  } else {
    register_transformer_encoder(params_, cfg_, rng);
  }
  register_decoder(params_, cfg_, rng);
  build_positions();
}

Model::Model(ModelConfig cfg, ParameterStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  build_positions();
}

void Model::build_positions() {
  positions_ = sinusoidal_positions(std::max(cfg_.max_decode_len, kMinPositions), cfg_.hidden_size);
}

Source Model::prepare(const ReifiedGraph& graph, const Vocabulary& vocab) const {
  if (!cfg_.supports(graph.language)) {
    throw GenerationRefused("language " + std::string(language_code(graph.language)) + " is not configured for this model");
  }
  if (vocab.size() != cfg_.vocab_size) {
    throw ConfigHashMismatch("vocabulary has " + std::to_string(vocab.size()) + " entries, model expects " +
                             std::to_string(cfg_.vocab_size));
  }
  Source src;
  src.graph = graph;
  if (cfg_.encoder == EncoderKind::Gat) {
    src.graph_inputs = prepare_graph_inputs(graph, vocab);
    for (std::size_t i = 0; i < graph.size(); ++i) src.node_of.push_back(static_cast<long>(i));
    return src;
  }
  auto lin = linearize(graph);
  for (std::size_t t = 0; t < lin.tokens.size(); ++t) {
    const long node = lin.node_of[t];
    std::vector<std::size_t> ids;
    if (node < 0) {
      ids.push_back(kSep);
    } else if (graph.kinds[static_cast<std::size_t>(node)] == NodeKind::Language) {
      ids.push_back(language_token_id(graph.language));
    } else {
      for (const auto& w : split_label_words(lin.tokens[t], graph.kinds[static_cast<std::size_t>(node)])) {
        auto enc = vocab.encode(w);
        ids.insert(ids.end(), enc.begin(), enc.end());
      }
      if (ids.empty()) ids.push_back(kUnk);
    }
    for (auto id : ids) {
      src.tokens.push_back(id);
      src.node_of.push_back(node);
    }
  }
  return src;
}

ad::Var Model::encode(BoundParams& p, const Source& src, bool train, std::mt19937_64& rng) const {
  if (cfg_.encoder == EncoderKind::Gat) return encode_graph(p, src.graph_inputs, cfg_, train, rng).memory;
  return encode_sequence(p, src.tokens, cfg_, positions_, train, rng);
}

Tensor Model::encode(const Source& src) const {
  ad::Tape tape;
  BoundParams p(tape, params_);
  std::mt19937_64 rng(0);
  return encode(p, src, false, rng).value();
}

std::vector<std::vector<Tensor>> Model::graph_attention(const Source& src) const {
  if (cfg_.encoder != EncoderKind::Gat) return {};
  ad::Tape tape;
  BoundParams p(tape, params_);
  std::mt19937_64 rng(0);
  return encode_graph(p, src.graph_inputs, cfg_, false, rng).alpha;
}

ForwardResult Model::forward(BoundParams& p, const Source& src, const std::vector<std::size_t>& target,
                             Real normalizer, bool train, std::mt19937_64& rng) const {
  if (target.size() < 2) throw LengthMismatch("target needs at least BOS and one more token");
  auto memory = encode(p, src, train, rng);
  std::vector<std::size_t> input(target.begin(), target.end() - 1);
  std::vector<std::size_t> labels(target.begin() + 1, target.end());
  auto dec = decode_sequence(p, memory, input, cfg_, positions_, train, rng);

  ForwardResult out;
  out.cross_probs = std::move(dec.cross_probs);
  const auto& logits = dec.logits.value();
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == kPad) continue;
    ++out.tokens;
    auto row = logits.row(t);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[t]) ++out.correct;
  }
  out.loss = ad::cross_entropy(dec.logits, std::move(labels), kPad, normalizer);
  out.loss_sum = out.loss.value()[0] * normalizer;
  return out;
}

}  // namespace nabu
