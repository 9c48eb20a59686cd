#include "nabu/gat.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace nabu {

namespace {

std::string layer_key(std::size_t layer, const char* name) {
  return "enc.gat." + std::to_string(layer) + "." + name;
}

std::string head_key(std::size_t layer, const char* name, std::size_t head) {
  return layer_key(layer, name) + "." + std::to_string(head);
}

}  // namespace

std::vector<std::vector<std::size_t>> neighborhoods(std::size_t nodes, const std::vector<std::size_t>& source,
                                                    const std::vector<std::size_t>& target) {
  std::vector<std::set<std::size_t>> sets(nodes);
  for (std::size_t i = 0; i < nodes; ++i) sets[i].insert(i);
  for (std::size_t e = 0; e < source.size(); ++e) {
    if (source[e] >= nodes || target[e] >= nodes) throw IdOutOfRange("edge endpoint out of range");
    sets[source[e]].insert(target[e]);
    sets[target[e]].insert(source[e]);
  }
  std::vector<std::vector<std::size_t>> out;
  out.reserve(nodes);
  for (auto& s : sets) out.emplace_back(s.begin(), s.end());
  return out;
}

std::vector<unsigned char> adjacency_mask(const std::vector<std::vector<std::size_t>>& neighbors) {
  const std::size_t z = neighbors.size();
  std::vector<unsigned char> mask(z * z, 0);
  for (std::size_t i = 0; i < z; ++i) {
    for (auto j : neighbors[i]) mask[i * z + j] = 1;
  }
  return mask;
}

GraphInputs prepare_graph_inputs(const ReifiedGraph& graph, const Vocabulary& vocab) {
  GraphInputs in;
  in.nodes = graph.size();
  auto features = node_feature_labels(graph);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    std::vector<std::size_t> ids;
    if (graph.kinds[i] == NodeKind::Language) {
      ids.push_back(language_token_id(graph.language));
    } else {
      for (const auto& w : features[i]) {
        auto enc = vocab.encode(w);
        ids.insert(ids.end(), enc.begin(), enc.end());
      }
    }
    if (ids.empty()) ids.push_back(kUnk);
    in.node_tokens.push_back(std::move(ids));
  }
  for (const auto& e : graph.edges) {
    in.edge_source.push_back(e.source);
    in.edge_target.push_back(e.target);
    in.edge_relation.push_back(e.relation);
  }
  in.neighbors = neighborhoods(in.nodes, in.edge_source, in.edge_target);
  return in;
}

void register_gat_encoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t m = cfg.embedding_size, n = cfg.hidden_size, d = cfg.head_size();
  if (!store.contains("src.embed")) store.add("src.embed", xavier_uniform(cfg.vocab_size, m, rng));
  store.add("enc.rel", xavier_uniform(3, m, rng));
  store.add("enc.edge.w", xavier_uniform(2 * m, m, rng));
  store.add("enc.edge.b", Tensor({1, m}));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    store.add(layer_key(l, "w"), xavier_uniform(l == 0 ? m : n, n, rng));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      store.add(head_key(l, "att_src", h), xavier_uniform(d, 1, rng));
      store.add(head_key(l, "att_dst", h), xavier_uniform(d, 1, rng));
    }
    store.add(layer_key(l, "wo"), xavier_uniform(n, n, rng));
    store.add(layer_key(l, "bo"), Tensor({1, n}));
    store.add(layer_key(l, "ln_g"), Tensor({1, n}, Real(1)));
    store.add(layer_key(l, "ln_b"), Tensor({1, n}));
  }
}

ad::Var edge_fuse(BoundParams& p, ad::Var source, ad::Var destination) {
  if (!source.value().same_shape(destination.value())) throw ShapeMismatch("edge_fuse: S and D differ in shape");
  auto cat = ad::concat_cols({source, destination});
  return ad::relu(ad::add_row(ad::matmul(cat, p("enc.edge.w")), p("enc.edge.b")));
}

ad::Var aggregate_edges(ad::Var edges, const std::vector<std::size_t>& edge_target, std::size_t nodes,
                        EdgeAggregation mode) {
  if (edges.rows() != edge_target.size()) throw ShapeMismatch("aggregate_edges: one target per edge row");
  Tensor agg({nodes, edge_target.size()});
  std::vector<std::size_t> indeg(nodes, 0);
  for (auto t : edge_target) ++indeg[t];
  for (std::size_t e = 0; e < edge_target.size(); ++e) {
    const auto t = edge_target[e];
    agg.at(t, e) = mode == EdgeAggregation::Mean ? Real(1) / static_cast<Real>(indeg[t]) : Real(1);
  }
  return ad::matmul(edges.tape->constant(std::move(agg)), edges);
}

EncoderInputs build_inputs(BoundParams& p, const GraphInputs& in, const ModelConfig& cfg) {
  auto& tape = p.tape();
  EncoderInputs out;
  out.adjacency = in.neighbors;
  out.node = ad::gather_mean(p("src.embed"), in.node_tokens);
  if (in.edge_source.empty()) {
    out.source = out.destination = out.edge = tape.constant(Tensor({in.nodes, cfg.embedding_size}));
    out.label = out.edge;
    return out;
  }
  out.source = ad::gather_rows(out.node, in.edge_source);
  out.destination = ad::gather_rows(out.node, in.edge_target);
  out.edge = aggregate_edges(edge_fuse(p, out.source, out.destination), in.edge_target, in.nodes, cfg.edge_aggregation);

  Tensor incidence({in.nodes, 3});
  std::vector<std::size_t> degree(in.nodes, 0);
  for (std::size_t e = 0; e < in.edge_source.size(); ++e) {
    const auto r = static_cast<std::size_t>(in.edge_relation[e]);
    for (auto node : {in.edge_source[e], in.edge_target[e]}) {
      incidence.at(node, r) += Real(1);
      ++degree[node];
    }
  }
  for (std::size_t i = 0; i < in.nodes; ++i) {
    for (std::size_t r = 0; r < 3 && degree[i] > 0; ++r) incidence.at(i, r) /= static_cast<Real>(degree[i]);
  }
  out.label = ad::matmul(tape.constant(std::move(incidence)), p("enc.rel"));
  return out;
}

GatLayerOutput gat_layer(BoundParams& p, std::size_t layer, ad::Var x,
                         const std::vector<std::vector<std::size_t>>& neighbors, const ModelConfig& cfg, bool train,
                         std::mt19937_64& rng) {
  const std::size_t z = x.rows(), d = cfg.head_size();
  if (neighbors.size() != z) throw ShapeMismatch("gat_layer: adjacency does not match node count");
  auto& tape = p.tape();
  auto mask = adjacency_mask(neighbors);

  GatLayerOutput out;
  auto g = ad::matmul(x, p(layer_key(layer, "w")));
  std::vector<ad::Var> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto gh = cfg.heads == 1 ? g : ad::slice_cols(g, h * d, (h + 1) * d);
    ad::Var alpha;
    if (cfg.graph_attention == GraphAttention::Learned) {
      auto fs = ad::matmul(gh, p(head_key(layer, "att_src", h)));
      auto fd = ad::matmul(gh, p(head_key(layer, "att_dst", h)));
      auto scores = ad::leaky_relu(ad::outer_add(fs, fd), Real(0.2));
      alpha = ad::masked_softmax_rows(scores, mask);
    } else {
      Tensor c({z, z});
      for (std::size_t i = 0; i < z; ++i) {
        for (auto j : neighbors[i]) c.at(i, j) = Real(1) / static_cast<Real>(neighbors[i].size());
      }
      alpha = tape.constant(std::move(c));
    }
    out.alpha.push_back(alpha.value());
    heads.push_back(ad::elu(ad::matmul(alpha, gh)));
  }
  out.heads = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
  auto fused = ad::add_row(ad::matmul(out.heads, p(layer_key(layer, "wo"))), p(layer_key(layer, "bo")));
  fused = ad::dropout(fused, cfg.dropout, train, rng);
  out.out = ad::layer_norm(ad::add(x, fused), p(layer_key(layer, "ln_g")), p(layer_key(layer, "ln_b")));
  return out;
}

GraphEncoding encode_graph(BoundParams& p, const GraphInputs& in, const ModelConfig& cfg, bool train,
                           std::mt19937_64& rng) {
  auto inputs = build_inputs(p, in, cfg);
  auto x = ad::add(ad::add(inputs.node, inputs.label), inputs.edge);
  GraphEncoding enc;
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    auto layer = gat_layer(p, l, x, inputs.adjacency, cfg, train, rng);
    enc.alpha.push_back(std::move(layer.alpha));
    x = layer.out;
  }
  enc.memory = x;
  return enc;
}

std::string dump_attention(const std::vector<std::vector<Tensor>>& alpha, const std::vector<std::string>& labels) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  for (std::size_t l = 0; l < alpha.size(); ++l) {
    for (std::size_t h = 0; h < alpha[l].size(); ++h) {
      const auto& a = alpha[l][h];
      os << "# layer " << l << " head " << h << '\n';
      for (std::size_t i = 0; i < a.rows(); ++i) {
        os << (i < labels.size() ? labels[i] : std::to_string(i));
        for (std::size_t j = 0; j < a.cols(); ++j) os << '\t' << a.at(i, j);
        os << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace nabu
