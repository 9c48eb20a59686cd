#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nabu/gat.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace nabu;
using nabu::testing::check_store;
using nabu::testing::random_tensor;
using nabu::testing::random_triples;
using nabu::testing::tiny_config;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = nabu::testing::synthetic_vocab(20, 200);
  return v;
}

ParameterStore gat_store(const ModelConfig& cfg, std::uint64_t seed) {
  ParameterStore store;
  std::mt19937_64 rng(seed);
  register_gat_encoder(store, cfg, rng);
  return store;
}

Tensor run_encoder(const ParameterStore& store, const GraphInputs& in, const ModelConfig& cfg,
                   std::vector<std::vector<Tensor>>* alpha = nullptr) {
  ad::Tape tape;
  BoundParams p(tape, store);
  std::mt19937_64 rng(0);
  auto enc = encode_graph(p, in, cfg, false, rng);
  if (alpha) *alpha = enc.alpha;
  return enc.memory.value();
}

GraphInputs permute_nodes(const GraphInputs& in, const std::vector<std::size_t>& perm) {
  // perm[old] = new
  GraphInputs out;
  out.nodes = in.nodes;
  out.node_tokens.resize(in.nodes);
  for (std::size_t i = 0; i < in.nodes; ++i) out.node_tokens[perm[i]] = in.node_tokens[i];
  for (std::size_t e = 0; e < in.edge_source.size(); ++e) {
    out.edge_source.push_back(perm[in.edge_source[e]]);
    out.edge_target.push_back(perm[in.edge_target[e]]);
    out.edge_relation.push_back(in.edge_relation[e]);
  }
  out.neighbors = neighborhoods(out.nodes, out.edge_source, out.edge_target);
  return out;
}

}  // namespace

TEST_CASE("graph inputs for the single-triple graph") {
  auto g = reify({{"Albert_Einstein", "birthPlace", "Germany"}}, Language::Eng);
  auto in = prepare_graph_inputs(g, vocab());
  CHECK(in.nodes == 4);
  CHECK(in.node_tokens[0] == std::vector<std::size_t>{kLangEng});
  CHECK(in.neighbors[0] == std::vector<std::size_t>{0, 1});
  CHECK(in.neighbors[2] == std::vector<std::size_t>{1, 2, 3});

  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 1);
  ad::Tape tape;
  BoundParams p(tape, store);
  auto inputs = build_inputs(p, in, cfg);
  CHECK(inputs.node.rows() == 4);
  CHECK(inputs.node.cols() == cfg.embedding_size);
  // The language node has one feature token: its row is that embedding row.
  const auto& emb = store.get("src.embed");
  for (std::size_t c = 0; c < cfg.embedding_size; ++c) CHECK(inputs.node.value().at(0, c) == emb.at(kLangEng, c));
  CHECK(run_encoder(store, in, cfg).shape() == std::vector<std::size_t>{4, cfg.hidden_size});
}

TEST_CASE("memory has hidden-size columns under the default config") {
  ModelConfig cfg;
  cfg.vocab_size = vocab().size();
  cfg.encoder_layers = 1;
  auto store = gat_store(cfg, 2);
  auto in = prepare_graph_inputs(reify({{"Albert_Einstein", "birthPlace", "Germany"}}, Language::Eng), vocab());
  CHECK(run_encoder(store, in, cfg).shape() == std::vector<std::size_t>{4, 256});
}

TEST_CASE("edge fusion") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 3);
  ad::Tape tape;
  BoundParams p(tape, store);
  auto zero = tape.constant(Tensor({3, cfg.embedding_size}));
  auto fused = edge_fuse(p, zero, zero);
  for (auto v : fused.value().values()) CHECK(v == 0);

  std::mt19937_64 rng(4);
  auto s = tape.constant(random_tensor({2, cfg.embedding_size}, rng));
  auto d = tape.constant(random_tensor({2, cfg.embedding_size}, rng));
  auto rows = edge_fuse(p, s, d);
  auto agg = aggregate_edges(rows, {2, 0}, 3, EdgeAggregation::Mean);
  for (std::size_t c = 0; c < cfg.embedding_size; ++c) {
    CHECK(agg.value().at(2, c) == rows.value().at(0, c));
    CHECK(agg.value().at(0, c) == rows.value().at(1, c));
    CHECK(agg.value().at(1, c) == 0);
  }
  CHECK_THROWS_AS(edge_fuse(p, s, zero), ShapeMismatch);
}

TEST_CASE("edge order does not change the aggregated input") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 5);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = prepare_graph_inputs(reify(random_triples(rng), Language::Ger), vocab());
    auto shuffled = in;
    std::vector<std::size_t> order(in.edge_source.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t e = 0; e < order.size(); ++e) {
      shuffled.edge_source[e] = in.edge_source[order[e]];
      shuffled.edge_target[e] = in.edge_target[order[e]];
      shuffled.edge_relation[e] = in.edge_relation[order[e]];
    }
    ad::Tape tape;
    BoundParams p(tape, store);
    auto a = build_inputs(p, in, cfg);
    auto b = build_inputs(p, shuffled, cfg);
    auto xa = ad::add(ad::add(a.node, a.label), a.edge).value();
    auto xb = ad::add(ad::add(b.node, b.label), b.edge).value();
    for (std::size_t k = 0; k < xa.size(); ++k) CHECK(std::abs(xa[k] - xb[k]) < 1e-12);
  }
}

TEST_CASE("gradient check through the input construction path") {
  auto cfg = tiny_config(vocab().size());
  cfg.encoder_layers = 1;
  auto in = prepare_graph_inputs(reify({{"Alpha", "capital", "Beta"}, {"Beta", "country", "Alpha"}}, Language::Eng),
                                 vocab());
  for (auto mode : {EdgeAggregation::Mean, EdgeAggregation::Sum}) {
    cfg.edge_aggregation = mode;
    ParameterStore store;
    std::mt19937_64 rng(7);
    store.add("src.embed", random_tensor({vocab().size(), cfg.embedding_size}, rng));
    store.add("enc.rel", random_tensor({3, cfg.embedding_size}, rng));
    store.add("enc.edge.w", random_tensor({2 * cfg.embedding_size, cfg.embedding_size}, rng));
    store.add("enc.edge.b", random_tensor({1, cfg.embedding_size}, rng));
    auto r = check_store(store, [&](BoundParams& p) {
      auto x = build_inputs(p, in, cfg);
      return ad::add(ad::add(x.node, x.label), x.edge);
    });
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("attention rows sum to one on random graphs") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = prepare_graph_inputs(reify(random_triples(rng), Language::Rus), vocab());
    std::vector<std::vector<Tensor>> alpha;
    run_encoder(store, in, cfg, &alpha);
    for (const auto& layer : alpha) {
      for (const auto& a : layer) {
        for (std::size_t i = 0; i < in.nodes; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < in.nodes; ++j) {
            const bool adjacent = std::binary_search(in.neighbors[i].begin(), in.neighbors[i].end(), j);
            CHECK(a.at(i, j) >= 0);
            if (!adjacent) CHECK(a.at(i, j) == 0);
            row += a.at(i, j);
          }
          CHECK(std::abs(row - 1) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("a node whose only neighbor is itself") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 10);
  std::mt19937_64 rng(11);
  auto x0 = random_tensor({1, cfg.hidden_size}, rng);
  ad::Tape tape;
  BoundParams p(tape, store);
  auto out = gat_layer(p, 1, tape.constant(x0), {{0}}, cfg, false, rng);
  for (const auto& a : out.alpha) CHECK(a.at(0, 0) == 1.0);
  auto g = kernels::matmul(x0, store.get("enc.gat.1.w"));
  for (std::size_t c = 0; c < cfg.hidden_size; ++c) {
    const double v = g[c];
    CHECK(out.heads.value()[c] == doctest::Approx(v > 0 ? v : std::expm1(v)).epsilon(1e-12));
  }
  CHECK(out.out.value().shape() == x0.shape());
}

TEST_CASE("two neighbors with identical features share attention") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 12);
  std::mt19937_64 rng(13);
  auto row = random_tensor({1, cfg.hidden_size}, rng);
  Tensor x({3, cfg.hidden_size});
  for (std::size_t c = 0; c < cfg.hidden_size; ++c) {
    x.at(1, c) = x.at(2, c) = row[c];
    x.at(0, c) = row[c];
  }
  ad::Tape tape;
  BoundParams p(tape, store);
  auto out = gat_layer(p, 1, tape.constant(x), {{0, 1}, {0, 1}, {2}}, cfg, false, rng);
  for (const auto& a : out.alpha) {
    CHECK(a.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("every encoder parameter receives gradient") {
  auto cfg = tiny_config(vocab().size());
  cfg.dropout = Real(0.1);
  auto store = gat_store(cfg, 14);
  auto in = prepare_graph_inputs(
      reify({{"Alpha", "capital", "Beta"}, {"Gamma_Delta", "country", "Alpha"}}, Language::Eng), vocab());
  ad::Tape tape;
  BoundParams p(tape, store);
  std::mt19937_64 rng(15);
  auto enc = encode_graph(p, in, cfg, true, rng);
  auto w = tape.constant(random_tensor(enc.memory.value().shape(), rng));
  tape.backward(ad::sum(ad::mul(enc.memory, w)));
  Gradients grads(store);
  p.accumulate(grads);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CAPTURE(store.names()[i]);
    double norm = 0;
    for (auto g : grads[i]) norm += std::abs(g);
    CHECK(norm > 0);
  }
}

TEST_CASE("gradient check of the full encoder") {
  auto cfg = tiny_config(vocab().size());
  auto in = prepare_graph_inputs(reify({{"Alpha", "capital", "Beta"}, {"Beta", "leaderName", "Theta"}}, Language::Eng),
                                 vocab());
  for (auto attention : {GraphAttention::Learned, GraphAttention::Uniform}) {
    cfg.graph_attention = attention;
    auto store = gat_store(cfg, 16);
    auto r = check_store(store, [&](BoundParams& p) {
      std::mt19937_64 rng(0);
      return encode_graph(p, in, cfg, false, rng).memory;
    });
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("uniform attention reproduces the convolutional update") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 17);
  // Zero attention vectors make every learned score equal.
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.names()[i].find("att_") != std::string::npos) {
      for (auto& v : store.at(i).values()) v = 0;
    }
  }
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = prepare_graph_inputs(reify(random_triples(rng), Language::Eng), vocab());
    auto learned = run_encoder(store, in, cfg);
    auto gcn_cfg = cfg;
    gcn_cfg.graph_attention = GraphAttention::Uniform;
    std::vector<std::vector<Tensor>> alpha;
    auto gcn = run_encoder(store, in, gcn_cfg, &alpha);
    for (std::size_t k = 0; k < learned.size(); ++k) CHECK(std::abs(learned[k] - gcn[k]) < 1e-5);
    for (std::size_t i = 0; i < in.nodes; ++i) {
      CHECK(alpha[0][0].at(i, in.neighbors[i].front()) == doctest::Approx(1.0 / in.neighbors[i].size()));
    }
  }
}

TEST_CASE("node permutation permutes memory rows") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 19);
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 30; ++trial) {
    auto in = prepare_graph_inputs(reify(random_triples(rng), Language::Eng), vocab());
    std::vector<std::size_t> perm(in.nodes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto base = run_encoder(store, in, cfg);
    auto moved = run_encoder(store, permute_nodes(in, perm), cfg);
    for (std::size_t i = 0; i < in.nodes; ++i) {
      for (std::size_t c = 0; c < cfg.hidden_size; ++c) CHECK(std::abs(base.at(i, c) - moved.at(perm[i], c)) < 1e-12);
    }
  }
}

TEST_CASE("one layer only sees direct neighbors") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 21);
  // Path 0 - 1 - 2 - 3 - 4.
  std::vector<std::vector<std::size_t>> path{{0, 1}, {0, 1, 2}, {1, 2, 3}, {2, 3, 4}, {3, 4}};
  std::mt19937_64 rng(22);
  auto x = random_tensor({5, cfg.hidden_size}, rng);
  auto eval = [&](const Tensor& input) {
    ad::Tape tape;
    BoundParams p(tape, store);
    std::mt19937_64 r(0);
    return gat_layer(p, 1, tape.constant(input), path, cfg, false, r).out.value();
  };
  auto base = eval(x);
  for (std::size_t j = 0; j < 5; ++j) {
    auto bumped = x;
    bumped.at(j, 0) += Real(1e-3);
    auto out = eval(bumped);
    for (std::size_t i = 0; i < 5; ++i) {
      const bool visible = std::binary_search(path[i].begin(), path[i].end(), j);
      double change = 0;
      for (std::size_t c = 0; c < cfg.hidden_size; ++c) change += std::abs(out.at(i, c) - base.at(i, c));
      CAPTURE(i);
      CAPTURE(j);
      if (visible) {
        CHECK(change > 0);
      } else {
        CHECK(change == 0);
      }
    }
  }
}

TEST_CASE("swapping the language node changes values only") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 23);
  auto ts = std::vector<Triple>{{"Alpha", "capital", "Beta"}};
  auto eng = prepare_graph_inputs(reify(ts, Language::Eng), vocab());
  auto ger = prepare_graph_inputs(reify(ts, Language::Ger), vocab());
  CHECK(eng.neighbors == ger.neighbors);
  auto a = run_encoder(store, eng, cfg);
  auto b = run_encoder(store, ger, cfg);
  CHECK(a.shape() == b.shape());
  CHECK(a != b);
}

TEST_CASE("attention dump lists one block per layer and head") {
  auto cfg = tiny_config(vocab().size());
  auto store = gat_store(cfg, 24);
  auto g = reify({{"Alpha", "capital", "Beta"}}, Language::Eng);
  std::vector<std::vector<Tensor>> alpha;
  run_encoder(store, prepare_graph_inputs(g, vocab()), cfg, &alpha);
  auto text = dump_attention(alpha, g.nodes);
  CHECK(text.find("# layer 1 head 1") != std::string::npos);
  CHECK(text.find("capital#0\t") != std::string::npos);
}
