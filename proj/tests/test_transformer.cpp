#include "doctest.h"

#include <cmath>

#include "nabu/config.hpp"
#include "nabu/transformer.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace nabu;
using nabu::testing::check_store;
using nabu::testing::random_tensor;
using nabu::testing::tiny_config;

namespace {

struct Decoder {
  ModelConfig cfg;
  ParameterStore store;
  Tensor positions;

  Decoder(ModelConfig c, std::uint64_t seed) : cfg(std::move(c)) {
    std::mt19937_64 rng(seed);
    register_decoder(store, cfg, rng);
    positions = sinusoidal_positions(cfg.max_decode_len, cfg.hidden_size);
  }

  DecoderOutput run(ad::Tape& tape, const Tensor& memory, const std::vector<std::size_t>& ids) const {
    BoundParams p(tape, store);
    std::mt19937_64 rng(0);
    return decode_sequence(p, tape.constant(memory), ids, cfg, positions, false, rng);
  }

  Tensor logits(const Tensor& memory, const std::vector<std::size_t>& ids) const {
    ad::Tape tape;
    return run(tape, memory, ids).logits.value();
  }
};

}  // namespace

TEST_CASE("token embedding with positions") {
  Decoder d(tiny_config(30), 1);
  ad::Tape tape;
  BoundParams p(tape, d.store);
  auto h = embed_positions(p, "tgt.embed", "dec.in_proj", {7, 7}, d.positions).value();
  bool differ = false;
  for (std::size_t c = 0; c < d.cfg.hidden_size; ++c) differ |= h.at(0, c) != h.at(1, c);
  CHECK(differ);
  CHECK_THROWS_AS(embed_positions(p, "tgt.embed", "dec.in_proj", {30}, d.positions), IdOutOfRange);
  std::vector<std::size_t> too_long(d.cfg.max_decode_len + 1, 5);
  CHECK_THROWS_AS(embed_positions(p, "tgt.embed", "dec.in_proj", too_long, d.positions), IdOutOfRange);

  auto zeroed = d.store;
  for (auto& v : zeroed.get("tgt.embed").values()) v = 0;
  ad::Tape t2;
  BoundParams p2(t2, zeroed);
  auto z = embed_positions(p2, "tgt.embed", "dec.in_proj", {3, 4, 5}, d.positions).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < d.cfg.hidden_size; ++c) CHECK(z.at(r, c) == d.positions.at(r, c));
  }
}

TEST_CASE("positions are deterministic and unique") {
  auto a = sinusoidal_positions(128, 64);
  CHECK(a == sinusoidal_positions(128, 64));
  for (std::size_t c = 0; c < 64; ++c) CHECK(a.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  for (std::size_t p = 0; p < 128; ++p) {
    for (std::size_t q = p + 1; q < 128; ++q) {
      bool differ = false;
      for (std::size_t c = 0; c < 64 && !differ; ++c) differ = a.at(p, c) != a.at(q, c);
      CHECK(differ);
    }
  }
}

TEST_CASE("decoder is causal") {
  Decoder d(tiny_config(30), 2);
  std::mt19937_64 rng(3);
  auto memory = random_tensor({5, 8}, rng);
  std::vector<std::size_t> ids{1, 9, 12, 4, 20, 6};
  auto base = d.logits(memory, ids);
  for (std::size_t t = 1; t < ids.size(); ++t) {
    auto changed = ids;
    changed[t] = (changed[t] + 7) % 30;
    auto out = d.logits(memory, changed);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t k = 0; k < 30; ++k) CHECK(out.at(r, k) == base.at(r, k));
    }
    double later = 0;
    for (std::size_t k = 0; k < 30; ++k) later += std::abs(out.at(t, k) - base.at(t, k));
    CHECK(later > 0);
  }
}

TEST_CASE("logit jacobian is block lower triangular") {
  // Finite differences through a continuous input: perturb the embedding row used only at position t'.
  Decoder d(tiny_config(30), 4);
  std::mt19937_64 rng(5);
  auto memory = random_tensor({3, 8}, rng);
  std::vector<std::size_t> ids{1, 10, 11, 12};
  auto base = d.logits(memory, ids);
  for (std::size_t tp = 1; tp < ids.size(); ++tp) {
    Decoder bumped = d;
    bumped.store.get("tgt.embed").at(ids[tp], 0) += Real(1e-4);
    auto out = bumped.logits(memory, ids);
    for (std::size_t t = 0; t < tp; ++t) {
      // Logits at t read tgt.embed through the tied output layer; only column ids[tp] may move.
      for (std::size_t k = 0; k < 30; ++k) {
        if (k != ids[tp]) CHECK(out.at(t, k) == base.at(t, k));
      }
    }
  }
}

TEST_CASE("zero output projections leave a normalized residual path") {
  auto cfg = tiny_config(30);
  Decoder d(cfg, 6);
  for (std::size_t i = 0; i < d.store.size(); ++i) {
    const auto& name = d.store.names()[i];
    if (name.starts_with("dec.0.") && (name.ends_with(".wo") || name.ends_with(".bo") || name.ends_with(".w2") ||
                                       name.ends_with(".b2"))) {
      for (auto& v : d.store.at(i).values()) v = 0;
    }
  }
  std::mt19937_64 rng(7);
  auto x = random_tensor({4, 8}, rng, -2, 2);
  auto memory = random_tensor({3, 8}, rng);
  ad::Tape tape;
  BoundParams p(tape, d.store);
  auto out = decoder_layer(p, 0, tape.constant(x), tape.constant(memory), cfg, false, rng).value();
  Tensor expected({4, 8});
  std::vector<Real> g(8, 1), b(8, 0);
  kernels::layer_norm_rows(x.data(), 4, 8, g.data(), b.data(), Real(1e-5), expected.data());
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(std::abs(out[k] - expected[k]) < 1e-4);
}

TEST_CASE("incremental decoding matches full recomputation") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Decoder d(tiny_config(30), seed);
    std::mt19937_64 rng(seed + 10);
    auto memory = random_tensor({6, 8}, rng);
    std::vector<std::size_t> ids{1, 5, 17, 17, 29, 8, 2};
    ad::Tape tape;
    auto full = d.run(tape, memory, ids);
    auto avg = average_heads(full.cross_probs);
    IncrementalDecoder inc(d.store, d.cfg, d.positions, memory);
    auto state = inc.initial();
    for (std::size_t t = 0; t < ids.size(); ++t) {
      auto step = inc.step(state, ids[t]);
      CHECK(state.length == t + 1);
      // log-softmax of the full logits row
      const auto& z = full.logits.value();
      double mx = z.at(t, 0), se = 0;
      for (std::size_t k = 0; k < 30; ++k) mx = std::max<double>(mx, z.at(t, k));
      for (std::size_t k = 0; k < 30; ++k) se += std::exp(z.at(t, k) - mx);
      for (std::size_t k = 0; k < 30; ++k) CHECK(std::abs(step.log_probs[k] - (z.at(t, k) - mx - std::log(se))) < 1e-5);
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(step.attention[j] - avg.at(t, j)) < 1e-5);
    }
  }
}

TEST_CASE("cross-attention rows sum to one") {
  Decoder d(tiny_config(30), 8);
  std::mt19937_64 rng(9);
  auto memory = random_tensor({4, 8}, rng);
  ad::Tape tape;
  auto out = d.run(tape, memory, {1, 3, 4, 5});
  REQUIRE(out.cross_probs.size() == d.cfg.heads);
  for (const auto& probs : out.cross_probs) {
    for (std::size_t t = 0; t < 4; ++t) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) s += probs.at(t, j);
      CHECK(std::abs(s - 1) < 1e-5);
    }
  }
}

TEST_CASE("untrained decoder is near uniform") {
  auto cfg = desk_config().model;
  Decoder d(cfg, 10);
  std::mt19937_64 rng(11);
  auto memory = random_tensor({7, cfg.hidden_size}, rng);
  auto z = d.logits(memory, {1, 40, 41, 300, 12});
  const double lnk = std::log(static_cast<double>(cfg.vocab_size));
  for (std::size_t t = 0; t < z.rows(); ++t) {
    double mx = -1e300, se = 0, ent = 0;
    for (std::size_t k = 0; k < z.cols(); ++k) mx = std::max<double>(mx, z.at(t, k));
    for (std::size_t k = 0; k < z.cols(); ++k) se += std::exp(z.at(t, k) - mx);
    for (std::size_t k = 0; k < z.cols(); ++k) {
      const double pk = std::exp(z.at(t, k) - mx) / se;
      ent -= pk * std::log(pk);
    }
    CHECK(ent >= 0.99 * lnk);
  }
}

TEST_CASE("gradient check on a two-position instance") {
  auto cfg = tiny_config(12);
  cfg.decoder_layers = 1;
  Decoder d(cfg, 12);
  std::mt19937_64 rng(13);
  // Non-trivial norms and biases so every parameter is exercised.
  for (std::size_t i = 0; i < d.store.size(); ++i) {
    if (d.store.names()[i].ends_with("_b") || d.store.names()[i].ends_with("bo") ||
        d.store.names()[i].ends_with("b1") || d.store.names()[i].ends_with("b2") ||
        d.store.names()[i] == "dec.out_bias") {
      d.store.at(i) = random_tensor(d.store.at(i).shape(), rng, -0.5, 0.5);
    }
  }
  auto memory = random_tensor({3, 8}, rng);
  auto r = check_store(d.store, [&](BoundParams& p) {
    std::mt19937_64 r0(0);
    auto out = decode_sequence(p, p.tape().constant(memory), {1, 7}, cfg, d.positions, false, r0);
    return ad::cross_entropy(out.logits, {7, 2}, kPad, Real(2));
  });
  CHECK(r.rel_error < 1e-4);

  auto r2 = check_store(d.store, [&](BoundParams& p) {
    std::mt19937_64 r0(0);
    return decode_sequence(p, p.tape().constant(memory), {1, 7}, cfg, d.positions, false, r0).logits;
  });
  CHECK(r2.rel_error < 1e-4);
}

TEST_CASE("baseline sequence encoder") {
  auto cfg = tiny_config(30, EncoderKind::LinearizedTransformer);
  ParameterStore store;
  std::mt19937_64 rng(14);
  register_transformer_encoder(store, cfg, rng);
  auto positions = sinusoidal_positions(64, 8);
  ad::Tape tape;
  BoundParams p(tape, store);
  auto h = encode_sequence(p, {5, 9, 4, 10}, cfg, positions, false, rng);
  CHECK(h.value().shape() == std::vector<std::size_t>{4, 8});

  // Unlike the decoder, every position sees every other.
  ad::Tape t2;
  BoundParams p2(t2, store);
  auto h2 = encode_sequence(p2, {5, 9, 4, 11}, cfg, positions, false, rng);
  CHECK(h.value().at(0, 0) != h2.value().at(0, 0));

  auto r = check_store(store, [&](BoundParams& bp) {
    std::mt19937_64 r0(0);
    return encode_sequence(bp, {5, 9, 4}, cfg, positions, false, r0);
  });
  CHECK(r.rel_error < 1e-4);
}
