#include "nabu/transformer.hpp"

#include <algorithm>
#include <cmath>

namespace nabu {

namespace {

void register_attention(ParameterStore& store, const std::string& prefix, std::size_t n, std::mt19937_64& rng) {
  for (const char* w : {".wq", ".wk", ".wv", ".wo"}) store.add(prefix + w, xavier_uniform(n, n, rng));
  store.add(prefix + ".bo", Tensor({1, n}));
}

void register_ffn(ParameterStore& store, const std::string& prefix, std::size_t n, std::size_t f,
                  std::mt19937_64& rng) {
  store.add(prefix + ".w1", xavier_uniform(n, f, rng));
  store.add(prefix + ".b1", Tensor({1, f}));
  store.add(prefix + ".w2", xavier_uniform(f, n, rng));
  store.add(prefix + ".b2", Tensor({1, n}));
}

void register_norm(ParameterStore& store, const std::string& prefix, std::size_t n) {
  store.add(prefix + "_g", Tensor({1, n}, Real(1)));
  store.add(prefix + "_b", Tensor({1, n}));
}

std::string dec(std::size_t l) { return "dec." + std::to_string(l); }
std::string enc(std::size_t l) { return "enc.tf." + std::to_string(l); }

ad::Var norm(BoundParams& p, const std::string& prefix, ad::Var x) {
  return ad::layer_norm(x, p(prefix + "_g"), p(prefix + "_b"));
}

// Row vector times matrix: out[1 x cols] = x[1 x rows] * w.
void row_times(const Real* x, const Tensor& w, Real* out) {
  kernels::gemm(1, w.cols(), w.rows(), x, false, w.data(), false, out, false);
}

void add_bias(std::vector<Real>& x, const Tensor& b) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += b[i];
}

void norm_inplace(std::vector<Real>& x, const ParameterStore& s, const std::string& prefix) {
  std::vector<Real> out(x.size());
  kernels::layer_norm_rows(x.data(), 1, x.size(), s.get(prefix + "_g").data(), s.get(prefix + "_b").data(), Real(1e-5),
                           out.data());
  x = std::move(out);
}

// Single-query multi-head attention over `rows` cached keys/values (row-major, width n).
std::vector<Real> attend(const std::vector<Real>& q, const Real* keys, const Real* values, std::size_t rows,
                         std::size_t n, std::size_t heads, std::vector<Real>* avg_probs) {
  const std::size_t d = n / heads;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(d));
  std::vector<Real> out(n, Real(0)), p(rows);
  if (avg_probs) avg_probs->assign(rows, Real(0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t j = 0; j < rows; ++j) {
      Real s = 0;
      for (std::size_t c = 0; c < d; ++c) s += q[h * d + c] * keys[j * n + h * d + c];
      p[j] = s * sc;
    }
    kernels::softmax_rows(p.data(), 1, rows);
    for (std::size_t j = 0; j < rows; ++j) {
      for (std::size_t c = 0; c < d; ++c) out[h * d + c] += p[j] * values[j * n + h * d + c];
      if (avg_probs) (*avg_probs)[j] += p[j] / static_cast<Real>(heads);
    }
  }
  return out;
}

}  // namespace

void register_decoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t m = cfg.embedding_size, n = cfg.hidden_size;
  // Tied with the output layer: scaled down so untrained output distributions stay near uniform.
  auto embed = xavier_uniform(cfg.vocab_size, m, rng);
  for (auto& v : embed.values()) v *= Real(0.70710678118654752);
  store.add("tgt.embed", std::move(embed));
  store.add("dec.in_proj", xavier_uniform(m, n, rng));
  store.add("dec.out_bias", Tensor({1, cfg.vocab_size}));
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    register_attention(store, dec(l) + ".self", n, rng);
    register_norm(store, dec(l) + ".ln1", n);
    register_attention(store, dec(l) + ".cross", n, rng);
    register_norm(store, dec(l) + ".ln2", n);
    register_ffn(store, dec(l) + ".ffn", n, cfg.ffn_size, rng);
    register_norm(store, dec(l) + ".ln3", n);
  }
}

void register_transformer_encoder(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  const std::size_t m = cfg.embedding_size, n = cfg.hidden_size;
  if (!store.contains("src.embed")) store.add("src.embed", xavier_uniform(cfg.vocab_size, m, rng));
  store.add("enc.in_proj", xavier_uniform(m, n, rng));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    register_attention(store, enc(l) + ".self", n, rng);
    register_norm(store, enc(l) + ".ln1", n);
    register_ffn(store, enc(l) + ".ffn", n, cfg.ffn_size, rng);
    register_norm(store, enc(l) + ".ln2", n);
  }
}

ad::Var embed_positions(BoundParams& p, const std::string& embed, const std::string& proj,
                        const std::vector<std::size_t>& ids, const Tensor& positions) {
  if (ids.size() > positions.rows()) throw IdOutOfRange("sequence longer than the positional table");
  auto table = p(embed);
  for (auto id : ids) {
    if (id >= table.rows()) throw IdOutOfRange("token id " + std::to_string(id) + " out of range");
  }
  auto x = ad::matmul(ad::gather_rows(table, ids), p(proj));
  Tensor pos({ids.size(), positions.cols()});
  std::copy_n(positions.data(), pos.size(), pos.data());
  return ad::add(x, p.tape().constant(std::move(pos)));
}

ad::Var attention_block(BoundParams& p, const std::string& prefix, ad::Var query_in, ad::Var kv_in,
                        std::size_t heads, bool causal, std::vector<Tensor>* probs) {
  auto q = ad::matmul(query_in, p(prefix + ".wq"));
  auto k = ad::matmul(kv_in, p(prefix + ".wk"));
  auto v = ad::matmul(kv_in, p(prefix + ".wv"));
  auto ctx = ad::attention(q, k, v, heads, causal, nullptr, probs);
  return ad::add_row(ad::matmul(ctx, p(prefix + ".wo")), p(prefix + ".bo"));
}

ad::Var feed_forward(BoundParams& p, const std::string& prefix, ad::Var x) {
  auto h = ad::relu(ad::add_row(ad::matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
  return ad::add_row(ad::matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
}

ad::Var decoder_layer(BoundParams& p, std::size_t layer, ad::Var x, ad::Var memory, const ModelConfig& cfg,
                      bool train, std::mt19937_64& rng, std::vector<Tensor>* cross_probs) {
  const auto pre = dec(layer);
  if (x.cols() != cfg.hidden_size || memory.cols() != cfg.hidden_size) {
    throw ShapeMismatch("decoder_layer: inputs must have hidden_size columns");
  }
  auto sa = attention_block(p, pre + ".self", x, x, cfg.heads, true);
  auto h1 = norm(p, pre + ".ln1", ad::add(x, ad::dropout(sa, cfg.dropout, train, rng)));
  auto ca = attention_block(p, pre + ".cross", h1, memory, cfg.heads, false, cross_probs);
  auto h2 = norm(p, pre + ".ln2", ad::add(h1, ad::dropout(ca, cfg.dropout, train, rng)));
  auto ff = feed_forward(p, pre + ".ffn", h2);
  return norm(p, pre + ".ln3", ad::add(h2, ad::dropout(ff, cfg.dropout, train, rng)));
}

ad::Var encoder_layer(BoundParams& p, std::size_t layer, ad::Var x, const ModelConfig& cfg, bool train,
                      std::mt19937_64& rng) {
  const auto pre = enc(layer);
  auto sa = attention_block(p, pre + ".self", x, x, cfg.heads, false);
  auto h1 = norm(p, pre + ".ln1", ad::add(x, ad::dropout(sa, cfg.dropout, train, rng)));
  auto ff = feed_forward(p, pre + ".ffn", h1);
  return norm(p, pre + ".ln2", ad::add(h1, ad::dropout(ff, cfg.dropout, train, rng)));
}

DecoderOutput decode_sequence(BoundParams& p, ad::Var memory, const std::vector<std::size_t>& input_ids,
                              const ModelConfig& cfg, const Tensor& positions, bool train, std::mt19937_64& rng) {
  auto x = embed_positions(p, "tgt.embed", "dec.in_proj", input_ids, positions);
  x = ad::dropout(x, cfg.dropout, train, rng);
  DecoderOutput out;
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    const bool last = l + 1 == cfg.decoder_layers;
    x = decoder_layer(p, l, x, memory, cfg, train, rng, last ? &out.cross_probs : nullptr);
  }
  out.logits = ad::add_row(ad::matmul_bt(x, p("tgt.embed")), p("dec.out_bias"));
  return out;
}

ad::Var encode_sequence(BoundParams& p, const std::vector<std::size_t>& ids, const ModelConfig& cfg,
                        const Tensor& positions, bool train, std::mt19937_64& rng) {
  auto x = ad::dropout(embed_positions(p, "src.embed", "enc.in_proj", ids, positions), cfg.dropout, train, rng);
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) x = encoder_layer(p, l, x, cfg, train, rng);
  return x;
}

Tensor average_heads(const std::vector<Tensor>& probs) {
  if (probs.empty()) return {};
  Tensor avg(probs.front().shape());
  for (const auto& p : probs) kernels::add_inplace(avg.values(), p.values());
  for (auto& x : avg.values()) x /= static_cast<Real>(probs.size());
  return avg;
}

IncrementalDecoder::IncrementalDecoder(const ParameterStore& store, const ModelConfig& cfg, const Tensor& positions,
                                       Tensor memory)
    : store_(&store), cfg_(&cfg), positions_(&positions), memory_(std::move(memory)) {
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    mem_keys_.push_back(kernels::matmul(memory_, store.get(dec(l) + ".cross.wk")));
    mem_values_.push_back(kernels::matmul(memory_, store.get(dec(l) + ".cross.wv")));
  }
  embed_t_ = kernels::transpose(store.get("tgt.embed"));
}

IncrementalDecoder::State IncrementalDecoder::initial() const {
  State s;
  s.keys.resize(cfg_->decoder_layers);
  s.values.resize(cfg_->decoder_layers);
  return s;
}

IncrementalDecoder::Step IncrementalDecoder::step(State& state, std::size_t token) const {
  const auto& s = *store_;
  const std::size_t n = cfg_->hidden_size;
  const auto& embed = s.get("tgt.embed");
  if (token >= embed.rows()) throw IdOutOfRange("token id out of range");
  if (state.length >= positions_->rows()) throw IdOutOfRange("decode position beyond the positional table");

  std::vector<Real> x(n);
  row_times(embed.data() + token * embed.cols(), s.get("dec.in_proj"), x.data());
  for (std::size_t c = 0; c < n; ++c) x[c] += positions_->at(state.length, c);

  Step out;
  std::vector<Real> q(n), k(n), v(n), tmp(n);
  for (std::size_t l = 0; l < cfg_->decoder_layers; ++l) {
    const auto pre = dec(l);
    row_times(x.data(), s.get(pre + ".self.wq"), q.data());
    row_times(x.data(), s.get(pre + ".self.wk"), k.data());
    row_times(x.data(), s.get(pre + ".self.wv"), v.data());
    state.keys[l].insert(state.keys[l].end(), k.begin(), k.end());
    state.values[l].insert(state.values[l].end(), v.begin(), v.end());
    auto ctx = attend(q, state.keys[l].data(), state.values[l].data(), state.length + 1, n, cfg_->heads, nullptr);
    row_times(ctx.data(), s.get(pre + ".self.wo"), tmp.data());
    add_bias(tmp, s.get(pre + ".self.bo"));
    for (std::size_t c = 0; c < n; ++c) x[c] += tmp[c];
    norm_inplace(x, s, pre + ".ln1");

    row_times(x.data(), s.get(pre + ".cross.wq"), q.data());
    const bool last = l + 1 == cfg_->decoder_layers;
    ctx = attend(q, mem_keys_[l].data(), mem_values_[l].data(), memory_.rows(), n, cfg_->heads,
                 last ? &out.attention : nullptr);
    row_times(ctx.data(), s.get(pre + ".cross.wo"), tmp.data());
    add_bias(tmp, s.get(pre + ".cross.bo"));
    for (std::size_t c = 0; c < n; ++c) x[c] += tmp[c];
    norm_inplace(x, s, pre + ".ln2");

    const auto& w1 = s.get(pre + ".ffn.w1");
    std::vector<Real> hidden(w1.cols());
    row_times(x.data(), w1, hidden.data());
    add_bias(hidden, s.get(pre + ".ffn.b1"));
    for (auto& h : hidden) h = std::max(h, Real(0));
    row_times(hidden.data(), s.get(pre + ".ffn.w2"), tmp.data());
    add_bias(tmp, s.get(pre + ".ffn.b2"));
    for (std::size_t c = 0; c < n; ++c) x[c] += tmp[c];
    norm_inplace(x, s, pre + ".ln3");
  }
  ++state.length;

  const std::size_t vocab = embed.rows();
  out.log_probs.resize(vocab);
  row_times(x.data(), embed_t_, out.log_probs.data());
  add_bias(out.log_probs, s.get("dec.out_bias"));
  const Real mx = *std::max_element(out.log_probs.begin(), out.log_probs.end());
  Real sum = 0;
  for (auto lp : out.log_probs) sum += std::exp(lp - mx);
  const Real lse = mx + std::log(sum);
  for (auto& lp : out.log_probs) lp -= lse;
  return out;
}

}  // namespace nabu
