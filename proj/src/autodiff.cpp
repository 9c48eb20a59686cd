#include "nabu/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace nabu::ad {

namespace {

using kernels::gemm;

Tape& tape_of(Var a) { return *a.tape; }

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ShapeMismatch("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

Tensor like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::leaf(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const auto& n = nodes_[id];
  return n.external ? *n.external : n.owned;
}

std::span<Real> Tape::grad(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), Real(0));
  return n.grad;
}

void Tape::backward(Var out) {
  if (out.tape != this) throw ShapeMismatch("backward on a foreign variable");
  if (value(out.id).size() != 1) throw ShapeMismatch("backward needs a scalar output");
  visited_ = 0;
  if (!nodes_[out.id].requires_grad) return;
  grad(out.id)[0] += Real(1);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
    ++visited_;
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  auto& t = tape_of(a);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto out = kernels::matmul(av, bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  return t.record(std::move(out), t.requires_grad(a.id) || t.requires_grad(b.id),
                  [a = a.id, b = b.id, m, k, n](Tape& tp, std::size_t self) {
                    const Real* g = tp.grad(self).data();
                    if (tp.requires_grad(a)) gemm(m, k, n, g, false, tp.value(b).data(), true, tp.grad(a).data(), true);
                    if (tp.requires_grad(b)) gemm(k, n, m, tp.value(a).data(), true, g, false, tp.grad(b).data(), true);
                  });
}

Var matmul_bt(Var a, Var b) {
  require_same_tape(a, b);
  auto& t = tape_of(a);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto out = kernels::matmul_bt(av, bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  return t.record(std::move(out), t.requires_grad(a.id) || t.requires_grad(b.id),
                  [a = a.id, b = b.id, m, k, n](Tape& tp, std::size_t self) {
                    const Real* g = tp.grad(self).data();
                    if (tp.requires_grad(a)) gemm(m, k, n, g, false, tp.value(b).data(), false, tp.grad(a).data(), true);
                    if (tp.requires_grad(b)) gemm(n, k, m, g, true, tp.value(a).data(), false, tp.grad(b).data(), true);
                  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  auto& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  kernels::add_inplace(out.values(), b.value().values());
  return t.record(std::move(out), t.requires_grad(a.id) || t.requires_grad(b.id),
                  [a = a.id, b = b.id](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    if (tp.requires_grad(a)) kernels::add_inplace(tp.grad(a), g);
                    if (tp.requires_grad(b)) kernels::add_inplace(tp.grad(b), g);
                  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  auto& t = tape_of(a);
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.size() != av.cols()) throw ShapeMismatch("add_row: " + av.shape_string() + " + " + rv.shape_string());
  Tensor out = av;
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += rv[c];
  }
  return t.record(std::move(out), t.requires_grad(a.id) || t.requires_grad(row.id),
                  [a = a.id, row = row.id, rows, cols](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    if (tp.requires_grad(a)) kernels::add_inplace(tp.grad(a), g);
                    if (tp.requires_grad(row)) {
                      auto gr = tp.grad(row);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) gr[c] += g[r * cols + c];
                      }
                    }
                  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  auto& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), t.requires_grad(a.id) || t.requires_grad(b.id),
                  [a = a.id, b = b.id](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    if (tp.requires_grad(a)) {
                      auto ga = tp.grad(a);
                      const auto& bv = tp.value(b);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                    }
                    if (tp.requires_grad(b)) {
                      auto gb = tp.grad(b);
                      const auto& av = tp.value(a);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                    }
                  });
}

Var scale(Var a, Real s) {
  auto& t = tape_of(a);
  Tensor out = a.value();
  for (auto& x : out.values()) x *= s;
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, s](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

namespace {

template <typename F, typename D>
Var pointwise(Var a, F f, D deriv) {
  auto& t = tape_of(a);
  Tensor out = like(a.value());
  const auto& av = a.value();
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, deriv](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    const auto& x = tp.value(a);
    const auto& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var relu(Var a) {
  return pointwise(
      a, [](Real x) { return x > 0 ? x : Real(0); }, [](Real x, Real) { return x > 0 ? Real(1) : Real(0); });
}

Var leaky_relu(Var a, Real slope) {
  return pointwise(
      a, [slope](Real x) { return x > 0 ? x : slope * x; }, [slope](Real x, Real) { return x > 0 ? Real(1) : slope; });
}

Var elu(Var a, Real alpha) {
  return pointwise(
      a, [alpha](Real x) { return x > 0 ? x : alpha * (std::exp(x) - Real(1)); },
      [alpha](Real x, Real y) { return x > 0 ? Real(1) : y + alpha; });
}

Var dropout(Var a, Real p, bool train, std::mt19937_64& rng) {
  if (!train || p <= Real(0)) return a;
  auto& t = tape_of(a);
  const auto& av = a.value();
  std::vector<Real> keep(av.size());
  const Real s = Real(1) / (Real(1) - p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& k : keep) k = u(rng) < static_cast<double>(p) ? Real(0) : s;
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= keep[i];
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, keep = std::move(keep)](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * keep[i];
  });
}

Var softmax(Var a, std::size_t axis) {
  auto& t = tape_of(a);
  const auto& av = a.value();
  const auto& shape = av.shape();
  if (axis >= shape.size()) throw ShapeMismatch("softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t len = shape[axis];
  Tensor out = like(av);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, av[base + i * inner]);
      if (mx == -std::numeric_limits<Real>::infinity()) throw MaskedAll("softmax slice is entirely -inf");
      Real sum = 0;
      for (std::size_t i = 0; i < len; ++i) {
        out[base + i * inner] = std::exp(av[base + i * inner] - mx);
        sum += out[base + i * inner];
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= sum;
    }
  }
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, outer, inner, len](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    const auto& y = tp.value(self);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        Real dot = 0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const auto j = base + i * inner;
          ga[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

namespace {

// dx = y * (g - sum(g * y)) per row; shared by the row softmax variants.
void softmax_rows_backward(std::span<const Real> g, const Tensor& y, std::span<Real> gx) {
  const std::size_t rows = y.rows(), cols = y.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* yr = y.data() + r * cols;
    const Real* gr = g.data() + r * cols;
    Real dot = 0;
    for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
    Real* xr = gx.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) xr[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace

Var masked_softmax_rows(Var a, std::vector<unsigned char> mask) {
  auto& t = tape_of(a);
  Tensor out = a.value();
  if (mask.size() != out.size()) throw ShapeMismatch("softmax mask size mismatch");
  kernels::softmax_rows(out.data(), out.rows(), out.cols(), mask.data());
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id](Tape& tp, std::size_t self) {
    softmax_rows_backward(tp.grad(self), tp.value(self), tp.grad(a));
  });
}

Var log_softmax_rows(Var a) {
  auto& t = tape_of(a);
  const auto& av = a.value();
  Tensor out = like(av);
  const std::size_t rows = av.rows(), cols = av.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* x = av.data() + r * cols;
    Real mx = *std::max_element(x, x + cols);
    Real sum = 0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(x[c] - mx);
    const Real lse = mx + std::log(sum);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x[c] - lse;
  }
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, rows, cols](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    const auto& y = tp.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      Real gs = 0;
      for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gs;
    }
  });
}

Var layer_norm(Var a, Var gain, Var bias, Real eps) {
  auto& t = tape_of(a);
  const auto& av = a.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) throw ShapeMismatch("layer_norm affine size");
  Tensor out = like(av);
  auto stats = std::make_shared<std::vector<Real>>(2 * rows);
  kernels::layer_norm_rows(av.data(), rows, cols, gain.value().data(), bias.value().data(), eps, out.data(),
                           stats->data(), stats->data() + rows);
  bool rg = t.requires_grad(a.id) || t.requires_grad(gain.id) || t.requires_grad(bias.id);
  return t.record(std::move(out), rg,
                  [a = a.id, gain = gain.id, bias = bias.id, rows, cols, stats](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& x = tp.value(a);
                    const Real* gv = tp.value(gain).data();
                    const Real* mean = stats->data();
                    const Real* rstd = stats->data() + rows;
                    std::vector<Real> xhat(cols), dxhat(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const Real* gr = g.data() + r * cols;
                      for (std::size_t c = 0; c < cols; ++c) {
                        xhat[c] = (x[r * cols + c] - mean[r]) * rstd[r];
                        dxhat[c] = gr[c] * gv[c];
                      }
                      if (tp.requires_grad(gain)) {
                        auto gg = tp.grad(gain);
                        for (std::size_t c = 0; c < cols; ++c) gg[c] += gr[c] * xhat[c];
                      }
                      if (tp.requires_grad(bias)) {
                        auto gb = tp.grad(bias);
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += gr[c];
                      }
                      if (tp.requires_grad(a)) {
                        Real m1 = 0, m2 = 0;
                        for (std::size_t c = 0; c < cols; ++c) {
                          m1 += dxhat[c];
                          m2 += dxhat[c] * xhat[c];
                        }
                        m1 /= static_cast<Real>(cols);
                        m2 /= static_cast<Real>(cols);
                        auto ga = tp.grad(a);
                        for (std::size_t c = 0; c < cols; ++c) {
                          ga[r * cols + c] += rstd[r] * (dxhat[c] - m1 - xhat[c] * m2);
                        }
                      }
                    }
                  });
}

Var gather_rows(Var table, std::vector<std::size_t> ids) {
  auto& t = tape_of(table);
  const auto& tv = table.value();
  const std::size_t cols = tv.cols();
  if (ids.empty()) throw ShapeMismatch("gather_rows with no ids");
  Tensor out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw IdOutOfRange("row id " + std::to_string(ids[i]) + " >= " + std::to_string(tv.rows()));
    std::copy_n(tv.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  return t.record(std::move(out), t.requires_grad(table.id),
                  [table = table.id, ids = std::move(ids), cols](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    auto gt = tp.grad(table);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      for (std::size_t c = 0; c < cols; ++c) gt[ids[i] * cols + c] += g[i * cols + c];
                    }
                  });
}

Var gather_mean(Var table, std::vector<std::vector<std::size_t>> lists) {
  auto& t = tape_of(table);
  const auto& tv = table.value();
  const std::size_t cols = tv.cols();
  if (lists.empty()) throw ShapeMismatch("gather_mean with no rows");
  Tensor out({lists.size(), cols});
  for (std::size_t i = 0; i < lists.size(); ++i) {
    if (lists[i].empty()) throw ShapeMismatch("gather_mean row " + std::to_string(i) + " has no ids");
    Real* o = out.data() + i * cols;
    for (auto id : lists[i]) {
      if (id >= tv.rows()) throw IdOutOfRange("row id " + std::to_string(id) + " >= " + std::to_string(tv.rows()));
      const Real* src = tv.data() + id * cols;
      for (std::size_t c = 0; c < cols; ++c) o[c] += src[c];
    }
    const Real inv = Real(1) / static_cast<Real>(lists[i].size());
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return t.record(std::move(out), t.requires_grad(table.id),
                  [table = table.id, lists = std::move(lists), cols](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    auto gt = tp.grad(table);
                    for (std::size_t i = 0; i < lists.size(); ++i) {
                      const Real inv = Real(1) / static_cast<Real>(lists[i].size());
                      for (auto id : lists[i]) {
                        for (std::size_t c = 0; c < cols; ++c) gt[id * cols + c] += inv * g[i * cols + c];
                      }
                    }
                  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  auto& t = tape_of(parts.front());
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  bool rg = false;
  std::vector<std::size_t> ids, widths;
  for (auto p : parts) {
    require_same_tape(parts.front(), p);
    if (p.rows() != rows) throw ShapeMismatch("concat_cols row mismatch");
    total += p.cols();
    rg = rg || t.requires_grad(p.id);
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.data() + r * pv.cols(), pv.cols(), out.data() + r * total + off);
    off += pv.cols();
  }
  return t.record(std::move(out), rg, [ids, widths, rows, total](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) {
        auto gp = tp.grad(ids[i]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += g[r * total + off + c];
        }
      }
      off += widths[i];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  auto& t = tape_of(a);
  const auto& av = a.value();
  const std::size_t cols = av.cols(), rows = av.rows();
  if (begin >= end || end > cols) throw ShapeMismatch("slice_cols range");
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * cols + begin, w, out.data() + r * w);
  return t.record(std::move(out), t.requires_grad(a.id), [a = a.id, begin, w, rows, cols](Tape& tp, std::size_t self) {
    auto g = tp.grad(self);
    auto ga = tp.grad(a);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
    }
  });
}

Var outer_add(Var u, Var v) {
  require_same_tape(u, v);
  auto& t = tape_of(u);
  const auto& uv = u.value();
  const auto& vv = v.value();
  if (uv.cols() != 1 || vv.cols() != 1) throw ShapeMismatch("outer_add expects column vectors");
  const std::size_t n = uv.rows(), m = vv.rows();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = uv[i] + vv[j];
  }
  return t.record(std::move(out), t.requires_grad(u.id) || t.requires_grad(v.id),
                  [u = u.id, v = v.id, n, m](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    if (tp.requires_grad(u)) {
                      auto gu = tp.grad(u);
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < m; ++j) gu[i] += g[i * m + j];
                      }
                    }
                    if (tp.requires_grad(v)) {
                      auto gv = tp.grad(v);
                      for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j];
                      }
                    }
                  });
}

Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, const std::vector<unsigned char>* mask,
              std::vector<Tensor>* probs_out) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  auto& t = tape_of(q);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t T = qv.rows(), S = kv.rows(), n = qv.cols();
  if (kv.cols() != n || vv.cols() != n || vv.rows() != S) throw ShapeMismatch("attention operand shapes");
  if (heads == 0 || n % heads != 0) throw ShapeMismatch("attention heads must divide width");
  if (mask && mask->size() != T * S) throw ShapeMismatch("attention mask size");
  const std::size_t d = n / heads;
  const Real sc = Real(1) / std::sqrt(static_cast<Real>(d));

  std::vector<unsigned char> admissible(T * S, 1);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      if ((mask && !(*mask)[i * S + j]) || (causal && j > i)) admissible[i * S + j] = 0;
    }
  }

  auto probs = std::make_shared<std::vector<Tensor>>();
  probs->reserve(heads);
  Tensor out({T, n});
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor p({T, S});
    for (std::size_t i = 0; i < T; ++i) {
      const Real* qi = qv.data() + i * n + h * d;
      for (std::size_t j = 0; j < S; ++j) {
        const Real* kj = kv.data() + j * n + h * d;
        Real s = 0;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        p.at(i, j) = s * sc;
      }
    }
    kernels::softmax_rows(p.data(), T, S, admissible.data());
    for (std::size_t i = 0; i < T; ++i) {
      Real* oi = out.data() + i * n + h * d;
      for (std::size_t j = 0; j < S; ++j) {
        const Real pij = p.at(i, j);
        if (pij == Real(0)) continue;
        const Real* vj = vv.data() + j * n + h * d;
        for (std::size_t c = 0; c < d; ++c) oi[c] += pij * vj[c];
      }
    }
    probs->push_back(std::move(p));
  }
  if (probs_out) *probs_out = *probs;

  bool rg = t.requires_grad(q.id) || t.requires_grad(k.id) || t.requires_grad(v.id);
  return t.record(std::move(out), rg,
                  [q = q.id, k = k.id, v = v.id, probs, T, S, n, d, heads, sc](Tape& tp, std::size_t self) {
                    auto g = tp.grad(self);
                    const auto& qv = tp.value(q);
                    const auto& kv = tp.value(k);
                    const auto& vv = tp.value(v);
                    std::span<Real> gq, gk, gv;
                    if (tp.requires_grad(q)) gq = tp.grad(q);
                    if (tp.requires_grad(k)) gk = tp.grad(k);
                    if (tp.requires_grad(v)) gv = tp.grad(v);
                    std::vector<Real> dp(S);
                    for (std::size_t h = 0; h < heads; ++h) {
                      const auto& p = (*probs)[h];
                      for (std::size_t i = 0; i < T; ++i) {
                        const Real* gi = g.data() + i * n + h * d;
                        Real dot = 0;
                        for (std::size_t j = 0; j < S; ++j) {
                          const Real* vj = vv.data() + j * n + h * d;
                          Real s = 0;
                          for (std::size_t c = 0; c < d; ++c) s += gi[c] * vj[c];
                          dp[j] = s;
                          dot += s * p.at(i, j);
                        }
                        for (std::size_t j = 0; j < S; ++j) {
                          const Real pij = p.at(i, j);
                          if (pij == Real(0)) continue;
                          if (!gv.empty()) {
                            Real* gvj = gv.data() + j * n + h * d;
                            for (std::size_t c = 0; c < d; ++c) gvj[c] += pij * gi[c];
                          }
                          const Real ds = pij * (dp[j] - dot) * sc;
                          if (!gq.empty()) {
                            Real* gqi = gq.data() + i * n + h * d;
                            const Real* kj = kv.data() + j * n + h * d;
                            for (std::size_t c = 0; c < d; ++c) gqi[c] += ds * kj[c];
                          }
                          if (!gk.empty()) {
                            Real* gkj = gk.data() + j * n + h * d;
                            const Real* qi = qv.data() + i * n + h * d;
                            for (std::size_t c = 0; c < d; ++c) gkj[c] += ds * qi[c];
                          }
                        }
                      }
                    }
                  });
}

Var sum(Var a) {
  auto& t = tape_of(a);
  Real s = 0;
  for (auto x : a.value().values()) s += x;
  return t.record(Tensor({1, 1}, std::vector<Real>{s}), t.requires_grad(a.id), [a = a.id](Tape& tp, std::size_t self) {
    const Real g = tp.grad(self)[0];
    for (auto& x : tp.grad(a)) x += g;
  });
}

Var cross_entropy(Var logits, std::vector<std::size_t> targets, std::size_t ignore_id, Real normalizer) {
  auto& t = tape_of(logits);
  const auto& lv = logits.value();
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (targets.size() != rows) throw ShapeMismatch("cross_entropy: one target per row required");
  if (!(normalizer > 0)) throw ShapeMismatch("cross_entropy: normalizer must be positive");
  auto sm = std::make_shared<Tensor>(lv);
  Real loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    if (targets[r] >= cols) throw IdOutOfRange("target id out of range");
    const Real* x = lv.data() + r * cols;
    Real mx = *std::max_element(x, x + cols);
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - mx);
    loss += mx + std::log(s) - x[targets[r]];
  }
  kernels::softmax_rows(sm->data(), rows, cols);
  return t.record(Tensor({1, 1}, std::vector<Real>{loss / normalizer}), t.requires_grad(logits.id),
                  [logits = logits.id, targets = std::move(targets), ignore_id, normalizer, sm, rows,
                   cols](Tape& tp, std::size_t self) {
                    const Real g = tp.grad(self)[0] / normalizer;
                    auto gl = tp.grad(logits);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (targets[r] == ignore_id) continue;
                      for (std::size_t c = 0; c < cols; ++c) gl[r * cols + c] += g * sm->at(r, c);
                      gl[r * cols + targets[r]] -= g;
                    }
                  });
}

}  // namespace nabu::ad
