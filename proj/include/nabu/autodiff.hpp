#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation in insertion order; Tape::backward walks the
// records in strict reverse order exactly once. Parameters enter a tape by
// reference (no copy) and their gradients are read back after backward.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nabu/tensor.hpp"

namespace nabu::ad {

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient, stored by value.
  Var leaf(Tensor value);
  /// Leaf that references external storage (a parameter); the referent must outlive the tape.
  Var parameter(const Tensor& value);
  /// Leaf without gradient.
  Var constant(Tensor value);

  Var record(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, zero-initialized on first access.
  std::span<Real> grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(out)/d(out) = 1 (out must be a single element) and propagates.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }
  /// Number of backward rules executed by the last backward().
  std::size_t visited() const { return visited_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<Real> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::size_t visited_ = 0;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x cols row to every row of a.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, Real s);
Var relu(Var a);
Var leaky_relu(Var a, Real slope);
Var elu(Var a, Real alpha = Real(1));
/// Inverted dropout; identity when !train or p == 0.
Var dropout(Var a, Real p, bool train, std::mt19937_64& rng);

/// Softmax along `axis` of an arbitrary-rank tensor.
Var softmax(Var a, std::size_t axis);
/// Row softmax restricted to entries where mask != 0 (mask is row-major, same size as a).
Var masked_softmax_rows(Var a, std::vector<unsigned char> mask);
Var log_softmax_rows(Var a);
Var layer_norm(Var a, Var gain, Var bias, Real eps = Real(1e-5));

/// Rows of `table` selected by ids.
Var gather_rows(Var table, std::vector<std::size_t> ids);
/// Row i = mean of table rows listed in lists[i].
Var gather_mean(Var table, std::vector<std::vector<std::size_t>> lists);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// out[i][j] = u[i] + v[j] for column vectors u (n x 1) and v (m x 1).
Var outer_add(Var u, Var v);

/// Multi-head scaled dot-product attention on packed heads: q (T x n), k, v (S x n).
/// `mask` (T x S, optional) selects admissible keys; `causal` additionally hides keys s > t.
/// If `probs` is given it receives the per-head probability matrices (heads x T x S).
Var attention(Var q, Var k, Var v, std::size_t heads, bool causal, const std::vector<unsigned char>* mask = nullptr,
              std::vector<Tensor>* probs = nullptr);

Var sum(Var a);
/// Sum over rows t with targets[t] != ignore_id of -log softmax(logits)[t, targets[t]], divided by normalizer.
Var cross_entropy(Var logits, std::vector<std::size_t> targets, std::size_t ignore_id, Real normalizer);

}  // namespace nabu::ad
