#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nabu/autodiff.hpp"
#include "nabu/tensor.hpp"

namespace nabu {

/// Named trainable tensors in registration order. References returned by get()
/// stay valid for the lifetime of the store.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Tensor& add(const std::string& name, Tensor init);
  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t element_count() const;

  Tensor& at(std::size_t i) { return *slots_[i]; }
  const Tensor& at(std::size_t i) const { return *slots_[i]; }

  bool operator==(const ParameterStore& o) const;

 private:
  std::map<std::string, Tensor, std::less<>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<std::string> names_;
  std::vector<Tensor*> slots_;
};

/// Gradient buffers aligned with a ParameterStore's registration order.
class Gradients {
 public:
  explicit Gradients(const ParameterStore& store);
  std::vector<Real>& operator[](std::size_t i) { return bufs_[i]; }
  const std::vector<Real>& operator[](std::size_t i) const { return bufs_[i]; }
  std::size_t size() const { return bufs_.size(); }
  void zero();
  void add(const Gradients& other);
  Real global_norm() const;
  bool all_finite() const;

 private:
  std::vector<std::vector<Real>> bufs_;
};

/// Parameters bound into one tape, each entering the tape at most once.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParameterStore& store);
  ad::Var operator()(std::string_view name);
  ad::Tape& tape() { return *tape_; }
  const ParameterStore& store() const { return *store_; }
  /// Adds the tape gradients of every bound parameter into `grads`.
  void accumulate(Gradients& grads) const;

 private:
  ad::Tape* tape_;
  const ParameterStore* store_;
  std::vector<long> var_of_;
};

/// Uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

struct AdamConfig {
  Real lr = Real(0.001);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
};

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
};

/// Bias-corrected Adam update in place. Throws NonFiniteGradient (and leaves
/// everything untouched) if any gradient entry is NaN or infinite.
void adam_step(ParameterStore& store, const Gradients& grads, AdamState& state, const AdamConfig& cfg);

/// Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
Real clip_global_norm(Gradients& grads, Real max_norm);

}  // namespace nabu
