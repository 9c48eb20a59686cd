#include "nabu/params.hpp"

#include <cmath>

namespace nabu {

ParameterStore::ParameterStore(const ParameterStore& other) {
  for (const auto& name : other.names_) add(name, other.get(name));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Tensor& ParameterStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  auto [it, _] = params_.emplace(name, std::move(init));
  index_.emplace(name, names_.size());
  names_.push_back(name);
  slots_.push_back(&it->second);
  return it->second;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

Tensor& ParameterStore::get(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParameterStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const auto* t : slots_) n += t->size();
  return n;
}

bool ParameterStore::operator==(const ParameterStore& o) const { return names_ == o.names_ && params_ == o.params_; }

Gradients::Gradients(const ParameterStore& store) {
  bufs_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) bufs_.emplace_back(store.at(i).size(), Real(0));
}

void Gradients::zero() {
  for (auto& b : bufs_) std::fill(b.begin(), b.end(), Real(0));
}

void Gradients::add(const Gradients& other) {
  for (std::size_t i = 0; i < bufs_.size(); ++i) kernels::add_inplace(bufs_[i], other.bufs_[i]);
}

Real Gradients::global_norm() const {
  double s = 0;
  for (const auto& b : bufs_) {
    for (auto x : b) s += static_cast<double>(x) * static_cast<double>(x);
  }
  return static_cast<Real>(std::sqrt(s));
}

bool Gradients::all_finite() const {
  for (const auto& b : bufs_) {
    for (auto x : b) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

BoundParams::BoundParams(ad::Tape& tape, const ParameterStore& store)
    : tape_(&tape), store_(&store), var_of_(store.size(), -1) {}

ad::Var BoundParams::operator()(std::string_view name) {
  auto i = store_->index_of(name);
  if (var_of_[i] < 0) var_of_[i] = static_cast<long>(tape_->parameter(store_->at(i)).id);
  return {tape_, static_cast<std::size_t>(var_of_[i])};
}

void BoundParams::accumulate(Gradients& grads) const {
  for (std::size_t i = 0; i < var_of_.size(); ++i) {
    if (var_of_[i] < 0) continue;
    auto id = static_cast<std::size_t>(var_of_[i]);
    if (!tape_->has_grad(id)) continue;
    kernels::add_inplace(grads[i], tape_->grad(id));
  }
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({rows, cols});
  for (auto& x : t.values()) x = static_cast<Real>(u(rng));
  return t;
}

void adam_step(ParameterStore& store, const Gradients& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != store.size()) throw ShapeMismatch("gradients not aligned with parameter store");
  if (!grads.all_finite()) throw NonFiniteGradient("non-finite gradient; training diverged");
  if (state.m.size() != store.size()) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < store.size(); ++i) {
      state.m.emplace_back(store.at(i).size(), Real(0));
      state.v.emplace_back(store.at(i).size(), Real(0));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Real c1 = static_cast<Real>(1.0 - std::pow(static_cast<double>(cfg.beta1), t));
  const Real c2 = static_cast<Real>(1.0 - std::pow(static_cast<double>(cfg.beta2), t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (Real(1) - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (Real(1) - cfg.beta2) * g[j] * g[j];
      const Real mh = m[j] / c1;
      const Real vh = v[j] / c2;
      p[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

Real clip_global_norm(Gradients& grads, Real max_norm) {
  const Real norm = grads.global_norm();
  if (norm > max_norm && norm > Real(0)) {
    const Real s = max_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      for (auto& x : grads[i]) x *= s;
    }
  }
  return norm;
}

}  // namespace nabu
