#include "sortrl/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sortrl {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) {
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  }
  if (!t.defined()) throw std::invalid_argument("ParamStore: undefined tensor");
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  }
  return entries_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

AdamW::AdamW(ParamStore& params, AdamWConfig cfg)
    : params_(params), cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (auto& [name, t] : params_) {
    m_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  }
}

void AdamW::step() {
  size_t idx = 0;
  for (auto& [name, t] : params_) {
    if (!t.has_grad()) {
      throw std::logic_error("AdamW::step: parameter '" + name +
                             "' has no gradient");
    }
    ++idx;
  }
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  idx = 0;
  for (auto& [name, t] : params_) {
    auto p = t.mutable_data();
    auto g = t.grad();
    auto& m = m_[idx];
    auto& v = v_[idx];
    ++idx;
    for (size_t i = 0; i < p.size(); ++i) {
      p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    t.zero_grad();
  }
}

}  // namespace sortrl
