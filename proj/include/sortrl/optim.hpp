#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sortrl/tensor.hpp"

namespace sortrl {

// Named parameter set with stable insertion-order iteration.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam. Decay is applied directly to the weights,
// scaled by the learning rate, before the moment update.
class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig cfg);

  // Requires every parameter to carry a gradient; applies one update,
  // zeroes all gradients, and advances the step counter.
  void step();

  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParamStore& params_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace sortrl
