#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "sortrl/optim.hpp"
#include "sortrl/policy.hpp"
#include "sortrl/tensor.hpp"

namespace sortrl::testing {

// Linear two-action scorer g(s) = [a.s, -a.s]; margin boundary at a.s = 0.
class LinearScorer final : public Policy {
 public:
  explicit LinearScorer(std::vector<double> a) : a_(std::move(a)) {}
  int input_dim() const override { return static_cast<int>(a_.size()); }
  int action_count() const override { return 2; }
  std::vector<double> scores(std::span<const double> obs) const override {
    double v = 0.0;
    for (size_t i = 0; i < a_.size(); ++i) v += a_[i] * obs[i];
    return {v, -v};
  }
  std::vector<double> ce_input_grad(std::span<const double> obs,
                                    int target) const override {
    auto z = scores(obs);
    double m = std::max(z[0], z[1]);
    double e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
    double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    double d0 = p0 - (target == 0 ? 1.0 : 0.0);
    double d1 = p1 - (target == 1 ? 1.0 : 0.0);
    std::vector<double> g(a_.size());
    for (size_t i = 0; i < a_.size(); ++i) g[i] = d0 * a_[i] - d1 * a_[i];
    return g;
  }

 private:
  std::vector<double> a_;
};

// Wraps a policy and multiplies its scores; breaks the 1-Lipschitz
// property on purpose (audit sensitivity control).
class ScaledScores final : public Policy {
 public:
  ScaledScores(const Policy& inner, double factor)
      : inner_(inner), factor_(factor) {}
  int input_dim() const override { return inner_.input_dim(); }
  int action_count() const override { return inner_.action_count(); }
  std::vector<double> scores(std::span<const double> obs) const override {
    auto z = inner_.scores(obs);
    for (double& v : z) v *= factor_;
    return z;
  }
  std::vector<double> ce_input_grad(std::span<const double> obs,
                                    int target) const override {
    auto g = inner_.ce_input_grad(obs, target);
    for (double& v : g) v *= factor_;
    return g;
  }

 private:
  const Policy& inner_;
  double factor_;
};

// Central-difference check of d(loss)/d(params) against one backward
// pass; returns the max relative error over every parameter coordinate.
inline double param_grad_check(const std::function<Tensor()>& loss_fn,
                               ParamStore& params, double h) {
  params.zero_grads();
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : params) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }
  }
  double max_err = 0.0;
  size_t pi = 0;
  for (auto& [name, t] : params) {
    auto d = t.mutable_data();
    for (size_t i = 0; i < d.size(); ++i) {
      double keep = d[i];
      d[i] = keep + h;
      double fp = loss_fn().item();
      d[i] = keep - h;
      double fm = loss_fn().item();
      d[i] = keep;
      double cd = (fp - fm) / (2.0 * h);
      double err = std::fabs(analytic[pi][i] - cd) / std::max(1.0, std::fabs(cd));
      max_err = std::max(max_err, err);
    }
    ++pi;
  }
  params.zero_grads();
  return max_err;
}

}  // namespace sortrl::testing
