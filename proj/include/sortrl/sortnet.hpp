#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sortrl/optim.hpp"
#include "sortrl/policy.hpp"
#include "sortrl/tensor.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

enum class ForwardMode { kExact, kStochastic };
enum class NetMode { kTrain, kEval };

// Geometric ramp of the smoothing exponent used by the stochastic
// forward mode: p grows from p_start to p_end over the first
// `ramp_fraction` of training, then holds.
struct SmoothingSchedule {
  double p_start = 8.0;
  double p_end = 1000.0;
  double ramp_fraction = 0.5;

  double at(int64_t iter, int64_t total_iters) const;
};

struct SortNetConfig {
  int input_dim = 0;
  int action_count = 0;
  // Unit counts per layer; the last entry must equal action_count.
  std::vector<int> widths;
  // Geometric weight ratio in [0, 1); unit weights are (1-decay)*decay^(i-1).
  double decay = 0.3;
  ForwardMode forward_mode = ForwardMode::kExact;
  SmoothingSchedule smoothing;
  double norm_momentum = 0.99;

  int layer_count() const { return static_cast<int>(widths.size()); }
  int layer_input_dim(int layer) const {
    return layer == 0 ? input_dim : widths[static_cast<size_t>(layer - 1)];
  }
  void validate() const;  // throws std::invalid_argument
};

// Full geometric weight vector w_i = (1-decay) * decay^(i-1), i = 1..d.
std::vector<double> unit_weights(double decay, int d);
// Number of leading ranks whose weights are numerically relevant; ranks
// beyond this have weight below 1e-18 and contribute nothing at f64.
int unit_weight_cutoff(double decay, int d);

// Reference single unit: w^T sort_desc(|x + bias|), exact semantics.
double sortnet_unit(std::span<const double> x, std::span<const double> bias,
                    double decay);

// Power-mean estimate of max_i s_i x_i with s_i ~ Bernoulli(1-decay);
// its expectation over s equals w^T sort_desc(x) for nonnegative x.
// Throws std::domain_error on negative input; requires p >= 1.
double bernoulli_estimate(std::span<const double> x, double decay, double p,
                          uint64_t seed);
double bernoulli_estimate(std::span<const double> x, double decay, double p,
                          Rng& rng);

// Running means subtracted after each intermediate layer. Frozen (read
// only) whenever the owning policy is in Eval mode.
struct NormState {
  std::vector<std::vector<double>> running_mean;    // one per intermediate layer
  std::vector<std::vector<double>> last_batch_mean; // train-mode diagnostics
  double momentum = 0.99;
};

struct BiasDiagnostic {
  double mean = 0.0;
  double std_err = 0.0;
};
// Average first-layer output over `n_inits` standard-Gaussian bias draws
// with zero input and no normalization. Positive for any decay in [0,1).
BiasDiagnostic bias_diagnostic(const SortNetConfig& cfg, int n_inits,
                               uint64_t seed);

// Score network: layers of units computing a geometric-weight contraction
// of the descending sort of |x + bias|, mean-centered after every
// intermediate layer, with final scores -(x_last + out_bias). The score
// map in Eval/Exact mode is globally 1-Lipschitz in the l-inf norm.
class SortNetPolicy final : public Policy {
 public:
  SortNetPolicy(SortNetConfig cfg, uint64_t init_seed);

  // Policy interface. Single-observation entry points require Eval mode.
  int input_dim() const override { return cfg_.input_dim; }
  int action_count() const override { return cfg_.action_count; }
  std::vector<double> scores(std::span<const double> obs) const override;
  std::vector<double> ce_input_grad(std::span<const double> obs,
                                    int target) const override;
  bool certifiable() const override {
    return mode_ == NetMode::kEval && cfg_.forward_mode == ForwardMode::kExact;
  }

  // Batched differentiable forward: X is [batch, input_dim], result is
  // [batch, action_count]. In Train mode each intermediate layer is
  // centered by its batch mean and the running means advance; in Eval
  // mode the frozen running means are subtracted.
  Tensor scores_batch(const Tensor& X);

  // Batched evaluation-only forward (Eval mode): fills out[b*A + a].
  void scores_batch_eval(std::span<const double> flat_states, int64_t batch,
                         std::vector<double>& out) const;

  // Forward through one layer only (same normalization rules); exposed
  // for layer-level tests. `x` is a single input vector.
  std::vector<double> layer_forward_eval(std::span<const double> x,
                                         int layer) const;

  void set_mode(NetMode m) { mode_ = m; }
  NetMode mode() const { return mode_; }
  // Advances the smoothing exponent used by the stochastic forward.
  void set_iteration(int64_t iter, int64_t total_iters);
  double smoothing_p() const { return p_now_; }

  const SortNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  NormState& norm() { return norm_; }
  const NormState& norm() const { return norm_; }
  Tensor& ce_scale() { return params_.get("ce_scale"); }

  void save(const std::string& path) const;
  static SortNetPolicy load(const std::string& path);

 private:
  SortNetConfig cfg_;
  ParamStore params_;
  NormState norm_;
  NetMode mode_ = NetMode::kTrain;
  double p_now_;
  Rng stochastic_rng_;
  // Per-layer truncated weight tables.
  std::vector<std::vector<double>> weights_;
  std::vector<int> keep_;

  struct EvalTrace;
  void forward_eval(std::span<const double> obs, std::vector<double>& out,
                    EvalTrace* trace) const;
  Tensor layer_op(const Tensor& X, int layer);
  Tensor layer_op_stochastic(const Tensor& X, int layer);
  friend struct SortNetTestAccess;
};

}  // namespace sortrl
