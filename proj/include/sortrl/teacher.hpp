#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sortrl/envs.hpp"
#include "sortrl/optim.hpp"
#include "sortrl/policy.hpp"
#include "sortrl/tensor.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

// Plain MLP over affine + relu; inputs are normalized observations.
class QNetwork {
 public:
  QNetwork(int in_dim, std::vector<int> hidden, int out_dim, uint64_t seed);

  Tensor forward(const Tensor& x) const;  // x: [n] or [batch, n]
  std::vector<double> forward_values(std::span<const double> obs) const;

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  void copy_parameters_from(const QNetwork& other);

  void save(const std::string& path) const;
  static QNetwork load(const std::string& path);

 private:
  int in_dim_;
  int out_dim_;
  std::vector<int> hidden_;
  ParamStore params_;
};

// Greedy policy over a Q-network; differentiable for attacks.
class MlpPolicy final : public Policy {
 public:
  explicit MlpPolicy(std::shared_ptr<const QNetwork> net) : net_(std::move(net)) {}
  int input_dim() const override { return net_->in_dim(); }
  int action_count() const override { return net_->out_dim(); }
  std::vector<double> scores(std::span<const double> obs) const override;
  std::vector<double> ce_input_grad(std::span<const double> obs,
                                    int target) const override;
  const QNetwork& network() const { return *net_; }

 private:
  std::shared_ptr<const QNetwork> net_;
};

// Hand-written CartPole balancer used for fast pipeline tests; not part
// of the training method.
class ScriptedCartpolePolicy final : public Policy {
 public:
  explicit ScriptedCartpolePolicy(const ObsNormalizer& normalizer);
  int input_dim() const override { return 4; }
  int action_count() const override { return 2; }
  std::vector<double> scores(std::span<const double> obs) const override;
  std::vector<double> ce_input_grad(std::span<const double>, int) const override {
    return std::vector<double>(4, 0.0);
  }

 private:
  // transform() inverse so the rule can look at raw angle/velocity.
  std::vector<double> mean_;
  std::vector<double> sigma_;
};

struct TransitionBatch {
  std::vector<double> states;       // [n, dim]
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> next_states;  // [n, dim]
  std::vector<uint8_t> done;
  int64_t n = 0;
  int dim = 0;
};

class ReplayBuffer {
 public:
  ReplayBuffer(int64_t capacity, int dim);
  void push(std::span<const double> s, int a, double r,
            std::span<const double> s2, bool done);
  int64_t size() const { return size_; }
  int64_t capacity() const { return capacity_; }
  TransitionBatch sample(int64_t batch, Rng& rng) const;

 private:
  int64_t capacity_;
  int dim_;
  int64_t size_ = 0;
  int64_t head_ = 0;
  std::vector<double> states_, next_states_, rewards_;
  std::vector<int> actions_;
  std::vector<uint8_t> done_;
};

struct TeacherConfig {
  double gamma = 0.99;
  int64_t buffer_capacity = 100000;
  int batch_size = 64;
  int target_sync_every = 1000;
  double explore_start = 1.0;
  double explore_end = 0.05;
  int64_t explore_decay_steps = 25000;
  double lr = 1e-3;
  int train_every = 2;
  int64_t warmup_steps = 1000;
  int64_t max_env_steps = 150000;
  int64_t eval_every = 5000;
  int eval_episodes = 20;
  double accept_return = 475.0;
  std::vector<int> hidden = {64, 64};
  double huber_delta = 1.0;
};

struct TeacherLogRow {
  int64_t env_step;
  double eval_return;
  double explore_eps;
  double loss_avg;
};

struct TeacherResult {
  std::shared_ptr<QNetwork> net;
  ObsNormalizer normalizer;  // frozen
  std::vector<TeacherLogRow> log;
  int64_t env_steps = 0;
  double final_eval_return = 0.0;
};

// Raised when the greedy policy never reaches accept_return within the
// step budget.
struct TrainingFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// DQN with a target network and epsilon-greedy exploration; observation
// statistics accumulate during training and come back frozen.
TeacherResult train_teacher(Env& env, const TeacherConfig& cfg, uint64_t seed);

// (normalized state, greedy teacher action) pairs from clean rollouts.
struct ExpertDataset {
  std::string env_name;
  int obs_dim = 0;
  int action_count = 0;
  std::vector<double> states;   // [count, obs_dim], normalized
  std::vector<int> actions;
  std::vector<double> norm_mean;
  std::vector<double> norm_var;
  int64_t count() const { return static_cast<int64_t>(actions.size()); }

  void save(const std::string& path) const;
  static ExpertDataset load(const std::string& path);
  void export_csv(const std::string& path) const;
  ObsNormalizer normalizer() const {
    return ObsNormalizer::from_moments(norm_mean, norm_var);
  }
};

ExpertDataset build_dataset(const Policy& teacher, Env& env,
                            const ObsNormalizer& frozen_normalizer,
                            int64_t n_states, uint64_t seed);

}  // namespace sortrl
