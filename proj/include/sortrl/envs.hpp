#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sortrl/policy.hpp"

namespace sortrl {

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;
};

// Deterministic episodic environment: (seed, action sequence) fully
// determines the trajectory. Stepping a finished episode is a usage
// error.
class Env {
 public:
  virtual ~Env() = default;
  virtual std::string name() const = 0;
  virtual int obs_dim() const = 0;
  virtual int action_count() const = 0;
  virtual int step_cap() const = 0;
  virtual double default_discount() const { return 0.99; }
  virtual std::vector<double> reset(uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
};

// "cartpole" | "acrobot" | "mountaincar"; throws std::invalid_argument
// naming the valid set otherwise.
std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> env_names();

using EnvFactory = std::function<std::unique_ptr<Env>()>;
EnvFactory env_factory(const std::string& name);

// Per-dimension running mean/variance (Welford). Once frozen the
// transform is the fixed affine map (s - mean) / sqrt(var + 1e-8).
class ObsNormalizer {
 public:
  explicit ObsNormalizer(int dim);

  void update(std::span<const double> s);  // throws std::logic_error if frozen
  std::vector<double> transform(std::span<const double> s) const;
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  int dim() const { return static_cast<int>(mean_.size()); }
  int64_t count() const { return count_; }
  const std::vector<double>& mean() const { return mean_; }
  std::vector<double> variance() const;

  void save(const std::string& path) const;
  static ObsNormalizer load(const std::string& path);
  static ObsNormalizer from_moments(std::vector<double> mean,
                                    std::vector<double> variance);

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  int64_t count_ = 0;
  bool frozen_ = false;
};

struct Trajectory {
  struct Step {
    std::vector<double> state;  // normalized observation acted on (clean)
    int action = 0;
    double reward = 0.0;
  };
  std::vector<Step> steps;
  double total_return = 0.0;
  int length = 0;
};

// Perturbs a normalized observation before the policy acts on it;
// implemented by the adversary module.
class Attacker {
 public:
  virtual ~Attacker() = default;
  virtual std::vector<double> perturb(const Policy& policy,
                                      std::span<const double> obs) = 0;
};

// Interaction loop: normalize the clean state, optionally perturb it,
// act on the (perturbed) observation, step. The stored trajectory keeps
// the clean normalized observations.
Trajectory rollout(const Policy& policy, Env& env,
                   const ObsNormalizer& normalizer, Attacker* attacker,
                   uint64_t seed);

}  // namespace sortrl
