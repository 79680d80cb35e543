#include "sortrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sortrl/checkpoint.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

namespace {

constexpr double kPi = 3.14159265358979323846;

class EpisodicEnv : public Env {
 public:
  std::vector<double> reset(uint64_t seed) final {
    Rng rng(derive_seed(seed, "env_reset"));
    steps_ = 0;
    done_ = false;
    return do_reset(rng);
  }

  StepResult step(int action) final {
    if (done_) throw std::logic_error(name() + ": step() after episode end");
    if (action < 0 || action >= action_count()) {
      throw std::domain_error(name() + ": invalid action id");
    }
    StepResult r = do_step(action);
    ++steps_;
    if (steps_ >= step_cap()) r.done = true;
    done_ = r.done;
    return r;
  }

 protected:
  virtual std::vector<double> do_reset(Rng& rng) = 0;
  virtual StepResult do_step(int action) = 0;

 private:
  int steps_ = 0;
  bool done_ = true;
};

// Cart with an inverted pole; push left/right, keep the pole within
// 12 degrees and the cart within +-2.4. Standard constants, Euler
// integration with dt = 0.02, reward 1 per step, cap 500.
class CartPole final : public EpisodicEnv {
 public:
  std::string name() const override { return "cartpole"; }
  int obs_dim() const override { return 4; }
  int action_count() const override { return 2; }
  int step_cap() const override { return 500; }

 protected:
  std::vector<double> do_reset(Rng& rng) override {
    for (double& v : s_) v = rng.uniform(-0.05, 0.05);
    return {s_, s_ + 4};
  }

  StepResult do_step(int action) override {
    constexpr double gravity = 9.8;
    constexpr double mass_cart = 1.0;
    constexpr double mass_pole = 0.1;
    constexpr double total_mass = mass_cart + mass_pole;
    constexpr double half_length = 0.5;
    constexpr double pole_mass_length = mass_pole * half_length;
    constexpr double force_mag = 10.0;
    constexpr double dt = 0.02;
    constexpr double theta_limit = 12.0 * 2.0 * kPi / 360.0;
    constexpr double x_limit = 2.4;

    double x = s_[0], x_dot = s_[1], theta = s_[2], theta_dot = s_[3];
    double force = action == 1 ? force_mag : -force_mag;
    double cos_t = std::cos(theta), sin_t = std::sin(theta);
    double temp =
        (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
    double theta_acc =
        (gravity * sin_t - cos_t * temp) /
        (half_length * (4.0 / 3.0 - mass_pole * cos_t * cos_t / total_mass));
    double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;

    s_[0] = x + dt * x_dot;
    s_[1] = x_dot + dt * x_acc;
    s_[2] = theta + dt * theta_dot;
    s_[3] = theta_dot + dt * theta_acc;

    bool done = s_[0] < -x_limit || s_[0] > x_limit || s_[2] < -theta_limit ||
                s_[2] > theta_limit;
    return {{s_, s_ + 4}, 1.0, done};
  }

 private:
  double s_[4] = {};
};

// Two-link underactuated pendulum; torque {-1, 0, +1} on the joint,
// terminate when the tip swings above the bar. Book dynamics, four
// Euler substeps per 0.2 s control step, reward -1 until the goal.
class Acrobot final : public EpisodicEnv {
 public:
  std::string name() const override { return "acrobot"; }
  int obs_dim() const override { return 6; }
  int action_count() const override { return 3; }
  int step_cap() const override { return 500; }

 protected:
  std::vector<double> do_reset(Rng& rng) override {
    for (double& v : s_) v = rng.uniform(-0.1, 0.1);
    return observe();
  }

  StepResult do_step(int action) override {
    constexpr double dt = 0.2;
    // 40 explicit-Euler substeps per control step keep the undriven
    // pendulum's energy drift below the termination height over a full
    // 500-step episode.
    constexpr int substeps = 40;
    const double torque = static_cast<double>(action - 1);
    for (int i = 0; i < substeps; ++i) euler_substep(torque, dt / substeps);
    s_[0] = wrap_pi(s_[0]);
    s_[1] = wrap_pi(s_[1]);
    s_[2] = std::clamp(s_[2], -4.0 * kPi, 4.0 * kPi);
    s_[3] = std::clamp(s_[3], -9.0 * kPi, 9.0 * kPi);
    bool done = -std::cos(s_[0]) - std::cos(s_[1] + s_[0]) > 1.0;
    return {observe(), done ? 0.0 : -1.0, done};
  }

 private:
  static double wrap_pi(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
  }

  void euler_substep(double torque, double h) {
    constexpr double m1 = 1.0, m2 = 1.0;
    constexpr double l1 = 1.0;
    constexpr double lc1 = 0.5, lc2 = 0.5;
    constexpr double i1 = 1.0, i2 = 1.0;
    constexpr double g = 9.8;

    double th1 = s_[0], th2 = s_[1], dth1 = s_[2], dth2 = s_[3];
    double d1 = m1 * lc1 * lc1 +
                m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * std::cos(th2)) +
                i1 + i2;
    double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(th2)) + i2;
    double phi2 = m2 * lc2 * g * std::cos(th1 + th2 - kPi / 2.0);
    double phi1 = -m2 * l1 * lc2 * dth2 * dth2 * std::sin(th2) -
                  2.0 * m2 * l1 * lc2 * dth2 * dth1 * std::sin(th2) +
                  (m1 * lc1 + m2 * l1) * g * std::cos(th1 - kPi / 2.0) + phi2;
    double ddth2 =
        (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dth1 * dth1 * std::sin(th2) -
         phi2) /
        (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    double ddth1 = -(d2 * ddth2 + phi1) / d1;

    s_[0] = th1 + h * dth1;
    s_[1] = th2 + h * dth2;
    s_[2] = dth1 + h * ddth1;
    s_[3] = dth2 + h * ddth2;
  }

  std::vector<double> observe() const {
    return {std::cos(s_[0]), std::sin(s_[0]), std::cos(s_[1]),
            std::sin(s_[1]), s_[2],           s_[3]};
  }

  double s_[4] = {};
};

// Underpowered car in a valley; build momentum to reach the right hill.
// Standard dynamics, reward -1 per step, done at position >= 0.5, cap 200.
class MountainCar final : public EpisodicEnv {
 public:
  std::string name() const override { return "mountaincar"; }
  int obs_dim() const override { return 2; }
  int action_count() const override { return 3; }
  int step_cap() const override { return 200; }

 protected:
  std::vector<double> do_reset(Rng& rng) override {
    pos_ = rng.uniform(-0.6, -0.4);
    vel_ = 0.0;
    return {pos_, vel_};
  }

  StepResult do_step(int action) override {
    constexpr double force = 0.001;
    constexpr double gravity = 0.0025;
    vel_ += static_cast<double>(action - 1) * force -
            std::cos(3.0 * pos_) * gravity;
    vel_ = std::clamp(vel_, -0.07, 0.07);
    pos_ += vel_;
    pos_ = std::clamp(pos_, -1.2, 0.6);
    if (pos_ <= -1.2 && vel_ < 0.0) vel_ = 0.0;
    bool done = pos_ >= 0.5;
    return {{pos_, vel_}, -1.0, done};
  }

 private:
  double pos_ = 0.0;
  double vel_ = 0.0;
};

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "cartpole") return std::make_unique<CartPole>();
  if (name == "acrobot") return std::make_unique<Acrobot>();
  if (name == "mountaincar") return std::make_unique<MountainCar>();
  throw std::invalid_argument("unknown env '" + name +
                              "'; valid: cartpole, acrobot, mountaincar");
}

std::vector<std::string> env_names() {
  return {"cartpole", "acrobot", "mountaincar"};
}

EnvFactory env_factory(const std::string& name) {
  make_env(name);  // validate eagerly
  return [name] { return make_env(name); };
}

// ---------------------------------------------------------------------------
// ObsNormalizer

ObsNormalizer::ObsNormalizer(int dim) {
  if (dim < 1) throw std::invalid_argument("ObsNormalizer: dim < 1");
  mean_.assign(static_cast<size_t>(dim), 0.0);
  m2_.assign(static_cast<size_t>(dim), 0.0);
}

void ObsNormalizer::update(std::span<const double> s) {
  if (frozen_) throw std::logic_error("ObsNormalizer: update after freeze");
  if (s.size() != mean_.size()) {
    throw std::invalid_argument("ObsNormalizer: dimension mismatch");
  }
  ++count_;
  for (size_t i = 0; i < s.size(); ++i) {
    double delta = s[i] - mean_[i];
    mean_[i] += delta / static_cast<double>(count_);
    m2_[i] += delta * (s[i] - mean_[i]);
  }
}

std::vector<double> ObsNormalizer::variance() const {
  std::vector<double> v(mean_.size(), 0.0);
  if (count_ > 1) {
    for (size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / static_cast<double>(count_);
  }
  return v;
}

std::vector<double> ObsNormalizer::transform(std::span<const double> s) const {
  if (s.size() != mean_.size()) {
    throw std::invalid_argument("ObsNormalizer: dimension mismatch");
  }
  auto var = variance();
  std::vector<double> out(s.size());
  for (size_t i = 0; i < s.size(); ++i) {
    out[i] = (s[i] - mean_[i]) / std::sqrt(var[i] + 1e-8);
  }
  return out;
}

void ObsNormalizer::save(const std::string& path) const {
  ParamStore store;
  store.add("mean", Tensor::vec(mean_));
  store.add("variance", Tensor::vec(variance()));
  store.add("count", Tensor::scalar(static_cast<double>(count_)));
  save_checkpoint(path, store);
}

ObsNormalizer ObsNormalizer::load(const std::string& path) {
  ParamStore store = load_checkpoint(path);
  auto mean = store.get("mean").data();
  auto var = store.get("variance").data();
  ObsNormalizer n(static_cast<int>(mean.size()));
  n.mean_.assign(mean.begin(), mean.end());
  n.count_ = static_cast<int64_t>(store.get("count").item());
  if (n.count_ < 2) n.count_ = 2;
  for (size_t i = 0; i < n.m2_.size(); ++i) {
    n.m2_[i] = var[i] * static_cast<double>(n.count_);
  }
  n.frozen_ = true;
  return n;
}

ObsNormalizer ObsNormalizer::from_moments(std::vector<double> mean,
                                          std::vector<double> variance) {
  if (mean.size() != variance.size() || mean.empty()) {
    throw std::invalid_argument("ObsNormalizer: bad moments");
  }
  ObsNormalizer n(static_cast<int>(mean.size()));
  n.mean_ = std::move(mean);
  n.count_ = 2;
  for (size_t i = 0; i < variance.size(); ++i) {
    n.m2_[i] = variance[i] * static_cast<double>(n.count_);
  }
  n.frozen_ = true;
  return n;
}

// ---------------------------------------------------------------------------

Trajectory rollout(const Policy& policy, Env& env,
                   const ObsNormalizer& normalizer, Attacker* attacker,
                   uint64_t seed) {
  if (policy.input_dim() != normalizer.dim() ||
      normalizer.dim() != env.obs_dim()) {
    throw std::invalid_argument("rollout: observation dimensions disagree");
  }
  Trajectory traj;
  std::vector<double> state = env.reset(seed);
  bool done = false;
  while (!done) {
    std::vector<double> obs = normalizer.transform(state);
    std::vector<double> acted = attacker ? attacker->perturb(policy, obs) : obs;
    int action = policy.act(acted);
    StepResult r = env.step(action);
    traj.steps.push_back({std::move(obs), action, r.reward});
    traj.total_return += r.reward;
    state = std::move(r.state);
    done = r.done;
  }
  traj.length = static_cast<int>(traj.steps.size());
  return traj;
}

}  // namespace sortrl
