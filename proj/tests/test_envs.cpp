#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "sortrl/envs.hpp"
#include "sortrl/util.hpp"
#include "test_support.hpp"

using namespace sortrl;

namespace {

// Independent transcription of CartPole Euler steps, used as the
// integration oracle.
std::vector<double> cartpole_oracle(std::vector<double> state,
                                    const std::vector<int>& actions) {
  double s[4] = {state[0], state[1], state[2], state[3]};
  for (int a : actions) {
    double force = a == 1 ? 10.0 : -10.0;
    double cos_t = std::cos(s[2]), sin_t = std::sin(s[2]);
    double temp = (force + 0.05 * s[3] * s[3] * sin_t) / 1.1;
    double theta_acc = (9.8 * sin_t - cos_t * temp) /
                       (0.5 * (4.0 / 3.0 - 0.1 * cos_t * cos_t / 1.1));
    double x_acc = temp - 0.05 * theta_acc * cos_t / 1.1;
    double next[4] = {s[0] + 0.02 * s[1], s[1] + 0.02 * x_acc,
                      s[2] + 0.02 * s[3], s[3] + 0.02 * theta_acc};
    for (int i = 0; i < 4; ++i) s[i] = next[i];
  }
  return {s[0], s[1], s[2], s[3]};
}

}  // namespace

TEST_CASE("cartpole matches the hand-integrated oracle") {
  auto env = make_env("cartpole");
  auto start = env->reset(123);
  auto r1 = env->step(1);
  CHECK_FALSE(r1.done);
  auto r2 = env->step(0);
  CHECK_FALSE(r2.done);
  CHECK(r1.reward == 1.0);
  CHECK(r2.reward == 1.0);
  auto want = cartpole_oracle(start, {1, 0});
  for (int i = 0; i < 4; ++i) {
    CHECK(r2.state[static_cast<size_t>(i)] ==
          doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
  }

  // From the exact rest state, two alternating pushes stay far inside
  // the termination bounds and the pushes cancel symmetrically.
  auto rest2 = cartpole_oracle({0, 0, 0, 0}, {1, 0});
  CHECK(std::fabs(rest2[2]) < 0.21);
  CHECK(std::fabs(rest2[0]) < 2.4);
  auto rest1 = cartpole_oracle({0, 0, 0, 0}, {1});
  CHECK(rest1[3] < 0.0);  // the pole reacts against the push
  CHECK(rest2[3] == doctest::Approx(0.0));
}

TEST_CASE("mountaincar terminates at the goal position") {
  auto env = make_env("mountaincar");
  env->reset(7);
  // Drive right forever; the standard dynamics cannot reach the goal
  // without momentum, so run the bang-bang policy that does.
  bool done = false;
  int steps = 0;
  double last_reward = 0.0;
  std::vector<double> state = env->reset(7);
  while (!done && steps < 200) {
    int action = state[1] >= 0.0 ? 2 : 0;  // push along the velocity
    auto r = env->step(action);
    state = r.state;
    last_reward = r.reward;
    done = r.done;
    ++steps;
  }
  REQUIRE(done);
  CHECK(steps < 200);       // solved before the cap
  CHECK(state[0] >= 0.5);   // goal threshold
  CHECK(last_reward == -1.0);
}

TEST_CASE("episodes are byte-identical for identical seeds and actions") {
  for (const auto& name : env_names()) {
    auto env1 = make_env(name);
    auto env2 = make_env(name);
    Rng rng(42);
    auto s1 = env1->reset(99);
    auto s2 = env2->reset(99);
    REQUIRE(s1 == s2);
    bool done = false;
    int steps = 0;
    while (!done && steps < 50) {
      int a = static_cast<int>(rng.uniform_int(env1->action_count()));
      auto r1 = env1->step(a);
      auto r2 = env2->step(a);
      CHECK(r1.state == r2.state);
      CHECK(r1.reward == r2.reward);
      CHECK(r1.done == r2.done);
      done = r1.done;
      ++steps;
    }
  }
}

TEST_CASE("step after done is a usage error, invalid action a domain error") {
  auto env = make_env("mountaincar");
  env->reset(3);
  CHECK_THROWS_AS(env->step(5), std::domain_error);
  // Exhaust the step cap.
  bool done = false;
  while (!done) done = env->step(1).done;
  CHECK_THROWS_AS(env->step(1), std::logic_error);
}

TEST_CASE("step caps are respected") {
  // Doing nothing in mountaincar never reaches the goal: cap at 200.
  auto env = make_env("mountaincar");
  env->reset(11);
  int steps = 0;
  while (true) {
    auto r = env->step(1);
    ++steps;
    if (r.done) break;
  }
  CHECK(steps == 200);

  auto acro = make_env("acrobot");
  acro->reset(11);
  steps = 0;
  while (true) {
    auto r = acro->step(1);  // zero torque never swings up
    ++steps;
    if (r.done) break;
  }
  CHECK(steps == 500);
}

TEST_CASE("acrobot observation layout and rewards") {
  auto env = make_env("acrobot");
  auto s = env->reset(5);
  REQUIRE(s.size() == 6);
  // cos/sin pairs stay on the unit circle.
  CHECK(s[0] * s[0] + s[1] * s[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[2] * s[2] + s[3] * s[3] == doctest::Approx(1.0).epsilon(1e-12));
  auto r = env->step(2);
  CHECK(r.reward == -1.0);
}

TEST_CASE("unknown environment names are rejected with the valid set") {
  try {
    make_env("pendulum");
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("cartpole") != std::string::npos);
    CHECK(msg.find("acrobot") != std::string::npos);
    CHECK(msg.find("mountaincar") != std::string::npos);
  }
}

TEST_CASE("normalizer running statistics and freeze") {
  ObsNormalizer norm(2);
  Rng rng(8);
  double sum0 = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    std::vector<double> s = {rng.uniform(1.0, 3.0), rng.gauss() * 2.0};
    sum0 += s[0];
    norm.update(s);
  }
  CHECK(norm.mean()[0] == doctest::Approx(sum0 / n).epsilon(1e-9));
  norm.freeze();
  std::vector<double> probe = {2.0, 0.5};
  CHECK_THROWS_AS(norm.update(probe), std::logic_error);

  // Frozen transform is affine: convex combinations commute with it.
  Rng prng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a = {prng.uniform(-5, 5), prng.uniform(-5, 5)};
    std::vector<double> b = {prng.uniform(-5, 5), prng.uniform(-5, 5)};
    double alpha = prng.uniform(0, 1);
    std::vector<double> mix = {alpha * a[0] + (1 - alpha) * b[0],
                               alpha * a[1] + (1 - alpha) * b[1]};
    auto ta = norm.transform(a);
    auto tb = norm.transform(b);
    auto tmix = norm.transform(mix);
    for (int i = 0; i < 2; ++i) {
      CHECK(tmix[static_cast<size_t>(i)] ==
            doctest::Approx(alpha * ta[static_cast<size_t>(i)] +
                            (1 - alpha) * tb[static_cast<size_t>(i)])
                .epsilon(1e-9));
    }
  }
}

TEST_CASE("normalizer persists through save and load") {
  ObsNormalizer norm(3);
  Rng rng(15);
  for (int i = 0; i < 57; ++i) {
    std::vector<double> s = {rng.gauss(), rng.uniform(0, 9), rng.gauss() - 4};
    norm.update(s);
  }
  norm.freeze();
  auto dir = std::filesystem::temp_directory_path() / "sortrl_norm_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "n.bin").string();
  norm.save(path);
  ObsNormalizer loaded = ObsNormalizer::load(path);
  std::vector<double> probe = {0.5, 4.0, -3.0};
  auto a = norm.transform(probe);
  auto b = loaded.transform(probe);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[static_cast<size_t>(i)] == doctest::Approx(b[static_cast<size_t>(i)]).epsilon(1e-12));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("rollout without adversary equals a zero-budget adversary") {
  using sortrl::testing::LinearScorer;
  LinearScorer policy({1.0, -0.5});
  ObsNormalizer norm = ObsNormalizer::from_moments({0.0, 0.0}, {1.0, 1.0});

  class NullAttacker final : public Attacker {
   public:
    std::vector<double> perturb(const Policy&,
                                std::span<const double> obs) override {
      return {obs.begin(), obs.end()};
    }
  };

  auto env1 = make_env("mountaincar");
  auto env2 = make_env("mountaincar");
  NullAttacker null_attacker;
  Trajectory clean = rollout(policy, *env1, norm, nullptr, 31);
  Trajectory attacked = rollout(policy, *env2, norm, &null_attacker, 31);
  REQUIRE(clean.length == attacked.length);
  CHECK(clean.total_return == attacked.total_return);
  for (int i = 0; i < clean.length; ++i) {
    CHECK(clean.steps[static_cast<size_t>(i)].action ==
          attacked.steps[static_cast<size_t>(i)].action);
    CHECK(clean.steps[static_cast<size_t>(i)].state ==
          attacked.steps[static_cast<size_t>(i)].state);
  }
  double sum = 0.0;
  for (const auto& st : clean.steps) sum += st.reward;
  CHECK(clean.total_return == sum);
}
