#include "sortrl/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sortrl/report.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

std::string attack_family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::kPgd: return "pgd";
    case AttackFamily::kRiFgsm: return "rifgsm";
    case AttackFamily::kRiFgsmMulti: return "rifgsm_multi";
  }
  return "?";
}

AttackFamily attack_family_from_name(const std::string& name) {
  if (name == "pgd") return AttackFamily::kPgd;
  if (name == "rifgsm") return AttackFamily::kRiFgsm;
  if (name == "rifgsm_multi") return AttackFamily::kRiFgsmMulti;
  throw std::invalid_argument("unknown attack family '" + name +
                              "'; valid: pgd, rifgsm, rifgsm_multi");
}

namespace {

double ce_of(std::span<const double> scores, int target) {
  double m = *std::max_element(scores.begin(), scores.end());
  double s = 0.0;
  for (double v : scores) s += std::exp(v - m);
  return m + std::log(s) - scores[static_cast<size_t>(target)];
}

void clip_into_box(std::vector<double>& x, std::span<const double> center,
                   double eps) {
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = std::clamp(x[i], center[i] - eps, center[i] + eps);
  }
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

AttackOutcome pgd_attack(const Policy& policy, std::span<const double> state,
                         const AttackConfig& cfg,
                         const std::vector<double>* warm_start) {
  if (cfg.eps < 0.0) throw std::domain_error("pgd_attack: eps must be >= 0");
  if (cfg.steps < 1) throw std::invalid_argument("pgd_attack: steps must be >= 1");
  const double eta = cfg.resolved_eta();
  auto clean_scores = policy.scores(state);
  const int target = argmax_lowest(clean_scores);

  AttackOutcome out;
  out.ce_before = ce_of(clean_scores, target);
  std::vector<double> x(state.begin(), state.end());
  if (warm_start) {
    if (warm_start->size() != x.size()) {
      throw std::invalid_argument("pgd_attack: warm start dimension mismatch");
    }
    for (size_t i = 0; i < x.size(); ++i) x[i] = state[i] + (*warm_start)[i];
    clip_into_box(x, state, cfg.eps);
    if (policy.act(x) != target) {
      out.perturbed = std::move(x);
      out.flipped = true;
      out.ce_after = ce_of(policy.scores(out.perturbed), target);
      return out;
    }
  }
  for (int k = 0; k < cfg.steps; ++k) {
    auto g = policy.ce_input_grad(x, target);
    for (size_t i = 0; i < x.size(); ++i) x[i] += eta * sign_of(g[i]);
    clip_into_box(x, state, cfg.eps);
    if (policy.act(x) != target) {
      out.flipped = true;
      break;
    }
  }
  out.perturbed = std::move(x);
  out.ce_after = ce_of(policy.scores(out.perturbed), target);
  return out;
}

AttackOutcome ri_fgsm(const Policy& policy, std::span<const double> state,
                      const AttackConfig& cfg) {
  if (cfg.eps < 0.0) throw std::domain_error("ri_fgsm: eps must be >= 0");
  const int restarts =
      cfg.family == AttackFamily::kRiFgsmMulti ? std::max(1, cfg.restarts) : 1;
  const double eta = cfg.resolved_eta();
  auto clean_scores = policy.scores(state);
  const int target = argmax_lowest(clean_scores);

  Rng rng(derive_seed(cfg.seed, "rifgsm"));
  AttackOutcome out;
  out.ce_before = ce_of(clean_scores, target);
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> x(state.size());
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] = state[i] + rng.uniform(-cfg.eps, cfg.eps);
    }
    auto g = policy.ce_input_grad(x, target);
    for (size_t i = 0; i < x.size(); ++i) x[i] += eta * sign_of(g[i]);
    clip_into_box(x, state, cfg.eps);
    bool flip = policy.act(x) != target;
    out.perturbed = std::move(x);
    out.flipped = flip;
    if (flip) break;
  }
  out.ce_after = ce_of(policy.scores(out.perturbed), target);
  return out;
}

AttackOutcome run_attack(const Policy& policy, std::span<const double> state,
                         const AttackConfig& cfg) {
  return cfg.family == AttackFamily::kPgd ? pgd_attack(policy, state, cfg)
                                          : ri_fgsm(policy, state, cfg);
}

std::vector<double> RolloutAttacker::perturb(const Policy& policy,
                                             std::span<const double> obs) {
  AttackConfig step_cfg = cfg_;
  step_cfg.seed = derive_seed(base_seed_, "attack_step",
                              static_cast<uint64_t>(steps_));
  margin_sum_ += margin_of_scores(policy.scores(obs)).value;
  AttackOutcome out = run_attack(policy, obs, step_cfg);
  ++steps_;
  if (out.flipped) ++flips_;
  return std::move(out.perturbed);
}

SweepResult sweep_epsilon(const Policy& policy, const EnvFactory& make_env,
                          const ObsNormalizer& normalizer,
                          const std::vector<double>& eps_grid, int episodes,
                          const AttackConfig& tmpl, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("sweep: episodes must be >= 1");
  if (eps_grid.empty()) throw std::invalid_argument("sweep: empty eps grid");

  struct Task {
    double episode_return = 0.0;
    int length = 0;
    int64_t attack_steps = 0;
    int64_t flips = 0;
    double margin_sum = 0.0;
    uint64_t env_seed = 0;
  };
  const int64_t n_eps = static_cast<int64_t>(eps_grid.size());
  std::vector<Task> tasks(static_cast<size_t>(n_eps * episodes));

  parallel_for(n_eps * episodes, [&](int64_t t) {
    int64_t e = t / episodes;
    int64_t ep = t % episodes;
    AttackConfig cfg = tmpl;
    cfg.eps = eps_grid[static_cast<size_t>(e)];
    cfg.seed = derive_seed(seed, "sweep_attack", static_cast<uint64_t>(e),
                           static_cast<uint64_t>(ep));
    // Same environment draw for every budget and method.
    uint64_t env_seed = derive_seed(seed, "sweep_episode", static_cast<uint64_t>(ep));
    RolloutAttacker attacker(cfg);
    auto env = make_env();
    Trajectory traj = rollout(policy, *env, normalizer, &attacker, env_seed);
    Task& task = tasks[static_cast<size_t>(t)];
    task.episode_return = traj.total_return;
    task.length = traj.length;
    task.attack_steps = attacker.steps_seen();
    task.flips = attacker.flips();
    task.margin_sum = attacker.margin_sum();
    task.env_seed = env_seed;
  });

  SweepResult result;
  std::string env_name = make_env()->name();
  for (int64_t e = 0; e < n_eps; ++e) {
    double sum = 0.0, sumsq = 0.0, margin_sum = 0.0;
    int64_t steps = 0, flips = 0;
    for (int64_t ep = 0; ep < episodes; ++ep) {
      const Task& task = tasks[static_cast<size_t>(e * episodes + ep)];
      sum += task.episode_return;
      sumsq += task.episode_return * task.episode_return;
      steps += task.attack_steps;
      flips += task.flips;
      margin_sum += task.margin_sum;
      result.episodes.push_back({eps_grid[static_cast<size_t>(e)],
                                 static_cast<int>(ep), task.env_seed,
                                 task.episode_return, task.length});
    }
    double n = static_cast<double>(episodes);
    double mean = sum / n;
    double var = episodes > 1 ? std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0))
                              : 0.0;
    SweepRow row;
    row.env = env_name;
    row.attack = attack_family_name(tmpl.family);
    row.eps = eps_grid[static_cast<size_t>(e)];
    row.episodes = episodes;
    row.mean_reward = mean;
    row.std_err = std::sqrt(var / n);
    row.flip_rate = steps > 0 ? static_cast<double>(flips) / static_cast<double>(steps) : 0.0;
    row.mean_margin = steps > 0 ? margin_sum / static_cast<double>(steps) : 0.0;
    result.rows.push_back(std::move(row));
  }
  return result;
}

void write_sweep_csv(const std::string& path, const std::string& method,
                     const SweepResult& result) {
  CsvWriter csv(path);
  csv.header({"env", "method", "attack", "eps", "episodes", "mean_reward",
              "std_err", "flip_rate", "mean_margin"});
  for (const auto& r : result.rows) {
    csv.field(r.env);
    csv.field(method);
    csv.field(r.attack);
    csv.field(r.eps);
    csv.field(r.episodes);
    csv.field(r.mean_reward);
    csv.field(r.std_err);
    csv.field(r.flip_rate);
    csv.field(r.mean_margin);
    csv.end_row();
  }
}

void write_episode_csv(const std::string& path, const std::string& method,
                       const SweepResult& result) {
  CsvWriter csv(path);
  csv.header({"method", "eps", "episode", "env_seed", "return", "length"});
  for (const auto& e : result.episodes) {
    csv.field(method);
    csv.field(e.eps);
    csv.field(e.episode);
    csv.field(static_cast<int64_t>(e.env_seed));
    csv.field(e.episode_return);
    csv.field(e.length);
    csv.end_row();
  }
}

std::vector<std::vector<uint8_t>> attack_states_warm(
    const Policy& policy, const std::vector<std::vector<double>>& states,
    const std::vector<double>& eps_grid, const AttackConfig& tmpl) {
  for (size_t i = 1; i < eps_grid.size(); ++i) {
    if (eps_grid[i] < eps_grid[i - 1]) {
      throw std::invalid_argument("attack_states_warm: grid must be ascending");
    }
  }
  std::vector<std::vector<uint8_t>> flips(
      eps_grid.size(), std::vector<uint8_t>(states.size(), 0));
  std::vector<std::vector<double>> deltas(states.size());
  for (size_t e = 0; e < eps_grid.size(); ++e) {
    AttackConfig cfg = tmpl;
    cfg.family = AttackFamily::kPgd;
    cfg.eps = eps_grid[e];
    for (size_t s = 0; s < states.size(); ++s) {
      const auto& state = states[s];
      AttackOutcome out = pgd_attack(
          policy, state, cfg, deltas[s].empty() ? nullptr : &deltas[s]);
      flips[e][s] = out.flipped ? 1 : 0;
      deltas[s].resize(state.size());
      for (size_t i = 0; i < state.size(); ++i) {
        deltas[s][i] = out.perturbed[i] - state[i];
      }
    }
  }
  return flips;
}

}  // namespace sortrl
