#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sortrl/envs.hpp"
#include "sortrl/policy.hpp"

namespace sortrl {

enum class AttackFamily { kPgd, kRiFgsm, kRiFgsmMulti };

std::string attack_family_name(AttackFamily f);
AttackFamily attack_family_from_name(const std::string& name);

struct AttackConfig {
  AttackFamily family = AttackFamily::kPgd;
  double eps = 0.1;   // l-inf budget in normalized observation units
  int steps = 10;     // PGD iterations
  double eta = 0.0;   // step size; 0 picks eps/steps for PGD, eps for FGSM
  int restarts = 1;   // RI-FGSM-Multi only
  uint64_t seed = 0;

  double resolved_eta() const {
    if (eta > 0.0) return eta;
    return family == AttackFamily::kPgd
               ? eps / static_cast<double>(steps)
               : eps;
  }
};

struct AttackOutcome {
  std::vector<double> perturbed;
  bool flipped = false;
  double ce_before = 0.0;
  double ce_after = 0.0;
};

// Iterated sign-gradient ascent on the cross-entropy toward the clean
// action, projected onto the eps box after every step. The target action
// stays fixed at the clean decision. `warm_start` optionally seeds the
// search with a perturbation from an earlier (smaller-budget) attack.
AttackOutcome pgd_attack(const Policy& policy, std::span<const double> state,
                         const AttackConfig& cfg,
                         const std::vector<double>* warm_start = nullptr);

// One sign-gradient step from a uniform random point inside the eps box;
// the Multi family retries with fresh starts and keeps the first flip.
AttackOutcome ri_fgsm(const Policy& policy, std::span<const double> state,
                      const AttackConfig& cfg);

AttackOutcome run_attack(const Policy& policy, std::span<const double> state,
                         const AttackConfig& cfg);

// Rollout adapter: derives a fresh attack seed per environment step and
// tallies flip/margin statistics for sweep reports.
class RolloutAttacker final : public Attacker {
 public:
  explicit RolloutAttacker(AttackConfig cfg) : cfg_(cfg), base_seed_(cfg.seed) {}
  std::vector<double> perturb(const Policy& policy,
                              std::span<const double> obs) override;

  int64_t steps_seen() const { return steps_; }
  int64_t flips() const { return flips_; }
  double margin_sum() const { return margin_sum_; }

 private:
  AttackConfig cfg_;
  uint64_t base_seed_;
  int64_t steps_ = 0;
  int64_t flips_ = 0;
  double margin_sum_ = 0.0;
};

struct SweepRow {
  std::string env;
  std::string attack;
  double eps = 0.0;
  int episodes = 0;
  double mean_reward = 0.0;
  double std_err = 0.0;
  double flip_rate = 0.0;
  double mean_margin = 0.0;
};

struct EpisodeRecord {
  double eps = 0.0;
  int episode = 0;
  uint64_t env_seed = 0;
  double episode_return = 0.0;
  int length = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;          // one per eps, grid order
  std::vector<EpisodeRecord> episodes; // eps-major, episode order
};

// Attacked rollouts over a budget grid. Episode seeds depend only on
// (seed, episode index), so different methods and budgets face the same
// environment draws. Episode-level work fans out across the worker pool
// with per-task seeds; aggregation is in fixed index order.
SweepResult sweep_epsilon(const Policy& policy, const EnvFactory& make_env,
                          const ObsNormalizer& normalizer,
                          const std::vector<double>& eps_grid, int episodes,
                          const AttackConfig& tmpl, uint64_t seed);

void write_sweep_csv(const std::string& path, const std::string& method,
                     const SweepResult& result);
void write_episode_csv(const std::string& path, const std::string& method,
                       const SweepResult& result);

// Attacks a fixed state set at each budget in ascending order, warm
// starting every attack from the previous budget's perturbation. Returns
// flip flags indexed [budget][state]; with warm starts the flipped set
// can only grow with the budget.
std::vector<std::vector<uint8_t>> attack_states_warm(
    const Policy& policy, const std::vector<std::vector<double>>& states,
    const std::vector<double>& eps_grid, const AttackConfig& tmpl);

}  // namespace sortrl
