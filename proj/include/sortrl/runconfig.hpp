#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sortrl/adversary.hpp"
#include "sortrl/distill.hpp"
#include "sortrl/teacher.hpp"

namespace sortrl {

// Resolved run settings for every pipeline stage. Parsed from a JSON
// file with unknown keys rejected; command-line flags override file
// values. The resolved copy is written into every output directory.
struct RunConfig {
  std::string env = "cartpole";
  uint64_t seed = 1;
  std::string out_dir = "runs/out";
  int threads = 0;  // 0 = SORTRL_THREADS env var or hardware default

  std::string teacher_kind = "dqn";  // "dqn" | "scripted"
  TeacherConfig teacher;

  int64_t dataset_states = 50000;

  // Network settings; hidden widths get the action count appended.
  std::vector<int> hidden_widths = {128, 128};
  double decay = 0.3;
  std::string forward_mode = "exact";  // "exact" | "stochastic"
  double p_start = 8.0;
  double p_end = 1000.0;
  double p_ramp_fraction = 0.5;
  double norm_momentum = 0.99;
  DistillConfig distill;

  AttackConfig attack;
  std::string attack_family = "pgd";

  int eval_episodes = 20;
  double eps_start = 0.0;
  double eps_stop = 0.2;
  double eps_step = 0.02;

  int certify_episodes = 20;

  std::vector<double> eps_grid() const;
  SortNetConfig net_config(int input_dim, int action_count) const;
  AttackConfig attack_config() const;
  void validate() const;  // throws std::invalid_argument

  std::string to_json() const;                      // canonical, sorted keys
  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_json_file(const std::string& path);
};

uint64_t config_hash(const RunConfig& cfg);

}  // namespace sortrl
