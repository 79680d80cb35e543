#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sortrl/envs.hpp"
#include "sortrl/policy.hpp"

namespace sortrl {

struct Certificate {
  std::vector<double> state;
  ActionMargin margin;
  double radius_lb = 0.0;  // margin / 2
  double eps = 0.0;
  bool certified = false;  // margin >= 2 * eps
};

// Margin certificate at one state; requires a certifiable policy
// (frozen, exact forward) — throws std::logic_error otherwise.
Certificate certify_state(const Policy& policy, std::span<const double> state,
                          double eps);

struct AcrReport {
  double eps = 0.0;
  int64_t n_states = 0;
  int64_t n_certified = 0;
  double acr = 0.0;
};

AcrReport acr_from_margins(const std::vector<double>& margins, double eps);

// Margins of every observation visited over clean rollouts.
std::vector<double> collect_rollout_margins(const Policy& policy,
                                            const EnvFactory& make_env,
                                            const ObsNormalizer& normalizer,
                                            int episodes, uint64_t seed);

AcrReport action_certification_rate(const Policy& policy,
                                    const EnvFactory& make_env,
                                    const ObsNormalizer& normalizer,
                                    double eps, int episodes, uint64_t seed);

// Max over sampled pairs of ||g(s1)-g(s2)||_inf / ||s1-s2||_inf inside
// the per-dimension box. A sound 1-Lipschitz network never exceeds
// 1 + 1e-9.
double lipschitz_audit(const Policy& policy,
                       const std::vector<std::pair<double, double>>& box,
                       int64_t n_pairs, uint64_t seed);

// Smallest perturbation radius found that flips the decision (an upper
// bound on the true robust radius), or max_r when no flip is found.
// Probes random l-inf unit directions plus sign-pattern corners at
// geometrically growing radii, then bisects to `resolution`.
double brute_force_radius(const Policy& policy, std::span<const double> state,
                          double resolution, double max_r, uint64_t seed,
                          int n_directions = 64);

void write_certificates_csv(const std::string& path,
                            const std::vector<Certificate>& certs);
void write_acr_csv(const std::string& path,
                   const std::vector<AcrReport>& reports);
std::vector<double> read_margins_csv(const std::string& path);

}  // namespace sortrl
