#include "sortrl/certify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sortrl/adversary.hpp"
#include "sortrl/report.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

Certificate certify_state(const Policy& policy, std::span<const double> state,
                          double eps) {
  if (eps < 0.0) throw std::domain_error("certify_state: eps must be >= 0");
  if (!policy.certifiable()) {
    throw std::logic_error(
        "certify_state: policy is not in a certifiable mode (needs frozen "
        "normalization and exact forward)");
  }
  Certificate c;
  c.state.assign(state.begin(), state.end());
  c.margin = policy.margin(state);
  c.radius_lb = 0.5 * c.margin.value;
  c.eps = eps;
  c.certified = c.margin.value >= 2.0 * eps;
  return c;
}

AcrReport acr_from_margins(const std::vector<double>& margins, double eps) {
  if (margins.empty()) throw std::domain_error("acr: no states collected");
  int64_t certified = 0;
  for (double m : margins) {
    if (m >= 2.0 * eps) ++certified;
  }
  AcrReport r;
  r.eps = eps;
  r.n_states = static_cast<int64_t>(margins.size());
  r.n_certified = certified;
  r.acr = static_cast<double>(certified) / static_cast<double>(r.n_states);
  return r;
}

std::vector<double> collect_rollout_margins(const Policy& policy,
                                            const EnvFactory& make_env,
                                            const ObsNormalizer& normalizer,
                                            int episodes, uint64_t seed) {
  if (!policy.certifiable()) {
    throw std::logic_error("collect_rollout_margins: policy not certifiable");
  }
  std::vector<std::vector<double>> per_episode(static_cast<size_t>(episodes));
  parallel_for(episodes, [&](int64_t ep) {
    auto env = make_env();
    Trajectory traj = rollout(policy, *env, normalizer, nullptr,
                              derive_seed(seed, "acr_episode", static_cast<uint64_t>(ep)));
    auto& out = per_episode[static_cast<size_t>(ep)];
    out.reserve(traj.steps.size());
    for (const auto& step : traj.steps) {
      out.push_back(policy.margin(step.state).value);
    }
  });
  std::vector<double> margins;
  for (const auto& chunk : per_episode) {
    margins.insert(margins.end(), chunk.begin(), chunk.end());
  }
  return margins;
}

AcrReport action_certification_rate(const Policy& policy,
                                    const EnvFactory& make_env,
                                    const ObsNormalizer& normalizer,
                                    double eps, int episodes, uint64_t seed) {
  auto margins =
      collect_rollout_margins(policy, make_env, normalizer, episodes, seed);
  return acr_from_margins(margins, eps);
}

double lipschitz_audit(const Policy& policy,
                       const std::vector<std::pair<double, double>>& box,
                       int64_t n_pairs, uint64_t seed) {
  if (static_cast<int>(box.size()) != policy.input_dim()) {
    throw std::invalid_argument("lipschitz_audit: box dimension mismatch");
  }
  if (n_pairs < 1) throw std::invalid_argument("lipschitz_audit: n_pairs < 1");
  const int dim = policy.input_dim();
  std::vector<double> ratios(static_cast<size_t>(n_pairs), 0.0);
  parallel_for_ranges(n_pairs, [&](int64_t lo, int64_t hi) {
    std::vector<double> s1(static_cast<size_t>(dim)), s2(static_cast<size_t>(dim));
    for (int64_t t = lo; t < hi; ++t) {
      Rng rng(derive_seed(seed, "lipschitz_pair", static_cast<uint64_t>(t)));
      double dist = 0.0;
      do {
        for (int i = 0; i < dim; ++i) {
          s1[static_cast<size_t>(i)] = rng.uniform(box[static_cast<size_t>(i)].first,
                                                   box[static_cast<size_t>(i)].second);
          s2[static_cast<size_t>(i)] = rng.uniform(box[static_cast<size_t>(i)].first,
                                                   box[static_cast<size_t>(i)].second);
        }
        dist = 0.0;
        for (int i = 0; i < dim; ++i) {
          dist = std::max(dist, std::fabs(s1[static_cast<size_t>(i)] - s2[static_cast<size_t>(i)]));
        }
      } while (dist < 1e-12);
      auto z1 = policy.scores(s1);
      auto z2 = policy.scores(s2);
      double dz = 0.0;
      for (size_t a = 0; a < z1.size(); ++a) {
        dz = std::max(dz, std::fabs(z1[a] - z2[a]));
      }
      ratios[static_cast<size_t>(t)] = dz / dist;
    }
  });
  double worst = 0.0;
  for (double r : ratios) worst = std::max(worst, r);
  return worst;
}

double brute_force_radius(const Policy& policy, std::span<const double> state,
                          double resolution, double max_r, uint64_t seed,
                          int n_directions) {
  if (resolution <= 0.0 || max_r <= 0.0) {
    throw std::invalid_argument("brute_force_radius: bad resolution/max_r");
  }
  const int dim = policy.input_dim();
  const int clean = policy.act(state);

  // Probe directions with unit l-inf norm: all sign corners for small
  // dims, then random draws.
  std::vector<std::vector<double>> dirs;
  if (dim <= 10) {
    for (int mask = 0; mask < (1 << dim); ++mask) {
      std::vector<double> v(static_cast<size_t>(dim));
      for (int i = 0; i < dim; ++i) v[static_cast<size_t>(i)] = (mask >> i) & 1 ? 1.0 : -1.0;
      dirs.push_back(std::move(v));
    }
  }
  Rng rng(derive_seed(seed, "radius_dirs"));
  while (static_cast<int>(dirs.size()) < n_directions + (dim <= 10 ? (1 << dim) : 0)) {
    std::vector<double> v(static_cast<size_t>(dim));
    double mx = 0.0;
    for (double& c : v) {
      c = rng.uniform(-1.0, 1.0);
      mx = std::max(mx, std::fabs(c));
    }
    if (mx < 1e-9) continue;
    for (double& c : v) c /= mx;
    dirs.push_back(std::move(v));
  }

  std::vector<double> probe(static_cast<size_t>(dim));
  auto flips_at = [&](const std::vector<double>& dir, double r) {
    for (int i = 0; i < dim; ++i) {
      probe[static_cast<size_t>(i)] = state[static_cast<size_t>(i)] + r * dir[static_cast<size_t>(i)];
    }
    return policy.act(probe) != clean;
  };

  double best = max_r;
  for (const auto& dir : dirs) {
    double prev = 0.0;
    double r = resolution;
    while (r <= best) {
      if (flips_at(dir, r)) {
        // Bisect (prev, r]; prev is flip-free along this direction.
        double lo = prev, hi = r;
        while (hi - lo > resolution) {
          double mid = 0.5 * (lo + hi);
          if (flips_at(dir, mid)) {
            hi = mid;
          } else {
            lo = mid;
          }
        }
        best = std::min(best, hi);
        break;
      }
      prev = r;
      if (r >= best) break;
      r = std::min(best, r * 1.3);
    }
  }
  return best;
}

void write_certificates_csv(const std::string& path,
                            const std::vector<Certificate>& certs) {
  CsvWriter csv(path);
  csv.header({"state_index", "margin", "radius_lb", "certified"});
  for (size_t i = 0; i < certs.size(); ++i) {
    csv.field(static_cast<int64_t>(i));
    csv.field(certs[i].margin.value);
    csv.field(certs[i].radius_lb);
    csv.field(static_cast<int64_t>(certs[i].certified ? 1 : 0));
    csv.end_row();
  }
}

void write_acr_csv(const std::string& path,
                   const std::vector<AcrReport>& reports) {
  CsvWriter csv(path);
  csv.header({"eps", "n_states", "n_certified", "acr"});
  for (const auto& r : reports) {
    csv.field(r.eps);
    csv.field(r.n_states);
    csv.field(r.n_certified);
    csv.field(r.acr);
    csv.end_row();
  }
}

std::vector<double> read_margins_csv(const std::string& path) {
  CsvTable table = read_csv(path);
  std::vector<double> margins;
  margins.reserve(table.rows.size());
  for (size_t r = 0; r < table.rows.size(); ++r) {
    margins.push_back(table.number(r, "margin"));
  }
  return margins;
}

}  // namespace sortrl
