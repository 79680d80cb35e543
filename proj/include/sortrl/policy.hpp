#pragma once

#include <span>
#include <stdexcept>
#include <vector>

namespace sortrl {

// Gap between the largest and second-largest action scores. Half of it
// lower-bounds the radius of the l-inf ball inside which the argmax
// cannot change (for a 1-Lipschitz score map).
struct ActionMargin {
  double value = 0.0;
  int best = -1;
  int runner_up = -1;
};

int argmax_lowest(std::span<const double> scores);
ActionMargin margin_of_scores(std::span<const double> scores);

// Deterministic score-based policy over a discrete action set. act() is
// the argmax with lowest-index tie-break. ce_input_grad returns the
// gradient of log_sum_exp(scores) - scores[target] with respect to the
// observation, which is what gradient attacks ascend.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual int input_dim() const = 0;
  virtual int action_count() const = 0;
  virtual std::vector<double> scores(std::span<const double> obs) const = 0;
  virtual std::vector<double> ce_input_grad(std::span<const double> obs,
                                            int target) const = 0;

  virtual int act(std::span<const double> obs) const {
    auto z = scores(obs);
    return argmax_lowest(z);
  }

  ActionMargin margin(std::span<const double> obs) const {
    auto z = scores(obs);
    return margin_of_scores(z);
  }

  // True when the score map is a fixed deterministic function for which
  // margin certificates are valid (e.g. frozen normalization, exact
  // forward). Defaults to true for stateless policies.
  virtual bool certifiable() const { return true; }
};

inline int argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("argmax_lowest: empty scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

inline ActionMargin margin_of_scores(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw std::invalid_argument("margin: at least two actions required");
  }
  int best = argmax_lowest(scores);
  int second = -1;
  for (int i = 0; i < static_cast<int>(scores.size()); ++i) {
    if (i == best) continue;
    if (second < 0 || scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(second)]) {
      second = i;
    }
  }
  return {scores[static_cast<size_t>(best)] - scores[static_cast<size_t>(second)], best,
          second};
}

}  // namespace sortrl
