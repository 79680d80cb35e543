#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sortrl/sortnet.hpp"
#include "sortrl/teacher.hpp"
#include "sortrl/tensor.hpp"

namespace sortrl {

// Cross-entropy on scaled scores: log_sum_exp(scale * z) - scale * z[target].
// Differentiable w.r.t. z and the scale.
Tensor ce_loss(const Tensor& z, int target, const Tensor& scale);
// Row-wise batched variant; returns the [batch] loss vector.
Tensor ce_loss_batch(const Tensor& Z, const std::vector<int>& targets,
                     const Tensor& scale);

// Hinge-style margin loss on raw scores:
//   0                          if z_y < max_i z_i or z_y - max_{i!=y} z_i > threshold
//   max_{i!=y} z_i - z_y       otherwise
// Minimizing it grows correct decisions' margins up to the threshold;
// wrong decisions and already-saturated margins contribute nothing.
Tensor rob_loss(const Tensor& z, double threshold, int teacher_action);
Tensor rob_loss_batch(const Tensor& Z, double threshold,
                      const std::vector<int>& teacher_actions);

// Geometric interpolation start -> end over [0, total]; nonincreasing
// whenever end <= start.
double imitation_weight_at(int64_t iter, int64_t total,
                           double start, double end);

struct DistillConfig {
  SortNetConfig net;  // input_dim / action_count may be 0: filled from dataset
  double hinge_threshold = 0.0;  // 0 means derive as 2 * eps_target
  double eps_target = 0.1;
  double imitation_start = 1.0;
  double imitation_end = 0.1;
  int64_t iters = 2000;  // optimizer steps
  int64_t batch_size = 512;
  double lr = 0.02;
  double weight_decay = 0.02;
  int64_t log_every = 10;
  // When positive: stop once the rolling mean agreement over the last
  // `early_stop_window` logged rows reaches this level.
  double early_stop_agree = 0.0;
  int64_t early_stop_window = 20;

  double resolved_threshold() const {
    return hinge_threshold > 0.0 ? hinge_threshold : 2.0 * eps_target;
  }
};

struct TrainLogRow {
  int64_t iter;
  double ce;
  double rob;
  double imitation_weight;
  double smoothing_p;
  double margin_frac;  // fraction of the batch with margin >= threshold
  double agree_rate;   // argmax matches the teacher action
};

void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRow>& rows);

struct DistillResult {
  SortNetPolicy policy;  // returned in Eval mode
  std::vector<TrainLogRow> log;
};

// Mini-batch imitation with the composite loss
//   weight * mean(ce) + mean(rob)
// over shuffled passes of the dataset, AdamW updates, and the smoothing
// exponent advanced per iteration for the stochastic forward.
DistillResult distill_train(const ExpertDataset& dataset,
                            const DistillConfig& cfg, uint64_t seed);

// Composite loss on one batch; policy must be in Train mode.
Tensor total_loss(SortNetPolicy& policy, const Tensor& X,
                  const std::vector<int>& teacher_actions,
                  double imitation_weight, double threshold);

}  // namespace sortrl
