#include "sortrl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "sortrl/report.hpp"

namespace sortrl {

Tensor ce_loss_batch(const Tensor& Z, const std::vector<int>& targets,
                     const Tensor& scale) {
  if (Z.rank() != 2) throw std::invalid_argument("ce_loss: [batch, actions] required");
  const int64_t B = Z.dim(0), A = Z.dim(1);
  if (static_cast<int64_t>(targets.size()) != B) {
    throw std::invalid_argument("ce_loss: one target per row required");
  }
  for (int t : targets) {
    if (t < 0 || t >= A) throw std::domain_error("ce_loss: target out of range");
  }
  if (scale.numel() != 1) throw std::invalid_argument("ce_loss: scale must be scalar");
  const double mu = scale.item();
  auto zd = Z.data();
  std::vector<double> out(static_cast<size_t>(B));
  for (int64_t b = 0; b < B; ++b) {
    const double* zr = zd.data() + b * A;
    double m = zr[0] * mu;
    for (int64_t a = 1; a < A; ++a) m = std::max(m, zr[a] * mu);
    double s = 0.0;
    for (int64_t a = 0; a < A; ++a) s += std::exp(zr[a] * mu - m);
    out[static_cast<size_t>(b)] =
        m + std::log(s) - mu * zr[static_cast<size_t>(targets[static_cast<size_t>(b)])];
  }
  Tensor Zc = Z, sc = scale;
  auto tc = targets;
  return Tensor::make_op(
      {B}, std::move(out), {Z, scale},
      [Zc, sc, tc, B, A](Tensor& o) mutable {
        auto go = o.grad();
        auto zd = Zc.data();
        const double mu = sc.item();
        std::vector<double> soft(static_cast<size_t>(A));
        double gscale = 0.0;
        const bool need_z = Zc.requires_grad();
        auto gz = need_z ? Zc.mutable_grad() : std::span<double>{};
        for (int64_t b = 0; b < B; ++b) {
          double g = go[static_cast<size_t>(b)];
          if (g == 0.0) continue;
          const double* zr = zd.data() + b * A;
          double m = zr[0] * mu;
          for (int64_t a = 1; a < A; ++a) m = std::max(m, zr[a] * mu);
          double s = 0.0;
          for (int64_t a = 0; a < A; ++a) {
            soft[static_cast<size_t>(a)] = std::exp(zr[a] * mu - m);
            s += soft[static_cast<size_t>(a)];
          }
          int y = tc[static_cast<size_t>(b)];
          for (int64_t a = 0; a < A; ++a) {
            double p = soft[static_cast<size_t>(a)] / s;
            double ind = (a == y) ? 1.0 : 0.0;
            if (need_z) gz[static_cast<size_t>(b * A + a)] += g * mu * (p - ind);
            gscale += g * zr[a] * (p - ind);
          }
        }
        if (sc.requires_grad()) sc.mutable_grad()[0] += gscale;
      },
      "ce_loss");
}

Tensor ce_loss(const Tensor& z, int target, const Tensor& scale) {
  if (z.rank() != 1) throw std::invalid_argument("ce_loss: score vector required");
  Tensor Z = Tensor::make_op(
      {1, z.numel()}, {z.data().begin(), z.data().end()}, {z},
      [zc = z](Tensor& o) mutable {
        auto go = o.grad();
        auto gz = zc.mutable_grad();
        for (size_t i = 0; i < go.size(); ++i) gz[i] += go[i];
      },
      "row_view");
  Tensor batch = ce_loss_batch(Z, {target}, scale);
  return sum_all(batch);
}

Tensor rob_loss_batch(const Tensor& Z, double threshold,
                      const std::vector<int>& teacher_actions) {
  if (Z.rank() != 2) throw std::invalid_argument("rob_loss: [batch, actions] required");
  if (threshold <= 0.0) throw std::invalid_argument("rob_loss: threshold must be > 0");
  const int64_t B = Z.dim(0), A = Z.dim(1);
  if (static_cast<int64_t>(teacher_actions.size()) != B) {
    throw std::invalid_argument("rob_loss: one action per row required");
  }
  for (int y : teacher_actions) {
    if (y < 0 || y >= A) throw std::domain_error("rob_loss: action out of range");
  }
  auto zd = Z.data();
  std::vector<double> out(static_cast<size_t>(B), 0.0);
  // rival[b]: argmax over i != y, recorded for the backward pass; -1
  // marks the zero branch.
  std::vector<int> rival(static_cast<size_t>(B), -1);
  for (int64_t b = 0; b < B; ++b) {
    const double* zr = zd.data() + b * A;
    int y = teacher_actions[static_cast<size_t>(b)];
    double zmax = zr[0];
    for (int64_t a = 1; a < A; ++a) zmax = std::max(zmax, zr[a]);
    int best_other = -1;
    for (int64_t a = 0; a < A; ++a) {
      if (a == y) continue;
      if (best_other < 0 || zr[a] > zr[best_other]) best_other = static_cast<int>(a);
    }
    double zy = zr[y];
    if (zy < zmax || zy - zr[best_other] > threshold) continue;
    out[static_cast<size_t>(b)] = zr[best_other] - zy;
    rival[static_cast<size_t>(b)] = best_other;
  }
  Tensor Zc = Z;
  auto yc = teacher_actions;
  return Tensor::make_op(
      {B}, std::move(out), {Z},
      [Zc, yc, rival, A](Tensor& o) mutable {
        auto go = o.grad();
        auto gz = Zc.mutable_grad();
        for (size_t b = 0; b < yc.size(); ++b) {
          int r = rival[b];
          if (r < 0) continue;
          double g = go[b];
          gz[b * static_cast<size_t>(A) + static_cast<size_t>(r)] += g;
          gz[b * static_cast<size_t>(A) + static_cast<size_t>(yc[b])] -= g;
        }
      },
      "rob_loss");
}

Tensor rob_loss(const Tensor& z, double threshold, int teacher_action) {
  if (z.rank() != 1) throw std::invalid_argument("rob_loss: score vector required");
  Tensor Z = Tensor::make_op(
      {1, z.numel()}, {z.data().begin(), z.data().end()}, {z},
      [zc = z](Tensor& o) mutable {
        auto go = o.grad();
        auto gz = zc.mutable_grad();
        for (size_t i = 0; i < go.size(); ++i) gz[i] += go[i];
      },
      "row_view");
  return sum_all(rob_loss_batch(Z, threshold, {teacher_action}));
}

double imitation_weight_at(int64_t iter, int64_t total, double start,
                           double end) {
  if (total <= 0) return end;
  if (iter < 0 || iter > total) {
    throw std::invalid_argument("imitation_weight_at: iter out of range");
  }
  if (start <= 0.0 || end <= 0.0) {
    throw std::invalid_argument("imitation_weight_at: weights must be positive");
  }
  double f = static_cast<double>(iter) / static_cast<double>(total);
  return start * std::pow(end / start, f);
}

Tensor total_loss(SortNetPolicy& policy, const Tensor& X,
                  const std::vector<int>& teacher_actions,
                  double imitation_weight, double threshold) {
  if (X.rank() != 2 || X.dim(0) == 0) {
    throw std::invalid_argument("total_loss: nonempty [batch, dim] input required");
  }
  if (policy.mode() != NetMode::kTrain) {
    throw std::logic_error("total_loss: policy must be in Train mode");
  }
  Tensor Z = policy.scores_batch(X);
  Tensor ce = mean_all(ce_loss_batch(Z, teacher_actions, policy.ce_scale()));
  Tensor rob = mean_all(rob_loss_batch(Z, threshold, teacher_actions));
  return add(scale(ce, imitation_weight), rob);
}

void write_train_log_csv(const std::string& path,
                         const std::vector<TrainLogRow>& rows) {
  CsvWriter csv(path);
  csv.header({"iteration", "ce", "rob", "lambda", "p", "margin_frac",
              "agree_rate"});
  for (const auto& r : rows) {
    csv.field(r.iter);
    csv.field(r.ce);
    csv.field(r.rob);
    csv.field(r.imitation_weight);
    csv.field(r.smoothing_p);
    csv.field(r.margin_frac);
    csv.field(r.agree_rate);
    csv.end_row();
  }
}

DistillResult distill_train(const ExpertDataset& dataset,
                            const DistillConfig& cfg, uint64_t seed) {
  if (dataset.count() == 0) {
    throw std::invalid_argument("distill_train: empty dataset");
  }
  if (cfg.iters <= 0 || cfg.batch_size <= 0) {
    throw std::invalid_argument("distill_train: iters and batch_size must be positive");
  }
  SortNetConfig net_cfg = cfg.net;
  if (net_cfg.input_dim == 0) net_cfg.input_dim = dataset.obs_dim;
  if (net_cfg.action_count == 0) {
    net_cfg.action_count = dataset.action_count;
    if (!net_cfg.widths.empty() && net_cfg.widths.back() == 0) {
      net_cfg.widths.back() = dataset.action_count;
    }
  }
  net_cfg.validate();
  if (net_cfg.input_dim != dataset.obs_dim ||
      net_cfg.action_count != dataset.action_count) {
    throw std::invalid_argument("distill_train: network does not match dataset");
  }
  const double threshold = cfg.resolved_threshold();
  const int64_t n = dataset.count();
  const int dim = dataset.obs_dim;
  const int64_t batch = std::min<int64_t>(cfg.batch_size, n);

  SortNetPolicy policy(net_cfg, derive_seed(seed, "distill_init"));
  policy.set_mode(NetMode::kTrain);
  AdamW opt(policy.params(), {cfg.lr, cfg.weight_decay, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(derive_seed(seed, "distill_shuffle"));

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng.shuffle(order);
  int64_t cursor = 0;

  std::vector<TrainLogRow> log;
  std::vector<double> xs(static_cast<size_t>(batch) * static_cast<size_t>(dim));
  std::vector<int> ys(static_cast<size_t>(batch));
  std::vector<double> agree_window;

  for (int64_t it = 0; it < cfg.iters; ++it) {
    for (int64_t i = 0; i < batch; ++i) {
      if (cursor >= n) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      int64_t src = order[static_cast<size_t>(cursor++)];
      std::copy_n(dataset.states.begin() + src * dim, dim, xs.begin() + i * dim);
      ys[static_cast<size_t>(i)] = dataset.actions[static_cast<size_t>(src)];
    }
    policy.set_iteration(it, cfg.iters);
    double weight = imitation_weight_at(it, cfg.iters, cfg.imitation_start,
                                        cfg.imitation_end);

    Tensor X = Tensor::from_data({batch, dim}, xs);
    Tensor Z = policy.scores_batch(X);
    Tensor ce = mean_all(ce_loss_batch(Z, ys, policy.ce_scale()));
    Tensor rob = mean_all(rob_loss_batch(Z, threshold, ys));
    Tensor loss = add(scale(ce, weight), rob);
    loss.backward();
    opt.step();

    // Batch diagnostics from the same forward.
    int64_t agree = 0, certified = 0;
    auto zd = Z.data();
    const int64_t A = net_cfg.action_count;
    for (int64_t b = 0; b < batch; ++b) {
      std::span<const double> row(zd.data() + b * A, static_cast<size_t>(A));
      int act = argmax_lowest(row);
      if (act == ys[static_cast<size_t>(b)]) ++agree;
      if (margin_of_scores(row).value >= threshold) ++certified;
    }
    double agree_rate = static_cast<double>(agree) / static_cast<double>(batch);
    if (it % cfg.log_every == 0 || it + 1 == cfg.iters) {
      log.push_back({it, ce.item(), rob.item(), weight, policy.smoothing_p(),
                     static_cast<double>(certified) / static_cast<double>(batch),
                     agree_rate});
    }
    if (cfg.early_stop_agree > 0.0) {
      agree_window.push_back(agree_rate);
      if (static_cast<int64_t>(agree_window.size()) >= cfg.early_stop_window) {
        double m = 0.0;
        for (size_t i = agree_window.size() - static_cast<size_t>(cfg.early_stop_window);
             i < agree_window.size(); ++i) {
          m += agree_window[i];
        }
        m /= static_cast<double>(cfg.early_stop_window);
        if (m >= cfg.early_stop_agree) break;
      }
    }
  }
  policy.set_mode(NetMode::kEval);
  return {std::move(policy), std::move(log)};
}

}  // namespace sortrl
