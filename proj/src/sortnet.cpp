#include "sortrl/sortnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "sortrl/checkpoint.hpp"

namespace sortrl {

namespace {

// Ranks past this carry geometric weights below 1e-18 of the leading
// weight and cannot move an f64 result; sorting stops there.
constexpr double kWeightFloorLog10 = -18.0;

// Sentinel code for a zero backward coefficient (rank truncated away or
// |u| kink at exactly zero).
constexpr uint16_t kZeroCoef = 0xFFFF;
constexpr uint16_t kSignBit = 0x8000;

// Weighted sum of the `keep` largest values of buf (descending weights).
double weighted_top_sum(std::vector<double>& buf, std::span<const double> w,
                        int keep) {
  const int d = static_cast<int>(buf.size());
  if (keep < d) {
    std::nth_element(buf.begin(), buf.begin() + keep, buf.end(),
                     std::greater<>());
    std::sort(buf.begin(), buf.begin() + keep, std::greater<>());
  } else {
    std::sort(buf.begin(), buf.end(), std::greater<>());
    keep = d;
  }
  double acc = 0.0;
  for (int r = 0; r < keep; ++r) acc += w[static_cast<size_t>(r)] * buf[static_cast<size_t>(r)];
  return acc;
}

// Same sum, but also emits per-input backward codes (rank and sign of u).
struct RankedEntry {
  double value;  // |u_i|
  int index;
};

double weighted_top_sum_coded(std::span<const double> u,
                              std::vector<RankedEntry>& entries,
                              std::span<const double> w, int keep,
                              uint16_t* codes) {
  const int d = static_cast<int>(u.size());
  entries.resize(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) {
    entries[static_cast<size_t>(i)] = {std::fabs(u[static_cast<size_t>(i)]), i};
  }
  auto desc = [](const RankedEntry& a, const RankedEntry& b) {
    return a.value > b.value || (a.value == b.value && a.index < b.index);
  };
  if (keep < d) {
    std::nth_element(entries.begin(), entries.begin() + keep, entries.end(), desc);
    std::sort(entries.begin(), entries.begin() + keep, desc);
  } else {
    std::sort(entries.begin(), entries.end(), desc);
    keep = d;
  }
  std::fill(codes, codes + d, kZeroCoef);
  double acc = 0.0;
  for (int r = 0; r < keep; ++r) {
    const RankedEntry& e = entries[static_cast<size_t>(r)];
    acc += w[static_cast<size_t>(r)] * e.value;
    double ui = u[static_cast<size_t>(e.index)];
    if (ui > 0.0) {
      codes[e.index] = static_cast<uint16_t>(r);
    } else if (ui < 0.0) {
      codes[e.index] = static_cast<uint16_t>(r) | kSignBit;
    }
  }
  return acc;
}

double coef_from_code(uint16_t code, std::span<const double> w) {
  if (code == kZeroCoef) return 0.0;
  double v = w[static_cast<size_t>(code & 0x7FFF)];
  return (code & kSignBit) ? -v : v;
}

}  // namespace

double SmoothingSchedule::at(int64_t iter, int64_t total_iters) const {
  if (total_iters <= 0) return p_end;
  double ramp_iters = ramp_fraction * static_cast<double>(total_iters);
  if (ramp_iters <= 0.0 || static_cast<double>(iter) >= ramp_iters) return p_end;
  double f = static_cast<double>(iter) / ramp_iters;
  return p_start * std::pow(p_end / p_start, f);
}

void SortNetConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("SortNetConfig: input_dim < 1");
  if (action_count < 1) throw std::invalid_argument("SortNetConfig: action_count < 1");
  if (widths.empty()) throw std::invalid_argument("SortNetConfig: no layers");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("SortNetConfig: layer width < 1");
  }
  if (widths.back() != action_count) {
    throw std::invalid_argument(
        "SortNetConfig: last layer width must equal action_count");
  }
  if (!(decay >= 0.0 && decay < 1.0)) {
    throw std::invalid_argument("SortNetConfig: decay must be in [0, 1)");
  }
  if (!(norm_momentum > 0.0 && norm_momentum < 1.0)) {
    throw std::invalid_argument("SortNetConfig: norm momentum must be in (0, 1)");
  }
  if (smoothing.p_start < 1.0 || smoothing.p_end < smoothing.p_start) {
    throw std::invalid_argument("SortNetConfig: smoothing exponents invalid");
  }
}

std::vector<double> unit_weights(double decay, int d) {
  if (d < 1) throw std::invalid_argument("unit_weights: d < 1");
  std::vector<double> w(static_cast<size_t>(d));
  double cur = 1.0 - decay;
  for (int i = 0; i < d; ++i) {
    w[static_cast<size_t>(i)] = cur;
    cur *= decay;
  }
  return w;
}

int unit_weight_cutoff(double decay, int d) {
  if (decay <= 0.0) return 1;
  int k = static_cast<int>(std::ceil(kWeightFloorLog10 / std::log10(decay))) + 1;
  return std::min(d, std::max(1, k));
}

double sortnet_unit(std::span<const double> x, std::span<const double> bias,
                    double decay) {
  if (x.size() != bias.size() || x.empty()) {
    throw std::invalid_argument("sortnet_unit: length mismatch");
  }
  const int d = static_cast<int>(x.size());
  std::vector<double> buf(static_cast<size_t>(d));
  for (int i = 0; i < d; ++i) buf[static_cast<size_t>(i)] = std::fabs(x[static_cast<size_t>(i)] + bias[static_cast<size_t>(i)]);
  auto w = unit_weights(decay, d);
  return weighted_top_sum(buf, w, d);
}

namespace {

double power_mean_max(std::span<const double> masked, double p) {
  // masked holds s_i * x_i (zeros where the Bernoulli draw failed).
  double m = 0.0;
  for (double v : masked) m = std::max(m, v);
  if (m == 0.0) return 0.0;
  // Terms with (v/m)^p below 1e-30 cannot affect the sum.
  double floor_ratio = std::exp(-69.0 / p);
  double sum = 0.0;
  for (double v : masked) {
    if (v <= 0.0) continue;
    double ratio = v / m;
    if (ratio < floor_ratio) continue;
    sum += std::pow(ratio, p);
  }
  return m * std::pow(sum, 1.0 / p);
}

}  // namespace

double bernoulli_estimate(std::span<const double> x, double decay, double p,
                          Rng& rng) {
  if (p < 1.0) throw std::invalid_argument("bernoulli_estimate: p must be >= 1");
  std::vector<double> masked(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) {
      throw std::domain_error("bernoulli_estimate: negative input");
    }
    masked[i] = rng.bernoulli(1.0 - decay) ? x[i] : 0.0;
  }
  return power_mean_max(masked, p);
}

double bernoulli_estimate(std::span<const double> x, double decay, double p,
                          uint64_t seed) {
  Rng rng(seed);
  return bernoulli_estimate(x, decay, p, rng);
}

BiasDiagnostic bias_diagnostic(const SortNetConfig& cfg, int n_inits,
                               uint64_t seed) {
  cfg.validate();
  if (n_inits < 2) throw std::invalid_argument("bias_diagnostic: n_inits < 2");
  Rng rng(seed);
  const int d_in = cfg.input_dim;
  const int d_out = cfg.widths[0];
  std::vector<double> zero(static_cast<size_t>(d_in), 0.0);
  std::vector<double> bias(static_cast<size_t>(d_in));
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < n_inits; ++t) {
    double acc = 0.0;
    for (int k = 0; k < d_out; ++k) {
      for (double& b : bias) b = rng.gauss();
      acc += sortnet_unit(zero, bias, cfg.decay);
    }
    double sample = acc / static_cast<double>(d_out);
    sum += sample;
    sumsq += sample * sample;
  }
  double n = static_cast<double>(n_inits);
  double mean = sum / n;
  double var = std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// SortNetPolicy

SortNetPolicy::SortNetPolicy(SortNetConfig cfg, uint64_t init_seed)
    : cfg_(std::move(cfg)),
      p_now_(cfg_.smoothing.p_start),
      stochastic_rng_(derive_seed(init_seed, "sortnet_stochastic")) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "sortnet_init"));
  const int M = cfg_.layer_count();
  weights_.resize(static_cast<size_t>(M));
  keep_.resize(static_cast<size_t>(M));
  for (int l = 0; l < M; ++l) {
    const int d_in = cfg_.layer_input_dim(l);
    const int d_out = cfg_.widths[static_cast<size_t>(l)];
    weights_[static_cast<size_t>(l)] = unit_weights(cfg_.decay, d_in);
    keep_[static_cast<size_t>(l)] = unit_weight_cutoff(cfg_.decay, d_in);
    std::vector<double> b(static_cast<size_t>(d_out) * static_cast<size_t>(d_in));
    for (double& v : b) v = rng.gauss();
    params_.add("layer" + std::to_string(l + 1) + ".bias",
                Tensor::from_data({d_out, d_in}, std::move(b), true));
  }
  params_.add("out.bias",
              Tensor::zeros({cfg_.action_count}, true));
  params_.add("ce_scale", Tensor::scalar(1.0, true));
  norm_.momentum = cfg_.norm_momentum;
  norm_.running_mean.resize(static_cast<size_t>(std::max(0, M - 1)));
  norm_.last_batch_mean.resize(norm_.running_mean.size());
  for (int l = 0; l + 1 < M; ++l) {
    norm_.running_mean[static_cast<size_t>(l)].assign(
        static_cast<size_t>(cfg_.widths[static_cast<size_t>(l)]), 0.0);
  }
}

void SortNetPolicy::set_iteration(int64_t iter, int64_t total_iters) {
  p_now_ = cfg_.smoothing.at(iter, total_iters);
}

struct SortNetPolicy::EvalTrace {
  // Per layer: the layer input and the backward codes for every (unit,
  // input) pair.
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<uint16_t>> codes;
};

void SortNetPolicy::forward_eval(std::span<const double> obs,
                                 std::vector<double>& out,
                                 EvalTrace* trace) const {
  if (static_cast<int>(obs.size()) != cfg_.input_dim) {
    throw std::invalid_argument("SortNetPolicy: observation dimension mismatch");
  }
  if (mode_ != NetMode::kEval) {
    throw std::logic_error(
        "SortNetPolicy: single-observation forward requires Eval mode");
  }
  const int M = cfg_.layer_count();
  std::vector<double> cur(obs.begin(), obs.end());
  std::vector<double> next;
  std::vector<double> buf;
  std::vector<RankedEntry> entries;
  if (trace) {
    trace->inputs.assign(static_cast<size_t>(M), {});
    trace->codes.assign(static_cast<size_t>(M), {});
  }
  for (int l = 0; l < M; ++l) {
    const int d_in = cfg_.layer_input_dim(l);
    const int d_out = cfg_.widths[static_cast<size_t>(l)];
    const auto& w = weights_[static_cast<size_t>(l)];
    const int keep = keep_[static_cast<size_t>(l)];
    const auto bias = params_.get("layer" + std::to_string(l + 1) + ".bias").data();
    next.assign(static_cast<size_t>(d_out), 0.0);
    if (trace) {
      trace->inputs[static_cast<size_t>(l)] = cur;
      trace->codes[static_cast<size_t>(l)].assign(
          static_cast<size_t>(d_out) * static_cast<size_t>(d_in), 0);
    }
    buf.resize(static_cast<size_t>(d_in));
    std::vector<double> u(static_cast<size_t>(d_in));
    for (int k = 0; k < d_out; ++k) {
      const double* bk = bias.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
      if (trace) {
        for (int i = 0; i < d_in; ++i) u[static_cast<size_t>(i)] = cur[static_cast<size_t>(i)] + bk[i];
        next[static_cast<size_t>(k)] = weighted_top_sum_coded(
            u, entries, w, keep,
            trace->codes[static_cast<size_t>(l)].data() +
                static_cast<size_t>(k) * static_cast<size_t>(d_in));
      } else {
        for (int i = 0; i < d_in; ++i) buf[static_cast<size_t>(i)] = std::fabs(cur[static_cast<size_t>(i)] + bk[i]);
        next[static_cast<size_t>(k)] = weighted_top_sum(buf, w, keep);
      }
    }
    if (l + 1 < M) {
      const auto& rm = norm_.running_mean[static_cast<size_t>(l)];
      for (int k = 0; k < d_out; ++k) next[static_cast<size_t>(k)] -= rm[static_cast<size_t>(k)];
    }
    cur.swap(next);
  }
  const auto ob = params_.get("out.bias").data();
  out.resize(static_cast<size_t>(cfg_.action_count));
  for (int a = 0; a < cfg_.action_count; ++a) {
    out[static_cast<size_t>(a)] = -(cur[static_cast<size_t>(a)] + ob[static_cast<size_t>(a)]);
  }
}

std::vector<double> SortNetPolicy::scores(std::span<const double> obs) const {
  std::vector<double> z;
  forward_eval(obs, z, nullptr);
  return z;
}

std::vector<double> SortNetPolicy::ce_input_grad(std::span<const double> obs,
                                                 int target) const {
  if (target < 0 || target >= cfg_.action_count) {
    throw std::invalid_argument("ce_input_grad: target out of range");
  }
  EvalTrace trace;
  std::vector<double> z;
  forward_eval(obs, z, &trace);
  // d(logsumexp(z) - z_target)/dz = softmax(z) - onehot(target)
  double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  std::vector<double> g(z.size());
  for (size_t a = 0; a < z.size(); ++a) g[a] = std::exp(z[a] - m) / s;
  g[static_cast<size_t>(target)] -= 1.0;
  // Through the output negation: x_last = -z - out_bias.
  for (double& v : g) v = -v;
  // Through the layers; the eval-mode mean shift is constant.
  const int M = cfg_.layer_count();
  for (int l = M - 1; l >= 0; --l) {
    const int d_in = cfg_.layer_input_dim(l);
    const int d_out = cfg_.widths[static_cast<size_t>(l)];
    const auto& w = weights_[static_cast<size_t>(l)];
    const auto& codes = trace.codes[static_cast<size_t>(l)];
    std::vector<double> gin(static_cast<size_t>(d_in), 0.0);
    for (int k = 0; k < d_out; ++k) {
      double gk = g[static_cast<size_t>(k)];
      if (gk == 0.0) continue;
      const uint16_t* ck = codes.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
      for (int i = 0; i < d_in; ++i) {
        double c = coef_from_code(ck[i], w);
        if (c != 0.0) gin[static_cast<size_t>(i)] += gk * c;
      }
    }
    g.swap(gin);
  }
  return g;
}

void SortNetPolicy::scores_batch_eval(std::span<const double> flat_states,
                                      int64_t batch,
                                      std::vector<double>& out) const {
  if (static_cast<int64_t>(flat_states.size()) != batch * cfg_.input_dim) {
    throw std::invalid_argument("scores_batch_eval: bad flat length");
  }
  out.resize(static_cast<size_t>(batch) * static_cast<size_t>(cfg_.action_count));
  parallel_for(batch, [&](int64_t b) {
    std::vector<double> z;
    forward_eval(flat_states.subspan(static_cast<size_t>(b * cfg_.input_dim),
                                     static_cast<size_t>(cfg_.input_dim)),
                 z, nullptr);
    std::copy(z.begin(), z.end(),
              out.begin() + static_cast<int64_t>(b) * cfg_.action_count);
  });
}

std::vector<double> SortNetPolicy::layer_forward_eval(
    std::span<const double> x, int layer) const {
  if (mode_ != NetMode::kEval) {
    throw std::logic_error("layer_forward_eval requires Eval mode");
  }
  const int d_in = cfg_.layer_input_dim(layer);
  if (static_cast<int>(x.size()) != d_in) {
    throw std::invalid_argument("layer_forward_eval: width mismatch");
  }
  const int d_out = cfg_.widths[static_cast<size_t>(layer)];
  const auto& w = weights_[static_cast<size_t>(layer)];
  const int keep = keep_[static_cast<size_t>(layer)];
  const auto bias = params_.get("layer" + std::to_string(layer + 1) + ".bias").data();
  std::vector<double> out(static_cast<size_t>(d_out));
  std::vector<double> buf(static_cast<size_t>(d_in));
  for (int k = 0; k < d_out; ++k) {
    const double* bk = bias.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
    for (int i = 0; i < d_in; ++i) buf[static_cast<size_t>(i)] = std::fabs(x[static_cast<size_t>(i)] + bk[i]);
    out[static_cast<size_t>(k)] = weighted_top_sum(buf, w, keep);
  }
  if (layer + 1 < cfg_.layer_count()) {
    const auto& rm = norm_.running_mean[static_cast<size_t>(layer)];
    for (int k = 0; k < d_out; ++k) out[static_cast<size_t>(k)] -= rm[static_cast<size_t>(k)];
  }
  return out;
}

Tensor SortNetPolicy::layer_op(const Tensor& X, int layer) {
  const int64_t B = X.dim(0);
  const int d_in = cfg_.layer_input_dim(layer);
  const int d_out = cfg_.widths[static_cast<size_t>(layer)];
  Tensor bias = params_.get("layer" + std::to_string(layer + 1) + ".bias");
  const auto w = weights_[static_cast<size_t>(layer)];
  const int keep = keep_[static_cast<size_t>(layer)];

  std::vector<double> out(static_cast<size_t>(B) * static_cast<size_t>(d_out));
  {
    auto xd = X.data();
    auto bd = bias.data();
    parallel_for(B, [&](int64_t b) {
      std::vector<double> buf(static_cast<size_t>(d_in));
      const double* xb = xd.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
      for (int k = 0; k < d_out; ++k) {
        const double* bk = bd.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
        for (int i = 0; i < d_in; ++i) buf[static_cast<size_t>(i)] = std::fabs(xb[i] + bk[i]);
        out[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)] =
            weighted_top_sum(buf, w, keep);
      }
    });
  }

  Tensor Xc = X, biasc = bias;
  return Tensor::make_op(
      {B, d_out}, std::move(out), {X, bias},
      // Backward recomputes the per-pair rank codes instead of storing
      // them; memory stays at activation size for any width.
      [Xc, biasc, w, keep, B, d_in, d_out](Tensor& o) mutable {
        auto go = o.grad();
        auto xd = Xc.data();
        auto bd = biasc.data();
        if (Xc.requires_grad()) {
          auto gx = Xc.mutable_grad();
          parallel_for(B, [&](int64_t b) {
            std::vector<RankedEntry> entries;
            std::vector<double> u(static_cast<size_t>(d_in));
            std::vector<uint16_t> codes(static_cast<size_t>(d_in));
            const double* xb = xd.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
            double* gxb = gx.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
            for (int k = 0; k < d_out; ++k) {
              double gk = go[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)];
              if (gk == 0.0) continue;
              const double* bk = bd.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
              for (int i = 0; i < d_in; ++i) u[static_cast<size_t>(i)] = xb[i] + bk[i];
              weighted_top_sum_coded(u, entries, w, keep, codes.data());
              for (int i = 0; i < d_in; ++i) {
                double c = coef_from_code(codes[static_cast<size_t>(i)], w);
                if (c != 0.0) gxb[i] += gk * c;
              }
            }
          });
        }
        if (biasc.requires_grad()) {
          auto gb = biasc.mutable_grad();
          parallel_for(d_out, [&](int64_t k) {
            std::vector<RankedEntry> entries;
            std::vector<double> u(static_cast<size_t>(d_in));
            std::vector<uint16_t> codes(static_cast<size_t>(d_in));
            const double* bk = bd.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
            double* gbk = gb.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
            for (int64_t b = 0; b < B; ++b) {
              double gk = go[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)];
              if (gk == 0.0) continue;
              const double* xb = xd.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
              for (int i = 0; i < d_in; ++i) u[static_cast<size_t>(i)] = xb[i] + bk[i];
              weighted_top_sum_coded(u, entries, w, keep, codes.data());
              for (int i = 0; i < d_in; ++i) {
                double c = coef_from_code(codes[static_cast<size_t>(i)], w);
                if (c != 0.0) gbk[i] += gk * c;
              }
            }
          });
        }
      },
      "sortnet_layer");
}

Tensor SortNetPolicy::layer_op_stochastic(const Tensor& X, int layer) {
  const int64_t B = X.dim(0);
  const int d_in = cfg_.layer_input_dim(layer);
  const int d_out = cfg_.widths[static_cast<size_t>(layer)];
  Tensor bias = params_.get("layer" + std::to_string(layer + 1) + ".bias");
  const double p = p_now_;
  const double success = 1.0 - cfg_.decay;

  // Bernoulli mask drawn serially so the stream is independent of the
  // worker count; applied in parallel.
  const size_t total = static_cast<size_t>(B) * static_cast<size_t>(d_out) *
                       static_cast<size_t>(d_in);
  std::vector<uint8_t> mask(total);
  for (size_t i = 0; i < total; ++i) mask[i] = stochastic_rng_.bernoulli(success) ? 1 : 0;

  std::vector<double> out(static_cast<size_t>(B) * static_cast<size_t>(d_out));
  auto eval_pair = [&](const double* xb, const double* bk, const uint8_t* mk,
                       std::vector<double>& masked) {
    for (int i = 0; i < d_in; ++i) {
      masked[static_cast<size_t>(i)] = mk[i] ? std::fabs(xb[i] + bk[i]) : 0.0;
    }
    return power_mean_max(masked, p);
  };
  {
    auto xd = X.data();
    auto bd = bias.data();
    parallel_for(B, [&](int64_t b) {
      std::vector<double> masked(static_cast<size_t>(d_in));
      const double* xb = xd.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
      for (int k = 0; k < d_out; ++k) {
        const double* bk = bd.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
        const uint8_t* mk = mask.data() +
                            (static_cast<size_t>(b) * static_cast<size_t>(d_out) +
                             static_cast<size_t>(k)) *
                                static_cast<size_t>(d_in);
        out[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)] =
            eval_pair(xb, bk, mk, masked);
      }
    });
  }

  Tensor Xc = X, biasc = bias;
  auto maskc = std::make_shared<std::vector<uint8_t>>(std::move(mask));
  return Tensor::make_op(
      {B, d_out}, std::move(out), {X, bias},
      [Xc, biasc, maskc, p, B, d_in, d_out](Tensor& o) mutable {
        auto go = o.grad();
        auto od = o.data();
        auto xd = Xc.data();
        auto bd = biasc.data();
        const double floor_ratio = std::exp(-69.0 / p);
        // d y / d u_i = s_i sign(u_i) (x_i/m)^(p-1) * (sum)^((1/p)-1)
        // with y = m * sum^(1/p); equivalently (x_i/y')^(p-1) terms.
        auto pair_grad = [&](int64_t b, int k, std::vector<double>& gu) {
          const double* xb = xd.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
          const double* bk = bd.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
          const uint8_t* mk = maskc->data() +
                              (static_cast<size_t>(b) * static_cast<size_t>(d_out) +
                               static_cast<size_t>(k)) *
                                  static_cast<size_t>(d_in);
          double y = od[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)];
          std::fill(gu.begin(), gu.end(), 0.0);
          if (y <= 0.0) return;
          double m = 0.0;
          for (int i = 0; i < d_in; ++i) {
            if (mk[i]) m = std::max(m, std::fabs(xb[i] + bk[i]));
          }
          if (m <= 0.0) return;
          double sum = 0.0;
          for (int i = 0; i < d_in; ++i) {
            if (!mk[i]) continue;
            double ratio = std::fabs(xb[i] + bk[i]) / m;
            if (ratio < floor_ratio) continue;
            sum += std::pow(ratio, p);
          }
          double outer = std::pow(sum, 1.0 / p - 1.0);
          for (int i = 0; i < d_in; ++i) {
            if (!mk[i]) continue;
            double u = xb[i] + bk[i];
            double au = std::fabs(u);
            if (au == 0.0) continue;
            double ratio = au / m;
            if (ratio < floor_ratio) continue;
            double dmag = std::pow(ratio, p - 1.0) * outer;
            gu[static_cast<size_t>(i)] = (u > 0.0 ? dmag : -dmag);
          }
        };
        if (Xc.requires_grad()) {
          auto gx = Xc.mutable_grad();
          parallel_for(B, [&](int64_t b) {
            std::vector<double> gu(static_cast<size_t>(d_in));
            double* gxb = gx.data() + static_cast<size_t>(b) * static_cast<size_t>(d_in);
            for (int k = 0; k < d_out; ++k) {
              double gk = go[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)];
              if (gk == 0.0) continue;
              pair_grad(b, k, gu);
              for (int i = 0; i < d_in; ++i) gxb[i] += gk * gu[static_cast<size_t>(i)];
            }
          });
        }
        if (biasc.requires_grad()) {
          auto gb = biasc.mutable_grad();
          parallel_for(d_out, [&](int64_t k) {
            std::vector<double> gu(static_cast<size_t>(d_in));
            double* gbk = gb.data() + static_cast<size_t>(k) * static_cast<size_t>(d_in);
            for (int64_t b = 0; b < B; ++b) {
              double gk = go[static_cast<size_t>(b) * static_cast<size_t>(d_out) + static_cast<size_t>(k)];
              if (gk == 0.0) continue;
              pair_grad(b, static_cast<int>(k), gu);
              for (int i = 0; i < d_in; ++i) gbk[i] += gk * gu[static_cast<size_t>(i)];
            }
          });
        }
      },
      "sortnet_layer_stochastic");
}

namespace {

// Subtracts the per-column batch mean; gradients flow through the mean.
Tensor batch_center(const Tensor& Y, std::vector<double>& batch_mean_out) {
  const int64_t B = Y.dim(0), d = Y.dim(1);
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  auto yd = Y.data();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k) mean[static_cast<size_t>(k)] += yd[static_cast<size_t>(b * d + k)];
  for (double& v : mean) v /= static_cast<double>(B);
  std::vector<double> out(yd.begin(), yd.end());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k) out[static_cast<size_t>(b * d + k)] -= mean[static_cast<size_t>(k)];
  batch_mean_out = mean;
  Tensor Yc = Y;
  return Tensor::make_op(
      {B, d}, std::move(out), {Y},
      [Yc, B, d](Tensor& o) mutable {
        auto go = o.grad();
        auto gy = Yc.mutable_grad();
        std::vector<double> gmean(static_cast<size_t>(d), 0.0);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t k = 0; k < d; ++k) gmean[static_cast<size_t>(k)] += go[static_cast<size_t>(b * d + k)];
        for (double& v : gmean) v /= static_cast<double>(B);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t k = 0; k < d; ++k)
            gy[static_cast<size_t>(b * d + k)] += go[static_cast<size_t>(b * d + k)] - gmean[static_cast<size_t>(k)];
      },
      "batch_center");
}

// Subtracts a constant per-column shift; identity backward.
Tensor shift_columns(const Tensor& Y, const std::vector<double>& shift) {
  const int64_t B = Y.dim(0), d = Y.dim(1);
  auto yd = Y.data();
  std::vector<double> out(yd.begin(), yd.end());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k) out[static_cast<size_t>(b * d + k)] -= shift[static_cast<size_t>(k)];
  Tensor Yc = Y;
  return Tensor::make_op(
      {B, d}, std::move(out), {Y},
      [Yc](Tensor& o) mutable {
        auto go = o.grad();
        auto gy = Yc.mutable_grad();
        for (size_t i = 0; i < go.size(); ++i) gy[i] += go[i];
      },
      "shift_columns");
}

// scores = -(X + bias) broadcast over rows.
Tensor negate_plus_bias(const Tensor& X, const Tensor& bias) {
  const int64_t B = X.dim(0), d = X.dim(1);
  auto xd = X.data();
  auto bd = bias.data();
  std::vector<double> out(xd.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < d; ++k)
      out[static_cast<size_t>(b * d + k)] = -(xd[static_cast<size_t>(b * d + k)] + bd[static_cast<size_t>(k)]);
  Tensor Xc = X, biasc = bias;
  return Tensor::make_op(
      {B, d}, std::move(out), {X, bias},
      [Xc, biasc, B, d](Tensor& o) mutable {
        auto go = o.grad();
        if (Xc.requires_grad()) {
          auto gx = Xc.mutable_grad();
          for (size_t i = 0; i < go.size(); ++i) gx[i] -= go[i];
        }
        if (biasc.requires_grad()) {
          auto gb = biasc.mutable_grad();
          for (int64_t b = 0; b < B; ++b)
            for (int64_t k = 0; k < d; ++k) gb[static_cast<size_t>(k)] -= go[static_cast<size_t>(b * d + k)];
        }
      },
      "negate_plus_bias");
}

}  // namespace

Tensor SortNetPolicy::scores_batch(const Tensor& X) {
  if (X.rank() != 2 || X.dim(1) != cfg_.input_dim) {
    throw std::invalid_argument("scores_batch: X must be [batch, input_dim]");
  }
  const int M = cfg_.layer_count();
  Tensor cur = X;
  for (int l = 0; l < M; ++l) {
    Tensor y = cfg_.forward_mode == ForwardMode::kExact
                   ? layer_op(cur, l)
                   : layer_op_stochastic(cur, l);
    if (l + 1 < M) {
      auto& rm = norm_.running_mean[static_cast<size_t>(l)];
      if (mode_ == NetMode::kTrain) {
        std::vector<double> batch_mean;
        y = batch_center(y, batch_mean);
        for (size_t k = 0; k < rm.size(); ++k) {
          rm[k] = norm_.momentum * rm[k] + (1.0 - norm_.momentum) * batch_mean[k];
        }
        norm_.last_batch_mean[static_cast<size_t>(l)] = batch_mean;
      } else {
        y = shift_columns(y, rm);
      }
    }
    cur = y;
  }
  return negate_plus_bias(cur, params_.get("out.bias"));
}

// ---------------------------------------------------------------------------
// persistence

void SortNetPolicy::save(const std::string& path) const {
  ParamStore out;
  std::vector<double> header;
  header.push_back(static_cast<double>(cfg_.layer_count()));
  header.push_back(static_cast<double>(cfg_.input_dim));
  header.push_back(static_cast<double>(cfg_.action_count));
  header.push_back(cfg_.decay);
  header.push_back(cfg_.norm_momentum);
  header.push_back(cfg_.forward_mode == ForwardMode::kExact ? 0.0 : 1.0);
  header.push_back(cfg_.smoothing.p_start);
  header.push_back(cfg_.smoothing.p_end);
  header.push_back(cfg_.smoothing.ramp_fraction);
  for (int wdt : cfg_.widths) header.push_back(static_cast<double>(wdt));
  out.add("__config__", Tensor::vec(std::move(header)));
  for (const auto& [name, t] : params_) out.add(name, t.detached());
  for (size_t l = 0; l < norm_.running_mean.size(); ++l) {
    out.add("norm" + std::to_string(l + 1) + ".mean",
            Tensor::vec(norm_.running_mean[l]));
  }
  save_checkpoint(path, out);
}

SortNetPolicy SortNetPolicy::load(const std::string& path) {
  ParamStore in = load_checkpoint(path);
  const auto& header = in.get("__config__");
  auto h = header.data();
  if (h.size() < 9) throw std::runtime_error("policy checkpoint: bad header");
  SortNetConfig cfg;
  int M = static_cast<int>(h[0]);
  cfg.input_dim = static_cast<int>(h[1]);
  cfg.action_count = static_cast<int>(h[2]);
  cfg.decay = h[3];
  cfg.norm_momentum = h[4];
  cfg.forward_mode = h[5] == 0.0 ? ForwardMode::kExact : ForwardMode::kStochastic;
  cfg.smoothing.p_start = h[6];
  cfg.smoothing.p_end = h[7];
  cfg.smoothing.ramp_fraction = h[8];
  if (static_cast<int>(h.size()) != 9 + M) {
    throw std::runtime_error("policy checkpoint: header width mismatch");
  }
  for (int l = 0; l < M; ++l) cfg.widths.push_back(static_cast<int>(h[static_cast<size_t>(9 + l)]));
  SortNetPolicy policy(cfg, /*init_seed=*/0);
  for (auto& [name, t] : policy.params_) {
    const Tensor& src = in.get(name);
    if (src.shape() != t.shape()) {
      throw std::runtime_error("policy checkpoint: shape mismatch for " + name);
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  for (size_t l = 0; l < policy.norm_.running_mean.size(); ++l) {
    const Tensor& src = in.get("norm" + std::to_string(l + 1) + ".mean");
    auto& dst = policy.norm_.running_mean[l];
    if (src.data().size() != dst.size()) {
      throw std::runtime_error("policy checkpoint: norm width mismatch");
    }
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  policy.set_mode(NetMode::kEval);
  return policy;
}

}  // namespace sortrl
