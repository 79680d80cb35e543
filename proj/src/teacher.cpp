#include "sortrl/teacher.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "sortrl/checkpoint.hpp"

namespace sortrl {

QNetwork::QNetwork(int in_dim, std::vector<int> hidden, int out_dim,
                   uint64_t seed)
    : in_dim_(in_dim), out_dim_(out_dim), hidden_(std::move(hidden)) {
  if (in_dim < 1 || out_dim < 1) throw std::invalid_argument("QNetwork: bad dims");
  Rng rng(derive_seed(seed, "qnet_init"));
  int prev = in_dim_;
  int idx = 0;
  auto add_layer = [&](int width) {
    // He-style init keeps relu activations in range.
    double std_w = std::sqrt(2.0 / static_cast<double>(prev));
    std::vector<double> w(static_cast<size_t>(width) * static_cast<size_t>(prev));
    for (double& v : w) v = rng.gauss() * std_w;
    params_.add("fc" + std::to_string(idx) + ".w",
                Tensor::from_data({width, prev}, std::move(w), true));
    params_.add("fc" + std::to_string(idx) + ".b",
                Tensor::zeros({width}, true));
    prev = width;
    ++idx;
  };
  for (int h : hidden_) add_layer(h);
  add_layer(out_dim_);
}

Tensor QNetwork::forward(const Tensor& x) const {
  Tensor cur = x;
  const int n_layers = static_cast<int>(hidden_.size()) + 1;
  for (int i = 0; i < n_layers; ++i) {
    cur = affine(cur, params_.get("fc" + std::to_string(i) + ".w"),
                 params_.get("fc" + std::to_string(i) + ".b"));
    if (i + 1 < n_layers) cur = relu(cur);
  }
  return cur;
}

std::vector<double> QNetwork::forward_values(std::span<const double> obs) const {
  Tensor out = forward(Tensor::vec({obs.begin(), obs.end()}));
  return {out.data().begin(), out.data().end()};
}

void QNetwork::copy_parameters_from(const QNetwork& other) {
  for (auto& [name, t] : params_) {
    const Tensor& src = other.params_.get(name);
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

void QNetwork::save(const std::string& path) const {
  ParamStore out;
  std::vector<double> header = {static_cast<double>(in_dim_),
                                static_cast<double>(out_dim_),
                                static_cast<double>(hidden_.size())};
  for (int h : hidden_) header.push_back(static_cast<double>(h));
  out.add("__config__", Tensor::vec(std::move(header)));
  for (const auto& [name, t] : params_) out.add(name, t.detached());
  save_checkpoint(path, out);
}

QNetwork QNetwork::load(const std::string& path) {
  ParamStore in = load_checkpoint(path);
  auto h = in.get("__config__").data();
  if (h.size() < 3) throw std::runtime_error("qnetwork checkpoint: bad header");
  int in_dim = static_cast<int>(h[0]);
  int out_dim = static_cast<int>(h[1]);
  int n_hidden = static_cast<int>(h[2]);
  if (static_cast<int>(h.size()) != 3 + n_hidden) {
    throw std::runtime_error("qnetwork checkpoint: header width mismatch");
  }
  std::vector<int> hidden;
  for (int i = 0; i < n_hidden; ++i) hidden.push_back(static_cast<int>(h[static_cast<size_t>(3 + i)]));
  QNetwork net(in_dim, hidden, out_dim, 0);
  for (auto& [name, t] : net.params_) {
    const Tensor& src = in.get(name);
    if (src.shape() != t.shape()) {
      throw std::runtime_error("qnetwork checkpoint: shape mismatch for " + name);
    }
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
  return net;
}

std::vector<double> MlpPolicy::scores(std::span<const double> obs) const {
  return net_->forward_values(obs);
}

std::vector<double> MlpPolicy::ce_input_grad(std::span<const double> obs,
                                             int target) const {
  if (target < 0 || target >= net_->out_dim()) {
    throw std::invalid_argument("ce_input_grad: target out of range");
  }
  Tensor x = Tensor::vec({obs.begin(), obs.end()}, /*requires_grad=*/true);
  Tensor z = net_->forward(x);
  Tensor loss = sub(log_sum_exp(z), pick(z, target));
  loss.backward();
  return {x.grad().begin(), x.grad().end()};
}

ScriptedCartpolePolicy::ScriptedCartpolePolicy(const ObsNormalizer& normalizer) {
  mean_ = normalizer.mean();
  auto var = normalizer.variance();
  sigma_.resize(var.size());
  for (size_t i = 0; i < var.size(); ++i) sigma_[i] = std::sqrt(var[i] + 1e-8);
}

std::vector<double> ScriptedCartpolePolicy::scores(
    std::span<const double> obs) const {
  if (obs.size() != 4) throw std::invalid_argument("scripted policy: 4-dim obs");
  double theta = obs[2] * sigma_[2] + mean_[2];
  double theta_dot = obs[3] * sigma_[3] + mean_[3];
  double lean = theta + 0.5 * theta_dot;
  // Push toward the lean; scores expose the rule's margin.
  return {-lean, lean};
}

// ---------------------------------------------------------------------------
// replay buffer

ReplayBuffer::ReplayBuffer(int64_t capacity, int dim)
    : capacity_(capacity), dim_(dim) {
  if (capacity < 1 || dim < 1) throw std::invalid_argument("ReplayBuffer: bad size");
  states_.resize(static_cast<size_t>(capacity) * static_cast<size_t>(dim));
  next_states_.resize(states_.size());
  rewards_.resize(static_cast<size_t>(capacity));
  actions_.resize(static_cast<size_t>(capacity));
  done_.resize(static_cast<size_t>(capacity));
}

void ReplayBuffer::push(std::span<const double> s, int a, double r,
                        std::span<const double> s2, bool done) {
  if (static_cast<int>(s.size()) != dim_ || static_cast<int>(s2.size()) != dim_) {
    throw std::invalid_argument("ReplayBuffer: dimension mismatch");
  }
  size_t off = static_cast<size_t>(head_) * static_cast<size_t>(dim_);
  std::copy(s.begin(), s.end(), states_.begin() + static_cast<int64_t>(off));
  std::copy(s2.begin(), s2.end(), next_states_.begin() + static_cast<int64_t>(off));
  actions_[static_cast<size_t>(head_)] = a;
  rewards_[static_cast<size_t>(head_)] = r;
  done_[static_cast<size_t>(head_)] = done ? 1 : 0;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

TransitionBatch ReplayBuffer::sample(int64_t batch, Rng& rng) const {
  if (size_ == 0) throw std::logic_error("ReplayBuffer: sample from empty buffer");
  TransitionBatch out;
  out.n = batch;
  out.dim = dim_;
  out.states.resize(static_cast<size_t>(batch) * static_cast<size_t>(dim_));
  out.next_states.resize(out.states.size());
  out.actions.resize(static_cast<size_t>(batch));
  out.rewards.resize(static_cast<size_t>(batch));
  out.done.resize(static_cast<size_t>(batch));
  for (int64_t i = 0; i < batch; ++i) {
    int64_t j = rng.uniform_int(size_);
    size_t src = static_cast<size_t>(j) * static_cast<size_t>(dim_);
    size_t dst = static_cast<size_t>(i) * static_cast<size_t>(dim_);
    std::copy_n(states_.begin() + static_cast<int64_t>(src), dim_,
                out.states.begin() + static_cast<int64_t>(dst));
    std::copy_n(next_states_.begin() + static_cast<int64_t>(src), dim_,
                out.next_states.begin() + static_cast<int64_t>(dst));
    out.actions[static_cast<size_t>(i)] = actions_[static_cast<size_t>(j)];
    out.rewards[static_cast<size_t>(i)] = rewards_[static_cast<size_t>(j)];
    out.done[static_cast<size_t>(i)] = done_[static_cast<size_t>(j)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// DQN training

namespace {

double evaluate_greedy(const QNetwork& net, Env& env,
                       const ObsNormalizer& norm, int episodes, uint64_t seed) {
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    std::vector<double> state = env.reset(derive_seed(seed, "teacher_eval", static_cast<uint64_t>(ep)));
    bool done = false;
    while (!done) {
      auto q = net.forward_values(norm.transform(state));
      StepResult r = env.step(argmax_lowest(q));
      total += r.reward;
      state = std::move(r.state);
      done = r.done;
    }
  }
  return total / static_cast<double>(episodes);
}

}  // namespace

TeacherResult train_teacher(Env& env, const TeacherConfig& cfg, uint64_t seed) {
  const int dim = env.obs_dim();
  const int n_actions = env.action_count();
  auto net = std::make_shared<QNetwork>(dim, cfg.hidden, n_actions,
                                        derive_seed(seed, "teacher_net"));
  QNetwork target(dim, cfg.hidden, n_actions, derive_seed(seed, "teacher_net"));
  target.copy_parameters_from(*net);

  ObsNormalizer norm(dim);
  ReplayBuffer buffer(cfg.buffer_capacity, dim);
  AdamW opt(net->params(), {cfg.lr, 0.0, 0.9, 0.999, 1e-8});
  Rng rng(derive_seed(seed, "teacher_loop"));
  auto eval_env = make_env(env.name());

  std::vector<TeacherLogRow> log;
  double loss_sum = 0.0;
  int64_t loss_count = 0;
  int64_t episode = 0;

  std::vector<double> state = env.reset(derive_seed(seed, "teacher_episode", 0));
  norm.update(state);

  for (int64_t step = 1; step <= cfg.max_env_steps; ++step) {
    double frac = std::min(1.0, static_cast<double>(step) /
                                    static_cast<double>(cfg.explore_decay_steps));
    double eps = cfg.explore_start + frac * (cfg.explore_end - cfg.explore_start);

    int action;
    if (rng.uniform() < eps) {
      action = static_cast<int>(rng.uniform_int(n_actions));
    } else {
      action = argmax_lowest(net->forward_values(norm.transform(state)));
    }
    StepResult r = env.step(action);
    norm.update(r.state);
    buffer.push(state, action, r.reward, r.state, r.done);
    state = r.done
                ? env.reset(derive_seed(seed, "teacher_episode", static_cast<uint64_t>(++episode)))
                : std::move(r.state);
    if (r.done) norm.update(state);

    if (step >= cfg.warmup_steps && step % cfg.train_every == 0) {
      TransitionBatch batch = buffer.sample(cfg.batch_size, rng);
      // Normalize with the current statistics; raw transitions stay in
      // the buffer so old entries track the drifting normalizer.
      std::vector<double> xs(batch.states.size());
      std::vector<double> xs2(batch.states.size());
      for (int64_t i = 0; i < batch.n; ++i) {
        auto srow = std::span<const double>(batch.states).subspan(
            static_cast<size_t>(i * dim), static_cast<size_t>(dim));
        auto s2row = std::span<const double>(batch.next_states).subspan(
            static_cast<size_t>(i * dim), static_cast<size_t>(dim));
        auto ns = norm.transform(srow);
        auto ns2 = norm.transform(s2row);
        std::copy(ns.begin(), ns.end(), xs.begin() + i * dim);
        std::copy(ns2.begin(), ns2.end(), xs2.begin() + i * dim);
      }
      // Bootstrapped targets from the target network (no gradient).
      Tensor q2 = target.forward(Tensor::from_data({batch.n, dim}, xs2));
      std::vector<double> targets(static_cast<size_t>(batch.n));
      for (int64_t i = 0; i < batch.n; ++i) {
        double best = q2.at(i, 0);
        for (int a = 1; a < n_actions; ++a) best = std::max(best, q2.at(i, a));
        targets[static_cast<size_t>(i)] =
            batch.rewards[static_cast<size_t>(i)] +
            (batch.done[static_cast<size_t>(i)] ? 0.0 : cfg.gamma * best);
      }
      Tensor q = net->forward(Tensor::from_data({batch.n, dim}, std::move(xs)));
      Tensor picked = gather_rows(q, batch.actions);
      Tensor loss = huber_mean(picked, targets, cfg.huber_delta);
      loss.backward();
      opt.step();
      loss_sum += loss.item();
      ++loss_count;
    }
    if (step % cfg.target_sync_every == 0) target.copy_parameters_from(*net);

    if (step % cfg.eval_every == 0 && step >= cfg.warmup_steps) {
      double ret = evaluate_greedy(*net, *eval_env, norm, cfg.eval_episodes,
                                   derive_seed(seed, "teacher_eval_base"));
      log.push_back({step, ret, eps,
                     loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0});
      loss_sum = 0.0;
      loss_count = 0;
      if (ret >= cfg.accept_return) {
        norm.freeze();
        return {std::move(net), std::move(norm), std::move(log), step, ret};
      }
    }
  }
  throw TrainingFailure(
      "teacher did not reach return " + std::to_string(cfg.accept_return) +
      " on " + env.name() + " within " + std::to_string(cfg.max_env_steps) +
      " env steps");
}

// ---------------------------------------------------------------------------
// expert dataset

namespace {

static_assert(std::endian::native == std::endian::little,
              "dataset i/o assumes a little-endian host");

template <typename T>
void put_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr uint32_t kDatasetVersion = 1;

}  // namespace

void ExpertDataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open dataset for writing: " + path);
  os.write("SRTD", 4);
  put_raw<uint32_t>(os, kDatasetVersion);
  put_raw<uint32_t>(os, static_cast<uint32_t>(env_name.size()));
  os.write(env_name.data(), static_cast<std::streamsize>(env_name.size()));
  put_raw<uint32_t>(os, static_cast<uint32_t>(action_count));
  put_raw<uint32_t>(os, static_cast<uint32_t>(obs_dim));
  put_raw<uint64_t>(os, static_cast<uint64_t>(count()));
  os.write(reinterpret_cast<const char*>(norm_mean.data()),
           static_cast<std::streamsize>(norm_mean.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(norm_var.data()),
           static_cast<std::streamsize>(norm_var.size() * sizeof(double)));
  for (int64_t i = 0; i < count(); ++i) {
    os.write(reinterpret_cast<const char*>(states.data() + i * obs_dim),
             static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(obs_dim)));
    put_raw<uint32_t>(os, static_cast<uint32_t>(actions[static_cast<size_t>(i)]));
  }
  if (!os) throw std::runtime_error("dataset write failed: " + path);
}

ExpertDataset ExpertDataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SRTD", 4) != 0) {
    throw std::runtime_error("not a dataset file: " + path);
  }
  uint32_t version = get_raw<uint32_t>(is);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version in " + path);
  }
  ExpertDataset ds;
  uint32_t name_len = get_raw<uint32_t>(is);
  ds.env_name.resize(name_len);
  is.read(ds.env_name.data(), name_len);
  ds.action_count = static_cast<int>(get_raw<uint32_t>(is));
  ds.obs_dim = static_cast<int>(get_raw<uint32_t>(is));
  uint64_t n = get_raw<uint64_t>(is);
  ds.norm_mean.resize(static_cast<size_t>(ds.obs_dim));
  ds.norm_var.resize(static_cast<size_t>(ds.obs_dim));
  is.read(reinterpret_cast<char*>(ds.norm_mean.data()),
          static_cast<std::streamsize>(ds.norm_mean.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(ds.norm_var.data()),
          static_cast<std::streamsize>(ds.norm_var.size() * sizeof(double)));
  ds.states.resize(n * static_cast<size_t>(ds.obs_dim));
  ds.actions.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(ds.states.data() + i * static_cast<size_t>(ds.obs_dim)),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(ds.obs_dim)));
    uint32_t a = get_raw<uint32_t>(is);
    if (a >= static_cast<uint32_t>(ds.action_count)) {
      throw std::runtime_error("dataset: action id out of range");
    }
    ds.actions[i] = static_cast<int>(a);
  }
  if (!is) throw std::runtime_error("truncated dataset: " + path);
  return ds;
}

void ExpertDataset::export_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open csv for writing: " + path);
  for (int d = 0; d < obs_dim; ++d) os << "state" << d << ",";
  os << "action\n";
  os.precision(17);
  for (int64_t i = 0; i < count(); ++i) {
    for (int d = 0; d < obs_dim; ++d) {
      os << states[static_cast<size_t>(i * obs_dim + d)] << ",";
    }
    os << actions[static_cast<size_t>(i)] << "\n";
  }
  if (!os) throw std::runtime_error("csv write failed: " + path);
}

ExpertDataset build_dataset(const Policy& teacher, Env& env,
                            const ObsNormalizer& frozen_normalizer,
                            int64_t n_states, uint64_t seed) {
  if (n_states <= 0) {
    throw std::invalid_argument("build_dataset: n_states must be positive");
  }
  if (!frozen_normalizer.frozen()) {
    throw std::logic_error("build_dataset: normalizer must be frozen");
  }
  ExpertDataset ds;
  ds.env_name = env.name();
  ds.obs_dim = env.obs_dim();
  ds.action_count = env.action_count();
  ds.norm_mean = frozen_normalizer.mean();
  ds.norm_var = frozen_normalizer.variance();
  ds.states.reserve(static_cast<size_t>(n_states * ds.obs_dim));
  ds.actions.reserve(static_cast<size_t>(n_states));
  uint64_t episode = 0;
  while (ds.count() < n_states) {
    Trajectory traj = rollout(teacher, env, frozen_normalizer, nullptr,
                              derive_seed(seed, "dataset_episode", episode++));
    for (const auto& step : traj.steps) {
      if (ds.count() >= n_states) break;
      ds.states.insert(ds.states.end(), step.state.begin(), step.state.end());
      ds.actions.push_back(step.action);
    }
  }
  return ds;
}

}  // namespace sortrl
