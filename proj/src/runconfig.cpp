#include "sortrl/runconfig.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "sortrl/util.hpp"

namespace sortrl {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument("config: unknown key '" + where + key + "'");
    }
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

std::vector<double> RunConfig::eps_grid() const {
  std::vector<double> grid;
  // Integer stepping avoids accumulation drift across the grid.
  int64_t n = static_cast<int64_t>(std::floor((eps_stop - eps_start) / eps_step + 0.5));
  for (int64_t i = 0; i <= n; ++i) {
    grid.push_back(eps_start + eps_step * static_cast<double>(i));
  }
  return grid;
}

SortNetConfig RunConfig::net_config(int input_dim, int action_count) const {
  SortNetConfig cfg;
  cfg.input_dim = input_dim;
  cfg.action_count = action_count;
  cfg.widths = hidden_widths;
  cfg.widths.push_back(action_count);
  cfg.decay = decay;
  cfg.forward_mode =
      forward_mode == "stochastic" ? ForwardMode::kStochastic : ForwardMode::kExact;
  cfg.smoothing.p_start = p_start;
  cfg.smoothing.p_end = p_end;
  cfg.smoothing.ramp_fraction = p_ramp_fraction;
  cfg.norm_momentum = norm_momentum;
  return cfg;
}

AttackConfig RunConfig::attack_config() const {
  AttackConfig cfg = attack;
  cfg.family = attack_family_from_name(attack_family);
  return cfg;
}

void RunConfig::validate() const {
  make_env(env);  // throws with the valid set
  if (teacher_kind != "dqn" && teacher_kind != "scripted") {
    throw std::invalid_argument("config: teacher.kind must be dqn or scripted");
  }
  if (forward_mode != "exact" && forward_mode != "stochastic") {
    throw std::invalid_argument("config: distill.forward_mode must be exact or stochastic");
  }
  attack_family_from_name(attack_family);
  if (dataset_states <= 0) {
    throw std::invalid_argument("config: dataset.states must be positive");
  }
  if (eps_step <= 0.0 || eps_stop < eps_start) {
    throw std::invalid_argument("config: bad eps grid");
  }
  if (eval_episodes < 1 || certify_episodes < 1) {
    throw std::invalid_argument("config: episodes must be >= 1");
  }
  for (int w : hidden_widths) {
    if (w < 1) throw std::invalid_argument("config: hidden widths must be >= 1");
  }
  if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
}

std::string RunConfig::to_json() const {
  json j;
  j["env"] = env;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["threads"] = threads;
  json t;
  t["kind"] = teacher_kind;
  t["gamma"] = teacher.gamma;
  t["buffer_capacity"] = teacher.buffer_capacity;
  t["batch_size"] = teacher.batch_size;
  t["target_sync_every"] = teacher.target_sync_every;
  t["explore_start"] = teacher.explore_start;
  t["explore_end"] = teacher.explore_end;
  t["explore_decay_steps"] = teacher.explore_decay_steps;
  t["lr"] = teacher.lr;
  t["train_every"] = teacher.train_every;
  t["warmup_steps"] = teacher.warmup_steps;
  t["max_env_steps"] = teacher.max_env_steps;
  t["eval_every"] = teacher.eval_every;
  t["eval_episodes"] = teacher.eval_episodes;
  t["accept_return"] = teacher.accept_return;
  t["hidden"] = teacher.hidden;
  j["teacher"] = t;
  j["dataset"] = json{{"states", dataset_states}};
  json d;
  d["hidden_widths"] = hidden_widths;
  d["decay"] = decay;
  d["forward_mode"] = forward_mode;
  d["p_start"] = p_start;
  d["p_end"] = p_end;
  d["p_ramp_fraction"] = p_ramp_fraction;
  d["norm_momentum"] = norm_momentum;
  d["eps_target"] = distill.eps_target;
  d["theta"] = distill.hinge_threshold;
  d["lambda_start"] = distill.imitation_start;
  d["lambda_end"] = distill.imitation_end;
  d["iters"] = distill.iters;
  d["batch_size"] = distill.batch_size;
  d["lr"] = distill.lr;
  d["weight_decay"] = distill.weight_decay;
  d["log_every"] = distill.log_every;
  d["early_stop_agree"] = distill.early_stop_agree;
  d["early_stop_window"] = distill.early_stop_window;
  j["distill"] = d;
  json a;
  a["family"] = attack_family;
  a["steps"] = attack.steps;
  a["eta"] = attack.eta;
  a["restarts"] = attack.restarts;
  j["attack"] = a;
  json e;
  e["episodes"] = eval_episodes;
  e["eps_start"] = eps_start;
  e["eps_stop"] = eps_stop;
  e["eps_step"] = eps_step;
  j["eval"] = e;
  j["certify"] = json{{"episodes", certify_episodes}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  RunConfig cfg;
  try {
    reject_unknown_keys(j,
                        {"env", "seed", "out_dir", "threads", "teacher",
                         "dataset", "distill", "attack", "eval", "certify"},
                        "");
    read_into(j, "env", cfg.env);
    read_into(j, "seed", cfg.seed);
    read_into(j, "out_dir", cfg.out_dir);
    read_into(j, "threads", cfg.threads);
    if (j.contains("teacher")) {
      const auto& t = j.at("teacher");
      reject_unknown_keys(
          t,
          {"kind", "gamma", "buffer_capacity", "batch_size",
           "target_sync_every", "explore_start", "explore_end",
           "explore_decay_steps", "lr", "train_every", "warmup_steps",
           "max_env_steps", "eval_every", "eval_episodes", "accept_return",
           "hidden"},
          "teacher.");
      read_into(t, "kind", cfg.teacher_kind);
      read_into(t, "gamma", cfg.teacher.gamma);
      read_into(t, "buffer_capacity", cfg.teacher.buffer_capacity);
      read_into(t, "batch_size", cfg.teacher.batch_size);
      read_into(t, "target_sync_every", cfg.teacher.target_sync_every);
      read_into(t, "explore_start", cfg.teacher.explore_start);
      read_into(t, "explore_end", cfg.teacher.explore_end);
      read_into(t, "explore_decay_steps", cfg.teacher.explore_decay_steps);
      read_into(t, "lr", cfg.teacher.lr);
      read_into(t, "train_every", cfg.teacher.train_every);
      read_into(t, "warmup_steps", cfg.teacher.warmup_steps);
      read_into(t, "max_env_steps", cfg.teacher.max_env_steps);
      read_into(t, "eval_every", cfg.teacher.eval_every);
      read_into(t, "eval_episodes", cfg.teacher.eval_episodes);
      read_into(t, "accept_return", cfg.teacher.accept_return);
      read_into(t, "hidden", cfg.teacher.hidden);
    }
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      reject_unknown_keys(d, {"states"}, "dataset.");
      read_into(d, "states", cfg.dataset_states);
    }
    if (j.contains("distill")) {
      const auto& d = j.at("distill");
      reject_unknown_keys(
          d,
          {"hidden_widths", "decay", "forward_mode", "p_start", "p_end",
           "p_ramp_fraction", "norm_momentum", "eps_target", "theta",
           "lambda_start", "lambda_end", "iters", "batch_size", "lr",
           "weight_decay", "log_every", "early_stop_agree",
           "early_stop_window"},
          "distill.");
      read_into(d, "hidden_widths", cfg.hidden_widths);
      read_into(d, "decay", cfg.decay);
      read_into(d, "forward_mode", cfg.forward_mode);
      read_into(d, "p_start", cfg.p_start);
      read_into(d, "p_end", cfg.p_end);
      read_into(d, "p_ramp_fraction", cfg.p_ramp_fraction);
      read_into(d, "norm_momentum", cfg.norm_momentum);
      read_into(d, "eps_target", cfg.distill.eps_target);
      read_into(d, "theta", cfg.distill.hinge_threshold);
      read_into(d, "lambda_start", cfg.distill.imitation_start);
      read_into(d, "lambda_end", cfg.distill.imitation_end);
      read_into(d, "iters", cfg.distill.iters);
      read_into(d, "batch_size", cfg.distill.batch_size);
      read_into(d, "lr", cfg.distill.lr);
      read_into(d, "weight_decay", cfg.distill.weight_decay);
      read_into(d, "log_every", cfg.distill.log_every);
      read_into(d, "early_stop_agree", cfg.distill.early_stop_agree);
      read_into(d, "early_stop_window", cfg.distill.early_stop_window);
    }
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      reject_unknown_keys(a, {"family", "steps", "eta", "restarts"}, "attack.");
      read_into(a, "family", cfg.attack_family);
      read_into(a, "steps", cfg.attack.steps);
      read_into(a, "eta", cfg.attack.eta);
      read_into(a, "restarts", cfg.attack.restarts);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown_keys(e, {"episodes", "eps_start", "eps_stop", "eps_step"},
                          "eval.");
      read_into(e, "episodes", cfg.eval_episodes);
      read_into(e, "eps_start", cfg.eps_start);
      read_into(e, "eps_stop", cfg.eps_stop);
      read_into(e, "eps_step", cfg.eps_step);
    }
    if (j.contains("certify")) {
      const auto& c = j.at("certify");
      reject_unknown_keys(c, {"episodes"}, "certify.");
      read_into(c, "episodes", cfg.certify_episodes);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return from_json_text(ss.str());
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(cfg.to_json()); }

}  // namespace sortrl
