// Pipeline driver: teacher training, expert dataset construction, policy
// distillation, attacked evaluation, certification, and plotting.
//
// Exit codes: 0 success, 1 usage/config error, 2 missing upstream
// artifact, 3 acceptance-threshold failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "sortrl/adversary.hpp"
#include "sortrl/certify.hpp"
#include "sortrl/distill.hpp"
#include "sortrl/report.hpp"
#include "sortrl/runconfig.hpp"
#include "sortrl/teacher.hpp"
#include "sortrl/util.hpp"

namespace fs = std::filesystem;
using namespace sortrl;

namespace {

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string artifact(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

void require_artifact(const std::string& path) {
  if (!fs::exists(path)) {
    throw MissingArtifact("missing upstream artifact: " + path +
                          " (run the earlier pipeline stage first)");
  }
}

void write_stage_files(const RunConfig& cfg, const std::string& stage) {
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(artifact(cfg, "config." + stage + ".json"), std::ios::trunc);
    os << cfg.to_json();
  }
  nlohmann::json meta;
  meta["stage"] = stage;
  meta["seed"] = cfg.seed;
  meta["config_hash"] = config_hash(cfg);
  meta["timestamp"] = static_cast<int64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::ofstream os(artifact(cfg, "meta." + stage + ".json"), std::ios::trunc);
  os << meta.dump(2) << "\n";
}

void apply_threads(const RunConfig& cfg) {
  if (cfg.threads > 0) set_worker_cap(cfg.threads);
}

ObsNormalizer scripted_normalizer(const RunConfig& cfg) {
  // The hand-written balancer observes raw states; its statistics come
  // from its own clean rollouts.
  ObsNormalizer identity =
      ObsNormalizer::from_moments({0, 0, 0, 0}, {1, 1, 1, 1});
  ScriptedCartpolePolicy expert(identity);
  ObsNormalizer stats(4);
  for (int ep = 0; ep < 20; ++ep) {
    auto env = make_env(cfg.env);
    Trajectory traj = rollout(expert, *env, identity, nullptr,
                              derive_seed(cfg.seed, "scripted_norm", static_cast<uint64_t>(ep)));
    for (const auto& step : traj.steps) stats.update(step.state);
  }
  stats.freeze();
  return stats;
}

std::unique_ptr<Policy> load_teacher_policy(const RunConfig& cfg,
                                            const ObsNormalizer& norm) {
  if (cfg.teacher_kind == "scripted") {
    if (cfg.env != "cartpole") {
      throw std::invalid_argument("scripted teacher only exists for cartpole");
    }
    return std::make_unique<ScriptedCartpolePolicy>(norm);
  }
  auto ckpt = artifact(cfg, "teacher.ckpt");
  require_artifact(ckpt);
  auto net = std::make_shared<QNetwork>(QNetwork::load(ckpt));
  return std::make_unique<MlpPolicy>(std::move(net));
}

void write_teacher_log(const std::string& path,
                       const std::vector<TeacherLogRow>& rows) {
  CsvWriter csv(path);
  csv.header({"env_step", "eval_return", "explore_eps", "loss_avg"});
  for (const auto& r : rows) {
    csv.field(r.env_step);
    csv.field(r.eval_return);
    csv.field(r.explore_eps);
    csv.field(r.loss_avg);
    csv.end_row();
  }
}

int cmd_train_teacher(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "train-teacher");
  if (cfg.teacher_kind == "scripted") {
    ObsNormalizer norm = scripted_normalizer(cfg);
    norm.save(artifact(cfg, "normalizer.bin"));
    std::printf("scripted teacher: normalizer over %lld samples written\n",
                static_cast<long long>(norm.count()));
    return 0;
  }
  auto env = make_env(cfg.env);
  try {
    TeacherResult result = train_teacher(*env, cfg.teacher, cfg.seed);
    result.net->save(artifact(cfg, "teacher.ckpt"));
    result.normalizer.save(artifact(cfg, "normalizer.bin"));
    write_teacher_log(artifact(cfg, "teacher_log.csv"), result.log);
    std::printf("teacher: return %.2f after %lld env steps\n",
                result.final_eval_return,
                static_cast<long long>(result.env_steps));
  } catch (const TrainingFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}

int cmd_build_dataset(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "build-dataset");
  auto norm_path = artifact(cfg, "normalizer.bin");
  require_artifact(norm_path);
  ObsNormalizer norm = ObsNormalizer::load(norm_path);
  auto teacher = load_teacher_policy(cfg, norm);
  auto env = make_env(cfg.env);
  ExpertDataset ds = build_dataset(*teacher, *env, norm, cfg.dataset_states,
                                   derive_seed(cfg.seed, "dataset"));
  ds.save(artifact(cfg, "dataset.bin"));
  std::printf("dataset: %lld states written\n", static_cast<long long>(ds.count()));
  return 0;
}

int cmd_distill(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "distill");
  auto ds_path = artifact(cfg, "dataset.bin");
  require_artifact(ds_path);
  ExpertDataset ds = ExpertDataset::load(ds_path);
  DistillConfig dcfg = cfg.distill;
  dcfg.net = cfg.net_config(ds.obs_dim, ds.action_count);
  DistillResult result = distill_train(ds, dcfg, derive_seed(cfg.seed, "distill"));
  result.policy.save(artifact(cfg, "policy.ckpt"));
  write_train_log_csv(artifact(cfg, "distill_log.csv"), result.log);
  double agree = result.log.empty() ? 0.0 : result.log.back().agree_rate;
  std::printf("distill: final batch agreement %.3f\n", agree);
  return 0;
}

int eval_common(const RunConfig& cfg, const std::string& method) {
  auto norm_path = artifact(cfg, "normalizer.bin");
  require_artifact(norm_path);
  ObsNormalizer norm = ObsNormalizer::load(norm_path);

  std::unique_ptr<Policy> teacher;
  std::unique_ptr<SortNetPolicy> student;
  if (method == "sortrl") {
    auto ckpt = artifact(cfg, "policy.ckpt");
    require_artifact(ckpt);
    student = std::make_unique<SortNetPolicy>(SortNetPolicy::load(ckpt));
    student->set_mode(NetMode::kEval);
  } else {
    if (cfg.teacher_kind == "scripted") {
      throw std::invalid_argument(
          "baseline-eval needs a differentiable teacher (teacher.kind=dqn)");
    }
    teacher = load_teacher_policy(cfg, norm);
  }
  const Policy& target = student ? static_cast<const Policy&>(*student)
                                 : static_cast<const Policy&>(*teacher);

  SweepResult sweep =
      sweep_epsilon(target, env_factory(cfg.env), norm, cfg.eps_grid(),
                    cfg.eval_episodes, cfg.attack_config(),
                    derive_seed(cfg.seed, "sweep"));
  write_sweep_csv(artifact(cfg, "eval_" + method + ".csv"), method, sweep);
  write_episode_csv(artifact(cfg, "episodes_" + method + ".csv"), method, sweep);
  for (const auto& row : sweep.rows) {
    std::printf("%s eps=%.3f reward=%.2f +- %.2f flip_rate=%.4f\n",
                method.c_str(), row.eps, row.mean_reward, row.std_err,
                row.flip_rate);
  }
  return 0;
}

int cmd_attack_eval(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "attack-eval");
  return eval_common(cfg, "sortrl");
}

int cmd_baseline_eval(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "baseline-eval");
  return eval_common(cfg, "teacher");
}

int cmd_certify(const RunConfig& cfg) {
  apply_threads(cfg);
  write_stage_files(cfg, "certify");
  auto ckpt = artifact(cfg, "policy.ckpt");
  require_artifact(ckpt);
  auto norm_path = artifact(cfg, "normalizer.bin");
  require_artifact(norm_path);
  SortNetPolicy policy = SortNetPolicy::load(ckpt);
  policy.set_mode(NetMode::kEval);
  ObsNormalizer norm = ObsNormalizer::load(norm_path);

  auto margins = collect_rollout_margins(policy, env_factory(cfg.env), norm,
                                         cfg.certify_episodes,
                                         derive_seed(cfg.seed, "certify"));
  std::vector<Certificate> certs;
  certs.reserve(margins.size());
  const double eps_ref = cfg.distill.eps_target;
  for (double m : margins) {
    Certificate c;
    c.margin = {m, 0, 1};
    c.radius_lb = 0.5 * m;
    c.eps = eps_ref;
    c.certified = m >= 2.0 * eps_ref;
    certs.push_back(std::move(c));
  }
  write_certificates_csv(artifact(cfg, "certificates.csv"), certs);

  std::vector<AcrReport> reports;
  for (double eps : cfg.eps_grid()) {
    reports.push_back(acr_from_margins(margins, eps));
  }
  write_acr_csv(artifact(cfg, "acr.csv"), reports);
  for (const auto& r : reports) {
    std::printf("acr eps=%.3f %lld/%lld = %.4f\n", r.eps,
                static_cast<long long>(r.n_certified),
                static_cast<long long>(r.n_states), r.acr);
  }
  return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out_path) {
  const char* palette[] = {"#ff7f0e", "#1f77b4", "#2ca02c", "#d62728",
                           "#9467bd", "#8c564b"};
  std::vector<PlotSeries> series;
  for (const auto& path : csvs) {
    require_artifact(path);
    CsvTable table = read_csv(path);
    std::vector<std::string> methods;
    for (size_t r = 0; r < table.rows.size(); ++r) {
      std::string m = table.text(r, "method");
      if (std::find(methods.begin(), methods.end(), m) == methods.end()) {
        methods.push_back(m);
      }
    }
    for (const auto& m : methods) {
      PlotSeries s;
      s.label = m;
      s.color = palette[series.size() % 6];
      for (size_t r = 0; r < table.rows.size(); ++r) {
        if (table.text(r, "method") != m) continue;
        s.eps.push_back(table.number(r, "eps"));
        s.mean.push_back(table.number(r, "mean_reward"));
        s.std_err.push_back(table.number(r, "std_err"));
      }
      series.push_back(std::move(s));
    }
  }
  if (series.empty()) throw std::invalid_argument("plot: no data rows found");
  write_reward_curve_svg(out_path, series, "reward under observation attack");
  std::printf("plot: wrote %s (%zu series)\n", out_path.c_str(), series.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lipschitz policy distillation and robustness evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir;
  std::string env_name;
  int64_t seed = -1;
  int threads = -1;
  app.add_option("--config", config_path, "JSON run configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--env", env_name, "environment name (overrides config)");
  app.add_option("--seed", seed, "run seed (overrides config)");
  app.add_option("--threads", threads, "worker cap (overrides config)");

  std::string teacher_kind;
  int64_t max_steps = -1;
  int64_t n_states = -1;
  int64_t iters = -1;
  std::string hidden_csv;
  double eps_target = -1.0;
  double theta = -1.0;
  int episodes = -1;
  std::string attack_family;
  int attack_steps = -1;
  double eps_start = -1.0, eps_stop = -1.0, eps_step = -1.0;

  auto* c_teacher = app.add_subcommand("train-teacher", "train the expert policy");
  c_teacher->add_option("--teacher", teacher_kind, "dqn | scripted");
  c_teacher->add_option("--max-steps", max_steps, "env step budget");

  auto* c_dataset = app.add_subcommand("build-dataset", "collect (state, action) pairs");
  c_dataset->add_option("--states", n_states, "number of pairs");
  c_dataset->add_option("--teacher", teacher_kind, "dqn | scripted");

  auto* c_distill = app.add_subcommand("distill", "train the robust student");
  c_distill->add_option("--iters", iters, "optimizer steps");
  c_distill->add_option("--hidden", hidden_csv, "hidden widths, e.g. 128,128");
  c_distill->add_option("--eps-target", eps_target,
                        "perturbation budget the margin targets");
  c_distill->add_option("--theta", theta, "hinge threshold (0 derives 2*eps)");
  double lr = -1.0, momentum = -1.0, lambda_end = -1.0;
  int64_t batch = -1;
  std::string mode;
  c_distill->add_option("--lr", lr, "learning rate");
  c_distill->add_option("--batch", batch, "batch size");
  c_distill->add_option("--mode", mode, "exact | stochastic");
  c_distill->add_option("--momentum", momentum, "normalization momentum");
  c_distill->add_option("--lambda-end", lambda_end, "imitation weight floor");

  auto* c_attack = app.add_subcommand("attack-eval", "sweep attacks on the student");
  auto* c_base = app.add_subcommand("baseline-eval", "sweep attacks on the teacher");
  for (auto* cmd : {c_attack, c_base}) {
    cmd->add_option("--episodes", episodes, "episodes per budget");
    cmd->add_option("--attack", attack_family, "pgd | rifgsm | rifgsm_multi");
    cmd->add_option("--attack-steps", attack_steps, "attack iterations");
    cmd->add_option("--eps-start", eps_start, "grid start");
    cmd->add_option("--eps-stop", eps_stop, "grid stop");
    cmd->add_option("--eps-step", eps_step, "grid step");
  }
  c_base->add_option("--teacher", teacher_kind, "dqn | scripted");

  auto* c_certify = app.add_subcommand("certify", "margin certificates and ACR");
  c_certify->add_option("--episodes", episodes, "clean episodes to collect");
  c_certify->add_option("--eps-start", eps_start, "grid start");
  c_certify->add_option("--eps-stop", eps_stop, "grid stop");
  c_certify->add_option("--eps-step", eps_step, "grid step");

  std::vector<std::string> plot_inputs;
  std::string plot_out = "robustness.svg";
  auto* c_plot = app.add_subcommand("plot", "render reward curves from eval CSVs");
  c_plot->add_option("csvs", plot_inputs, "eval report CSV files")->required();
  c_plot->add_option("--svg", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{}
                                        : RunConfig::from_json_file(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!env_name.empty()) cfg.env = env_name;
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (threads >= 0) cfg.threads = threads;
    if (!teacher_kind.empty()) cfg.teacher_kind = teacher_kind;
    if (max_steps > 0) cfg.teacher.max_env_steps = max_steps;
    if (n_states > 0) cfg.dataset_states = n_states;
    if (iters > 0) cfg.distill.iters = iters;
    if (!hidden_csv.empty()) {
      cfg.hidden_widths.clear();
      std::stringstream ss(hidden_csv);
      std::string tok;
      while (std::getline(ss, tok, ',')) cfg.hidden_widths.push_back(std::stoi(tok));
    }
    if (eps_target >= 0.0) cfg.distill.eps_target = eps_target;
    if (theta >= 0.0) cfg.distill.hinge_threshold = theta;
    if (lr > 0.0) cfg.distill.lr = lr;
    if (batch > 0) cfg.distill.batch_size = batch;
    if (!mode.empty()) cfg.forward_mode = mode;
    if (momentum > 0.0) cfg.norm_momentum = momentum;
    if (lambda_end > 0.0) cfg.distill.imitation_end = lambda_end;
    if (episodes > 0) {
      cfg.eval_episodes = episodes;
      cfg.certify_episodes = episodes;
    }
    if (!attack_family.empty()) cfg.attack_family = attack_family;
    if (attack_steps > 0) cfg.attack.steps = attack_steps;
    if (eps_start >= 0.0) cfg.eps_start = eps_start;
    if (eps_stop >= 0.0) cfg.eps_stop = eps_stop;
    if (eps_step > 0.0) cfg.eps_step = eps_step;
    cfg.validate();

    if (c_teacher->parsed()) return cmd_train_teacher(cfg);
    if (c_dataset->parsed()) return cmd_build_dataset(cfg);
    if (c_distill->parsed()) return cmd_distill(cfg);
    if (c_attack->parsed()) return cmd_attack_eval(cfg);
    if (c_base->parsed()) return cmd_baseline_eval(cfg);
    if (c_certify->parsed()) return cmd_certify(cfg);
    if (c_plot->parsed()) return cmd_plot(plot_inputs, plot_out);
    return 1;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
