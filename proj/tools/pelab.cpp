#include "CLI11.hpp"
#include "json.hpp"

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "pelab/bench.hpp"
#include "pelab/config.hpp"
#include "pelab/league.hpp"
#include "pelab/policy_io.hpp"
#include "pelab/ppo.hpp"

using namespace pelab;
namespace fs = std::filesystem;

namespace {

config::LabConfig load_or_default(const std::string& path) {
  if (path.empty()) return config::default_config();
  return config::load_config(path);
}

// Guards a league directory against concurrent drivers. The lock file holds
// the owner's PID; a lock whose owner is gone counts as stale and is retaken,
// so a killed run does not wedge the directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        (void)!::write(fd, pid.c_str(), pid.size());
        ::close(fd);
        held_ = true;
        return;
      }
      if (errno != EEXIST) throw ValidationError("league: cannot create lock " + path_.string());
      std::ifstream f(path_);
      long pid = 0;
      f >> pid;
      if (pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM)) {
        throw ValidationError("league: directory is locked by running process " +
                              std::to_string(pid));
      }
      fs::remove(path_);  // stale lock from a dead process
    }
    throw ValidationError("league: could not acquire lock " + path_.string());
  }

  ~DirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  bool held_ = false;
};

struct SimCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

std::vector<SimCheck> run_sim_checks(const config::LabConfig& cfg) {
  const quad::QuadParams& p = cfg.env.quad;
  std::vector<SimCheck> checks;

  {
    // Hover equilibrium: balanced rotors must hold position.
    quad::QuadState s;
    s.position_m = Vec3(0.0, 0.0, 2.0);
    const Vec3 start = s.position_m;
    quad::RotorSpeeds r;
    r.speeds_radps.setConstant(quad::hover_rotor_speed(p));
    for (int i = 0; i < 1000; ++i) s = quad::step(s, r, p, 0.016);
    const double drift = (s.position_m - start).norm();
    checks.push_back({"hover_drift_m", drift, 1e-3, drift < 1e-3});
  }
  {
    // Free fall with linear drag against the closed-form exponential at t=1s.
    // dt = 1/64 is exactly representable, so 64 steps land on t = 1.
    quad::QuadState s;
    s.position_m = Vec3(0.0, 0.0, 100.0);
    const double dt = 1.0 / 64.0;
    for (int i = 0; i < 64; ++i) s = quad::step(s, quad::RotorSpeeds{}, p, dt);
    const double exact = -(p.gravity_mps2 / p.drag_coeff) * (1.0 - std::exp(-p.drag_coeff));
    const double rel = std::abs(s.velocity_mps.z() - exact) / std::abs(exact);
    checks.push_back({"freefall_rel_err", rel, 1e-4, rel < 1e-4});
  }
  {
    // Orthonormality drift across a long tumbling trajectory.
    quad::QuadState s;
    s.position_m = Vec3(0.0, 0.0, 50.0);
    Rng rng(20240);
    const double hover = quad::hover_rotor_speed(p);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      quad::RotorSpeeds r;
      for (int k = 0; k < 4; ++k) {
        r.speeds_radps(k) = std::clamp(hover * rng.uniform(0.7, 1.3), 0.0,
                                       p.rotor_max_speed_radps);
      }
      s = quad::step(s, r, p, 0.016);
      worst = std::max(worst, (s.rotation.transpose() * s.rotation - Mat3::Identity())
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    checks.push_back({"orthonormality_drift", worst, 1e-6, worst < 1e-6});
  }
  return checks;
}

int cmd_sim_check(const std::string& config_path, bool as_json) {
  const config::LabConfig cfg = load_or_default(config_path);
  const std::vector<SimCheck> checks = run_sim_checks(cfg);
  bool all_pass = true;
  for (const auto& c : checks) all_pass = all_pass && c.pass;

  if (as_json) {
    nlohmann::json j;
    j["config_hash"] = config::config_hash(cfg);
    j["pass"] = all_pass;
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks) {
      j["checks"].push_back(
          {{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
    }
    std::printf("%s\n", j.dump(2).c_str());
  } else {
    for (const auto& c : checks) {
      std::printf("%-22s %12.5g  (threshold %g)  [%s]\n", c.name.c_str(), c.value, c.threshold,
                  c.pass ? "pass" : "FAIL");
    }
    std::printf("sim-check: %s  (config %s)\n", all_pass ? "PASS" : "FAIL",
                config::config_hash(cfg).c_str());
  }
  return all_pass ? 0 : 3;
}

policy::PolicyRecord opponent_from_spec(const std::string& spec, env::Role opponent_role) {
  if (spec == "hover" || spec == "circular" || spec == "repel") {
    policy::HeuristicSpec h;
    h.kind = policy::heuristic_from_name(spec);
    return policy::make_heuristic_record(spec + "_opponent", opponent_role, h);
  }
  policy::PolicyRecord rec = policy::load_policy(spec);
  if (rec.role != opponent_role) {
    throw ValidationError("train-stage: opponent record '" + rec.id + "' has role " +
                          env::role_name(rec.role) + ", expected " +
                          env::role_name(opponent_role));
  }
  return rec;
}

int cmd_train_stage(const std::string& config_path, const std::string& role_name,
                    const std::string& opponent_spec, uint64_t seed, const std::string& out_dir) {
  const config::LabConfig cfg = load_or_default(config_path);
  const env::Role role = env::role_from_name(role_name);
  const policy::PolicyRecord opponent = opponent_from_spec(opponent_spec, env::other(role));

  const league::StageSettings settings = config::stage_settings(cfg);
  policy::GaussianPolicy learner = policy::GaussianPolicy::make(
      role, settings.modality, cfg.env.quad, mix_seed(seed, 0x696e6974), settings.log_std_init);
  if (settings.modality == policy::Modality::Velocity) {
    learner.bounds.lo = -settings.velocity_command_bound;
    learner.bounds.hi = settings.velocity_command_bound;
    learner.validate();
  }
  ppo::OpponentProvider provider = [&](long) { return &opponent; };
  const ppo::TrainResult result =
      ppo::train_stage(role, learner, provider, cfg.env, cfg.ppo, seed);

  fs::create_directories(out_dir);
  std::map<std::string, std::string> meta;
  meta["train.seed"] = std::to_string(seed);
  meta["train.env_steps"] = std::to_string(cfg.ppo.total_env_steps);
  meta["train.config_hash"] = settings.config_hash;
  meta["train.opponent"] = opponent.id;
  const std::string id = std::string(settings.modality == policy::Modality::Rate ? "rate" : "vel") +
                         "_" + (role == env::Role::Pursuer ? "p" : "e") + "_s1";
  const policy::PolicyRecord record = policy::make_net_record(id, result.trained, 1, meta);
  const std::string policy_path = (fs::path(out_dir) / (id + ".pepo")).string();
  policy::save_policy(record, policy_path);
  const std::string curve_path = (fs::path(out_dir) / "curve.csv").string();
  ppo::write_curve_csv(result.curve, curve_path);

  const double final_return = result.curve.empty() ? 0.0 : result.curve.back().mean_return;
  std::printf("trained %s for %ld env-steps (%ld episodes, final mean return %.4f)\n",
              env::role_name(role), cfg.ppo.total_env_steps, result.episodes_completed,
              final_return);
  std::printf("policy: %s\ncurve:  %s\n", policy_path.c_str(), curve_path.c_str());
  return 0;
}

int cmd_league_run(const std::string& config_path, const std::string& dir, int stages,
                   double p_old_flag, bool p_old_set, uint64_t seed_flag, bool seed_set,
                   bool resume) {
  config::LabConfig cfg = load_or_default(config_path);
  if (p_old_set) cfg.league.p_old = p_old_flag;
  if (seed_set) cfg.master_seed = seed_flag;
  if (stages > 0) cfg.league.stages = stages;
  cfg.validate();

  DirLock lock{fs::path(dir)};
  league::LeagueManifest manifest;
  if (resume) {
    manifest = league::load_manifest(dir);
    if (p_old_set && manifest.p_old != cfg.league.p_old) {
      throw ValidationError("league: --p-old conflicts with the existing manifest");
    }
    std::printf("resuming league at stage %d (%zu pursuers, %zu evaders)\n",
                manifest.next_stage_index(), manifest.pursuers.size(), manifest.evaders.size());
  } else {
    if (fs::exists(fs::path(dir) / "manifest.json")) {
      throw ValidationError("league: " + dir + " already holds a league; pass --resume");
    }
    manifest = league::cold_start(cfg.league.p_old);
    league::save_manifest(manifest, dir);
  }

  const league::StageSettings settings = config::stage_settings(cfg);
  while (manifest.next_stage_index() <= cfg.league.stages) {
    const int stage = manifest.next_stage_index();
    const uint64_t stage_seed = mix_seed(cfg.master_seed, 0x7374616765, stage);
    const league::StageResult result = league::run_stage(manifest, settings, stage_seed);
    league::save_manifest(manifest, dir);
    ppo::write_curve_csv(result.curve,
                         (fs::path(dir) / ("curve_stage" + std::to_string(stage) + ".csv")).string());
    std::printf("stage %d: trained %s -> %s (%zu opponents on file)\n", stage,
                env::role_name(result.trained_role), result.policy_id.c_str(),
                manifest.population(env::other(result.trained_role)).size());
  }
  std::printf("league complete: %zu stages in %s (config %s)\n", manifest.stage_log.size(),
              dir.c_str(), settings.config_hash.c_str());
  return 0;
}

const policy::PolicyRecord* latest_net(const league::LeagueManifest& m, env::Role role,
                                       policy::Modality modality) {
  const auto& pool = m.population(role);
  for (auto it = pool.rbegin(); it != pool.rend(); ++it) {
    if (!it->is_heuristic() && it->modality == modality) return &*it;
  }
  return nullptr;
}

bench::ReportFormat format_for(const std::string& path) {
  return path.size() >= 5 && path.substr(path.size() - 5) == ".json" ? bench::ReportFormat::Json
                                                                     : bench::ReportFormat::Csv;
}

int cmd_eval(const std::string& config_path, const std::string& dir, bool matrix, bool cross,
             bool max_speed, int episodes, uint64_t seed, bool seed_set, std::string out,
             const std::string& policy_id) {
  const config::LabConfig cfg = load_or_default(config_path);
  if (static_cast<int>(matrix) + static_cast<int>(cross) + static_cast<int>(max_speed) != 1) {
    throw ValidationError("eval: pass exactly one of --matrix, --cross, --max-speed");
  }
  const uint64_t master = seed_set ? seed : cfg.master_seed;
  const league::LeagueManifest manifest = league::load_manifest(dir);
  bench::EvalReport report;

  if (matrix) {
    std::vector<std::string> benchmarks;
    for (const auto& rec : manifest.evaders) benchmarks.push_back(rec.id);
    report = bench::capture_matrix(manifest, benchmarks, cfg.env, episodes, master);
    if (out.empty()) out = (fs::path(dir) / "matrix_report.csv").string();
    std::printf("%s", bench::format_matrix(report).c_str());
  } else if (cross) {
    const auto* rate_p = latest_net(manifest, env::Role::Pursuer, policy::Modality::Rate);
    const auto* vel_p = latest_net(manifest, env::Role::Pursuer, policy::Modality::Velocity);
    const auto* rate_e = latest_net(manifest, env::Role::Evader, policy::Modality::Rate);
    const auto* vel_e = latest_net(manifest, env::Role::Evader, policy::Modality::Velocity);
    if (!rate_p || !vel_p || !rate_e || !vel_e) {
      throw ValidationError(
          "eval: cross-modality needs trained rate and velocity policies for both roles");
    }
    report = bench::cross_modality_suite(*rate_p, *vel_p, *rate_e, *vel_e, cfg.env, episodes,
                                         master);
    if (out.empty()) out = (fs::path(dir) / "cross_report.csv").string();
    for (const auto& p : report.pairs) {
      std::printf("%-12s vs %-12s capture rate %.4f (%d episodes)\n", p.pursuer_id.c_str(),
                  p.evader_id.c_str(), p.capture_rate, p.episodes);
    }
    for (const auto& r : report.references) {
      std::printf("reference (full scale): %-8s vs %-8s %.4f\n", r.pursuer_label.c_str(),
                  r.evader_label.c_str(), r.capture_rate);
    }
  } else {
    std::vector<const policy::PolicyRecord*> targets;
    if (!policy_id.empty()) {
      const policy::PolicyRecord* rec = manifest.find(policy_id);
      if (rec == nullptr) throw ValidationError("eval: unknown policy id '" + policy_id + "'");
      targets.push_back(rec);
    } else {
      for (const auto& rec : manifest.pursuers) targets.push_back(&rec);
      for (const auto& rec : manifest.evaders) targets.push_back(&rec);
    }
    for (const auto* rec : targets) {
      report.max_speed.push_back(bench::max_speed_probe(*rec, cfg.env, 4.0, episodes, master));
    }
    const bench::TiltResult tilt = bench::scripted_tilt_run(cfg.env.quad, cfg.env.rate_pid);
    report.max_speed.push_back(
        {"scripted_tilt", tilt.max_speed_mps, tilt.max_body_rate_radps});
    report.seed = master;
    if (out.empty()) out = (fs::path(dir) / "max_speed_report.csv").string();
    for (const auto& s : report.max_speed) {
      std::printf("%-20s max |v| %7.3f m/s   max |omega| %7.3f rad/s\n", s.policy_id.c_str(),
                  s.max_linear_mps, s.max_angular_radps);
    }
    std::printf("scripted tilt reached %.2f m/s after %.2f m of path\n", tilt.max_speed_mps,
                tilt.path_length_m);
  }

  report.config_hash = config::config_hash(cfg);
  report.seed = master;
  bench::emit_report(report, out, format_for(out));
  std::printf("report: %s\n", out.c_str());
  return 0;
}

int cmd_replay_export(const std::string& config_path, const std::string& policy_p,
                      const std::string& policy_e, uint64_t seed, const std::string& out) {
  const config::LabConfig cfg = load_or_default(config_path);
  const policy::PolicyRecord pursuer = policy::load_policy(policy_p);
  const policy::PolicyRecord evader = policy::load_policy(policy_e);
  if (pursuer.role != env::Role::Pursuer) {
    throw ValidationError("replay-export: --policy-p record is not a pursuer");
  }
  if (evader.role != env::Role::Evader) {
    throw ValidationError("replay-export: --policy-e record is not an evader");
  }

  env::Episode ep(cfg.env);
  ep.reset(seed);
  policy::RecordActor actor_p, actor_e;
  actor_p.bind(&pursuer, ep.state(env::Role::Pursuer));
  actor_e.bind(&evader, ep.state(env::Role::Evader));

  std::vector<env::TraceRow> rows;
  while (!ep.done()) {
    const control::ActionCommand ap = actor_p.act(ep, env::Role::Pursuer);
    const control::ActionCommand ae = actor_e.act(ep, env::Role::Evader);
    const env::StepOutcome outcome = ep.step(ap, ae);
    for (const env::Role role : {env::Role::Pursuer, env::Role::Evader}) {
      const quad::QuadState& s = ep.state(role);
      env::TraceRow row;
      row.episode_id = 0;
      row.t = ep.t();
      row.role = role;
      row.position = s.position_m;
      row.velocity = s.velocity_mps;
      row.quat_wxyz = rotation_to_quat_wxyz(s.rotation);
      row.body_rates = s.body_rates_radps;
      row.action = role == env::Role::Pursuer ? ap : ae;
      row.reward = role == env::Role::Pursuer ? outcome.reward_pursuer : outcome.reward_evader;
      row.captured = outcome.captured;
      row.timed_out = outcome.timed_out;
      row.oob = role == env::Role::Pursuer ? outcome.oob_pursuer : outcome.oob_evader;
      row.crashed = role == env::Role::Pursuer ? outcome.crashed_pursuer : outcome.crashed_evader;
      rows.push_back(row);
    }
  }
  env::write_trace_csv(rows, out);
  std::printf("wrote %zu rows (%d steps) to %s\n", rows.size(), ep.t(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pelab: 1v1 quadrotor pursuit-evasion laboratory"};
  app.require_subcommand(1);

  std::string config_path;

  auto* sim = app.add_subcommand("sim-check", "Run the dynamics self-checks");
  bool sim_json = false;
  sim->add_option("--config", config_path, "Lab configuration JSON");
  sim->add_flag("--json", sim_json, "Machine-readable output");

  auto* train = app.add_subcommand("train-stage", "Train one policy against a fixed opponent");
  std::string train_role, train_opponent, train_out = "stage_out";
  uint64_t train_seed = 1;
  train->add_option("--config", config_path, "Lab configuration JSON");
  train->add_option("--role", train_role, "pursuer or evader")->required();
  train->add_option("--opponent", train_opponent,
                    "hover | circular | repel | path to a policy file")
      ->required();
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--out", train_out, "Output directory");

  auto* lg = app.add_subcommand("league-run", "Run alternating league stages");
  std::string lg_dir;
  int lg_stages = 0;
  double lg_p_old = 0.75;
  uint64_t lg_seed = 0;
  bool lg_resume = false;
  lg->add_option("--config", config_path, "Lab configuration JSON");
  lg->add_option("--dir", lg_dir, "League directory")->required();
  lg->add_option("--stages", lg_stages, "Total stages to reach");
  auto* lg_p_opt = lg->add_option("--p-old", lg_p_old, "Probability of sampling an older opponent");
  auto* lg_seed_opt = lg->add_option("--seed", lg_seed, "Master seed");
  lg->add_flag("--resume", lg_resume, "Continue from the saved manifest");

  auto* ev = app.add_subcommand("eval", "Evaluate league policies");
  std::string ev_dir, ev_out, ev_policy;
  int ev_episodes = 256;
  uint64_t ev_seed = 0;
  bool ev_matrix = false, ev_cross = false, ev_max_speed = false;
  ev->add_option("--config", config_path, "Lab configuration JSON");
  ev->add_option("--dir", ev_dir, "League directory")->required();
  ev->add_flag("--matrix", ev_matrix, "Staircase capture matrix");
  ev->add_flag("--cross", ev_cross, "Cross-modality matchups");
  ev->add_flag("--max-speed", ev_max_speed, "Peak speed probes plus the scripted maneuver");
  ev->add_option("--episodes", ev_episodes, "Episodes (or rollouts) per measurement");
  auto* ev_seed_opt = ev->add_option("--seed", ev_seed, "Evaluation seed");
  ev->add_option("--out", ev_out, "Report path (.csv or .json)");
  ev->add_option("--policy", ev_policy, "Probe only this policy id (max-speed)");

  auto* rp = app.add_subcommand("replay-export", "Export one episode as a trajectory CSV");
  std::string rp_p, rp_e, rp_out = "trace.csv";
  uint64_t rp_seed = 1;
  rp->add_option("--config", config_path, "Lab configuration JSON");
  rp->add_option("--policy-p", rp_p, "Pursuer policy file")->required();
  rp->add_option("--policy-e", rp_e, "Evader policy file")->required();
  rp->add_option("--seed", rp_seed, "Episode seed");
  rp->add_option("--out", rp_out, "Trace CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_sim_check(config_path, sim_json);
    if (train->parsed()) {
      return cmd_train_stage(config_path, train_role, train_opponent, train_seed, train_out);
    }
    if (lg->parsed()) {
      return cmd_league_run(config_path, lg_dir, lg_stages, lg_p_old, lg_p_opt->count() > 0,
                            lg_seed, lg_seed_opt->count() > 0, lg_resume);
    }
    if (ev->parsed()) {
      return cmd_eval(config_path, ev_dir, ev_matrix, ev_cross, ev_max_speed, ev_episodes,
                      ev_seed, ev_seed_opt->count() > 0, ev_out, ev_policy);
    }
    if (rp->parsed()) return cmd_replay_export(config_path, rp_p, rp_e, rp_seed, rp_out);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
