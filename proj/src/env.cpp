#include "pelab/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace pelab::env {

const char* role_name(Role r) { return r == Role::Pursuer ? "pursuer" : "evader"; }

Role role_from_name(const std::string& name) {
  if (name == "pursuer") return Role::Pursuer;
  if (name == "evader") return Role::Evader;
  throw ValidationError("unknown role: " + name);
}

void ArenaSpec::validate() const {
  if (!(capture_radius_m > 0.0)) throw ValidationError("arena: capture_radius_m must be > 0");
  if (max_steps <= 0) throw ValidationError("arena: max_steps must be > 0");
  if (!(z_min_m >= 0.0)) throw ValidationError("arena: z_min_m must be >= 0");
  if (!(min_initial_separation_m > 0.0)) {
    throw ValidationError("arena: min_initial_separation_m must be > 0");
  }
  if (!(dt_s > 0.0)) throw ValidationError("arena: dt_s must be > 0");
  if (!(wall_margin_m >= 0.0)) throw ValidationError("arena: wall_margin_m must be >= 0");
  for (int i = 0; i < 3; ++i) {
    if (!(half_extents_m(i) > 0.0)) throw ValidationError("arena: half extents must be > 0");
  }
}

void RewardCoeffs::validate() const {
  if (kappa_a < 0 || kappa_br < 0 || kappa_c < 0 || kappa_t < 0 || kappa_b < 0 || r_step < 0) {
    throw ValidationError("reward coefficients must be >= 0");
  }
}

void NormalizationSpec::validate() const {
  auto pos = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!pos(time_divisor) || !pos(altitude_divisor) || !pos(clamp_limit)) {
    throw ValidationError("normalization divisors must be positive");
  }
  for (int i = 0; i < 3; ++i) {
    if (!pos(rel_pos_divisor(i)) || !pos(pos_divisor(i)) || !pos(lin_vel_divisor(i)) ||
        !pos(ang_vel_divisor(i))) {
      throw ValidationError("normalization divisors must be positive");
    }
  }
}

void EnvConfig::validate() const {
  quad.validate();
  arena.validate();
  rewards.validate();
  norm.validate();
  rate_pid.validate();
  velocity.validate();
}

std::pair<double, double> compute_rewards(double prev_distance, double new_distance,
                                          bool captured, bool timed_out, bool oob_p, bool oob_e,
                                          const Vec3& omega_p, const Vec3& omega_e,
                                          const RewardCoeffs& c) {
  if (!(prev_distance >= 0.0)) throw ValidationError("compute_rewards: prev_distance must be >= 0");
  const double cap = captured ? 1.0 : 0.0;
  const double tout = timed_out ? 1.0 : 0.0;
  const double r_p = c.kappa_a * (prev_distance - new_distance) - c.kappa_br * omega_p.norm() +
                     cap * c.kappa_c - (oob_p ? c.kappa_b : 0.0) - tout * c.kappa_t;
  const double r_e = c.r_step - c.kappa_br * omega_e.norm() - cap * c.kappa_c -
                     (oob_e ? c.kappa_b : 0.0) + tout * c.kappa_t;
  return {r_p, r_e};
}

Eigen::VectorXd build_observation(Role role, int t, const quad::QuadState& own,
                                  const History& history_own_frame, const ArenaSpec& arena,
                                  const NormalizationSpec& norm) {
  if (t < 0 || t > arena.max_steps) {
    throw ValidationError("build_observation: t outside [0, max_steps]");
  }
  const double lim = norm.clamp_limit;
  auto clamped = [lim](double v) { return std::clamp(v, -lim, lim); };

  Eigen::VectorXd obs(obs_dim(role));
  int k = 0;
  obs(k++) = clamped(static_cast<double>(t) / norm.time_divisor);
  for (const Vec3& dp : history_own_frame) {
    for (int i = 0; i < 3; ++i) obs(k++) = clamped(dp(i) / norm.rel_pos_divisor(i));
  }
  if (role == Role::Pursuer) {
    obs(k++) = clamped(own.position_m.z() / norm.altitude_divisor);
  } else {
    for (int i = 0; i < 3; ++i) obs(k++) = clamped(own.position_m(i) / norm.pos_divisor(i));
  }
  // Rotation entries are already in [-1, 1]; passed through unnormalized.
  for (int r = 0; r < 3; ++r) {
    for (int col = 0; col < 3; ++col) obs(k++) = own.rotation(r, col);
  }
  for (int i = 0; i < 3; ++i) obs(k++) = clamped(own.velocity_mps(i) / norm.lin_vel_divisor(i));
  for (int i = 0; i < 3; ++i) obs(k++) = clamped(own.body_rates_radps(i) / norm.ang_vel_divisor(i));
  return obs;
}

Episode::Episode(const EnvConfig& cfg) : cfg_(&cfg) {}

void Episode::reset(uint64_t seed) {
  const ArenaSpec& a = cfg_->arena;
  Rng rng(mix_seed(seed, 0x45505f5245534554ULL));  // distinct stream per purpose

  const double m = a.wall_margin_m;
  const Vec3 he = a.half_extents_m;
  const double z_lo = std::max(a.min_spawn_z_m, m);
  const double z_hi = 2.0 * he.z() - m;
  if (z_hi <= z_lo || he.x() <= m || he.y() <= m) {
    throw ValidationError("reset: arena too small for the wall margin");
  }

  auto sample = [&]() {
    return Vec3(rng.uniform(-he.x() + m, he.x() - m),
                rng.uniform(-he.y() + m, he.y() - m),
                rng.uniform(z_lo, z_hi));
  };

  Vec3 pp, pe;
  bool ok = false;
  for (int tries = 0; tries < 1000; ++tries) {
    pp = sample();
    pe = sample();
    if ((pe - pp).norm() >= a.min_initial_separation_m) {
      ok = true;
      break;
    }
  }
  if (!ok) {
    throw ValidationError("reset: could not satisfy min_initial_separation in 1000 tries");
  }

  pursuer_ = quad::QuadState{};
  pursuer_.position_m = pp;
  evader_ = quad::QuadState{};
  evader_.position_m = pe;
  pid_p_.reset();
  pid_e_.reset();
  t_ = 0;
  done_ = false;
  crashed_p_ = crashed_e_ = false;
  distance_ = (pe - pp).norm();
  history_.fill(pe - pp);
  seed_ = seed;
}

void Episode::reset_to(const quad::QuadState& pursuer, const quad::QuadState& evader) {
  pursuer_ = pursuer;
  evader_ = evader;
  pid_p_.reset();
  pid_e_.reset();
  t_ = 0;
  done_ = false;
  crashed_p_ = crashed_e_ = false;
  const Vec3 rel = evader_.position_m - pursuer_.position_m;
  distance_ = rel.norm();
  history_.fill(rel);
  seed_ = 0;
}

namespace {

// Resolves a (possibly velocity-modality) action to rotor speeds.
quad::RotorSpeeds resolve_action(const control::ActionCommand& action, const quad::QuadState& s,
                                 const EnvConfig& cfg, control::RatePidState& pid, double dt) {
  control::validate(action, cfg.quad);
  Vec3 rates = action.body_rates_des_radps;
  double thrust = action.thrust_norm_mps2;
  if (action.kind == control::CommandKind::Velocity) {
    const control::ActionCommand low =
        control::velocity_controller(action.velocity_des_mps, s, cfg.quad, cfg.velocity);
    rates = low.body_rates_des_radps;
    thrust = low.thrust_norm_mps2;
  }
  return control::track_body_rates(rates, thrust, s, cfg.rate_pid, cfg.quad, pid, dt);
}

// Ground clamp: vehicles cannot pass below the floor; contact is recorded,
// the episode continues.
void clamp_to_ground(quad::QuadState& s, bool* crashed) {
  if (s.position_m.z() <= 0.0) {
    s.position_m.z() = 0.0;
    if (s.velocity_mps.z() < 0.0) s.velocity_mps.z() = 0.0;
    *crashed = true;
  }
}

}  // namespace

StepOutcome Episode::step(const control::ActionCommand& action_p,
                          const control::ActionCommand& action_e) {
  if (done_) throw ValidationError("step_episode: episode already finished");
  const EnvConfig& cfg = *cfg_;
  const double dt = cfg.arena.dt_s;

  const quad::RotorSpeeds rot_p = resolve_action(action_p, pursuer_, cfg, pid_p_, dt);
  const quad::RotorSpeeds rot_e = resolve_action(action_e, evader_, cfg, pid_e_, dt);

  // Downwash coupling from pre-step states.
  Vec3 f_p, f_e;
  if (cfg.downwash_fn) {
    f_p = cfg.downwash_fn(pursuer_, evader_, cfg.quad);
    f_e = cfg.downwash_fn(evader_, pursuer_, cfg.quad);
  } else {
    f_p = cfg.downwash.force(pursuer_, evader_, cfg.quad);
    f_e = cfg.downwash.force(evader_, pursuer_, cfg.quad);
  }

  pursuer_ = quad::step(pursuer_, rot_p, cfg.quad, dt, f_p);
  evader_ = quad::step(evader_, rot_e, cfg.quad, dt, f_e);
  clamp_to_ground(pursuer_, &crashed_p_);
  clamp_to_ground(evader_, &crashed_e_);

  t_ += 1;
  const double prev_distance = distance_;
  const Vec3 rel = evader_.position_m - pursuer_.position_m;
  const double new_distance = rel.norm();

  StepOutcome out;
  out.distance_m = new_distance;
  out.captured = new_distance < cfg.arena.capture_radius_m;
  out.timed_out = !out.captured && t_ >= cfg.arena.max_steps;
  out.oob_pursuer = pursuer_.position_m.z() < cfg.arena.z_min_m;
  out.oob_evader = !cfg.arena.inside(evader_.position_m);
  std::tie(out.reward_pursuer, out.reward_evader) = compute_rewards(
      prev_distance, new_distance, out.captured, out.timed_out, out.oob_pursuer, out.oob_evader,
      pursuer_.body_rates_radps, evader_.body_rates_radps, cfg.rewards);
  out.done = out.captured || out.timed_out;
  out.crashed_pursuer = crashed_p_;
  out.crashed_evader = crashed_e_;

  distance_ = new_distance;
  for (int i = 0; i + 1 < kHistoryLen; ++i) history_[static_cast<size_t>(i)] = history_[static_cast<size_t>(i) + 1];
  history_[kHistoryLen - 1] = rel;
  done_ = out.done;
  return out;
}

Eigen::VectorXd Episode::observation(Role role) const {
  History h = history_;
  if (role == Role::Evader) {
    for (Vec3& v : h) v = -v;
  }
  return build_observation(role, t_, state(role), h, cfg_->arena, cfg_->norm);
}

BatchEnv::BatchEnv(int n, const EnvConfig& cfg, uint64_t master_seed)
    : cfg_(cfg), master_seed_(master_seed) {
  if (n <= 0) throw ValidationError("batch env: size must be positive");
  cfg_.validate();
  envs_.reserve(static_cast<size_t>(n));
  episode_counter_.assign(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    envs_.emplace_back(cfg_);
    envs_.back().reset(episode_seed(i));
  }
}

uint64_t BatchEnv::episode_seed(int env_index) const {
  return mix_seed(master_seed_, static_cast<uint64_t>(env_index),
                  static_cast<uint64_t>(episode_counter_[static_cast<size_t>(env_index)]));
}

std::vector<StepOutcome> BatchEnv::step(const std::vector<control::ActionCommand>& actions_p,
                                        const std::vector<control::ActionCommand>& actions_e) {
  if (actions_p.size() != envs_.size() || actions_e.size() != envs_.size()) {
    throw ValidationError("step_batch: action count does not match batch size");
  }
  std::vector<StepOutcome> outcomes(envs_.size());
  last_resets_.clear();
  for (size_t i = 0; i < envs_.size(); ++i) {
    outcomes[i] = envs_[i].step(actions_p[i], actions_e[i]);
    if (outcomes[i].done) {
      episode_counter_[i] += 1;
      envs_[i].reset(episode_seed(static_cast<int>(i)));
      last_resets_.push_back(static_cast<int>(i));
    }
  }
  return outcomes;
}

const char* const kTraceCsvHeader =
    "episode_id,t,role,px,py,pz,vx,vy,vz,qw,qx,qy,qz,wx,wy,wz,"
    "action_kind,a0,a1,a2,a3,reward,captured,timed_out,oob,crashed";

namespace {

void append_num(std::string& s, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  s += buf;
  s += ',';
}

}  // namespace

std::string trace_row_csv(const TraceRow& r) {
  std::string s;
  s += std::to_string(r.episode_id);
  s += ',';
  s += std::to_string(r.t);
  s += ',';
  s += role_name(r.role);
  s += ',';
  for (int i = 0; i < 3; ++i) append_num(s, r.position(i));
  for (int i = 0; i < 3; ++i) append_num(s, r.velocity(i));
  for (int i = 0; i < 4; ++i) append_num(s, r.quat_wxyz(i));
  for (int i = 0; i < 3; ++i) append_num(s, r.body_rates(i));
  const bool rate_kind = r.action.kind == control::CommandKind::BodyRate;
  s += rate_kind ? "body_rate," : "velocity,";
  if (rate_kind) {
    for (int i = 0; i < 3; ++i) append_num(s, r.action.body_rates_des_radps(i));
    append_num(s, r.action.thrust_norm_mps2);
  } else {
    for (int i = 0; i < 3; ++i) append_num(s, r.action.velocity_des_mps(i));
    append_num(s, 0.0);
  }
  append_num(s, r.reward);
  s += r.captured ? "1," : "0,";
  s += r.timed_out ? "1," : "0,";
  s += r.oob ? "1," : "0,";
  s += r.crashed ? "1" : "0";
  return s;
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw NumericError("trace export: cannot open " + path);
  f << kTraceCsvHeader << '\n';
  for (const TraceRow& r : rows) f << trace_row_csv(r) << '\n';
  if (!f.good()) throw NumericError("trace export: write failed for " + path);
}

}  // namespace pelab::env
