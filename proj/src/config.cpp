#include "pelab/config.hpp"

#include "json.hpp"

#include "pelab/control.hpp"

#include <fstream>
#include <initializer_list>
#include <string>

namespace pelab::config {

using nlohmann::json;

void LeagueSettings::validate() const {
  if (!(p_old >= 0.0 && p_old <= 1.0)) throw ValidationError("config: league.p_old outside [0, 1]");
  if (stages < 1) throw ValidationError("config: league.stages must be positive");
  if (modality == policy::Modality::Heuristic) {
    throw ValidationError("config: league.modality must be rate or velocity");
  }
  if (eval_episodes < 1) throw ValidationError("config: league.eval_episodes must be positive");
  if (log_std_init < policy::kLogStdMin || log_std_init > policy::kLogStdMax) {
    throw ValidationError("config: league.log_std_init outside the clamp range");
  }
  const Vec3 cap(control::kMaxHorizontalSpeed, control::kMaxHorizontalSpeed,
                 control::kMaxVerticalSpeed);
  for (int i = 0; i < 3; ++i) {
    if (!(velocity_command_bound(i) > 0.0 && velocity_command_bound(i) <= cap(i))) {
      throw ValidationError("config: league.velocity_command_bound outside (0, controller limit]");
    }
  }
}

void LabConfig::validate() const {
  if (schema_version != 1) throw ValidationError("config: unsupported schema_version");
  env.validate();
  ppo.validate();
  league.validate();
  if (output_dir.empty()) throw ValidationError("config: empty output.dir");
}

LabConfig default_config() { return LabConfig{}; }

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) {
    throw ValidationError(std::string("config: ") + what + " must be a 3-element array");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

void expect_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw ValidationError(std::string("config: section '") + section + "' must be an object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ValidationError("config: unknown key '" + item.key() + "' in section '" + section +
                            "'");
    }
  }
}

template <typename T>
void overlay(const json& j, const char* key, T& value) {
  if (j.contains(key)) value = j.at(key).template get<T>();
}

void overlay_vec3(const json& j, const char* key, Vec3& value) {
  if (j.contains(key)) value = vec3_from_json(j.at(key), key);
}

json config_to_json(const LabConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["quad"] = {{"mass_kg", c.env.quad.mass_kg},
               {"inertia_diag", vec3_to_json(c.env.quad.inertia_diag)},
               {"arm_length_m", c.env.quad.arm_length_m},
               {"drag_coeff", c.env.quad.drag_coeff},
               {"rotor_force_const", c.env.quad.rotor_force_const},
               {"rotor_moment_const", c.env.quad.rotor_moment_const},
               {"rotor_max_speed_radps", c.env.quad.rotor_max_speed_radps},
               {"gravity_mps2", c.env.quad.gravity_mps2}};
  j["arena"] = {{"half_extents_m", vec3_to_json(c.env.arena.half_extents_m)},
                {"capture_radius_m", c.env.arena.capture_radius_m},
                {"max_steps", c.env.arena.max_steps},
                {"z_min_m", c.env.arena.z_min_m},
                {"min_initial_separation_m", c.env.arena.min_initial_separation_m},
                {"wall_margin_m", c.env.arena.wall_margin_m},
                {"min_spawn_z_m", c.env.arena.min_spawn_z_m},
                {"dt_s", c.env.arena.dt_s}};
  j["rewards"] = {{"kappa_a", c.env.rewards.kappa_a},
                  {"kappa_br", c.env.rewards.kappa_br},
                  {"kappa_c", c.env.rewards.kappa_c},
                  {"kappa_t", c.env.rewards.kappa_t},
                  {"kappa_b", c.env.rewards.kappa_b},
                  {"r_step", c.env.rewards.r_step}};
  j["normalization"] = {{"time_divisor", c.env.norm.time_divisor},
                        {"rel_pos_divisor", vec3_to_json(c.env.norm.rel_pos_divisor)},
                        {"pos_divisor", vec3_to_json(c.env.norm.pos_divisor)},
                        {"altitude_divisor", c.env.norm.altitude_divisor},
                        {"lin_vel_divisor", vec3_to_json(c.env.norm.lin_vel_divisor)},
                        {"ang_vel_divisor", vec3_to_json(c.env.norm.ang_vel_divisor)},
                        {"clamp_limit", c.env.norm.clamp_limit}};
  j["rate_pid"] = {{"kp", vec3_to_json(c.env.rate_pid.kp)},
                   {"ki", vec3_to_json(c.env.rate_pid.ki)},
                   {"kd", vec3_to_json(c.env.rate_pid.kd)},
                   {"integral_limit_nm", vec3_to_json(c.env.rate_pid.integral_limit_nm)}};
  j["velocity_control"] = {{"kv", c.env.velocity.kv},
                           {"k_att", c.env.velocity.k_att},
                           {"speed_cap_mps", c.env.velocity.speed_cap_mps}};
  j["downwash"] = {{"enabled", c.env.downwash.enabled},
                   {"strength", c.env.downwash.strength},
                   {"radius_factor", c.env.downwash.radius_factor},
                   {"depth_m", c.env.downwash.depth_m}};
  j["ppo"] = {{"learning_rate", c.ppo.learning_rate},
              {"clip_ratio", c.ppo.clip_ratio},
              {"gamma", c.ppo.gamma},
              {"gae_lambda", c.ppo.gae_lambda},
              {"batch_size", c.ppo.batch_size},
              {"epochs_per_update", c.ppo.epochs_per_update},
              {"entropy_coeff", c.ppo.entropy_coeff},
              {"value_coeff", c.ppo.value_coeff},
              {"max_grad_norm", c.ppo.max_grad_norm},
              {"rollout_steps", c.ppo.rollout_steps},
              {"num_envs", c.ppo.num_envs},
              {"total_env_steps", c.ppo.total_env_steps}};
  j["league"] = {{"p_old", c.league.p_old},
                 {"stages", c.league.stages},
                 {"modality", policy::modality_name(c.league.modality)},
                 {"log_std_init", c.league.log_std_init},
                 {"velocity_command_bound", vec3_to_json(c.league.velocity_command_bound)},
                 {"warm_start", c.league.warm_start},
                 {"eval_episodes", c.league.eval_episodes}};
  j["seeds"] = {{"master", c.master_seed}};
  j["output"] = {{"dir", c.output_dir}};
  return j;
}

LabConfig config_from_json(const json& j) {
  expect_keys(j, "root",
              {"schema_version", "quad", "arena", "rewards", "normalization", "rate_pid",
               "velocity_control", "downwash", "ppo", "league", "seeds", "output"});
  LabConfig c;
  overlay(j, "schema_version", c.schema_version);
  if (j.contains("quad")) {
    const json& q = j.at("quad");
    expect_keys(q, "quad",
                {"mass_kg", "inertia_diag", "arm_length_m", "drag_coeff", "rotor_force_const",
                 "rotor_moment_const", "rotor_max_speed_radps", "gravity_mps2"});
    overlay(q, "mass_kg", c.env.quad.mass_kg);
    overlay_vec3(q, "inertia_diag", c.env.quad.inertia_diag);
    overlay(q, "arm_length_m", c.env.quad.arm_length_m);
    overlay(q, "drag_coeff", c.env.quad.drag_coeff);
    overlay(q, "rotor_force_const", c.env.quad.rotor_force_const);
    overlay(q, "rotor_moment_const", c.env.quad.rotor_moment_const);
    overlay(q, "rotor_max_speed_radps", c.env.quad.rotor_max_speed_radps);
    overlay(q, "gravity_mps2", c.env.quad.gravity_mps2);
  }
  if (j.contains("arena")) {
    const json& a = j.at("arena");
    expect_keys(a, "arena",
                {"half_extents_m", "capture_radius_m", "max_steps", "z_min_m",
                 "min_initial_separation_m", "wall_margin_m", "min_spawn_z_m", "dt_s"});
    overlay_vec3(a, "half_extents_m", c.env.arena.half_extents_m);
    overlay(a, "capture_radius_m", c.env.arena.capture_radius_m);
    overlay(a, "max_steps", c.env.arena.max_steps);
    overlay(a, "z_min_m", c.env.arena.z_min_m);
    overlay(a, "min_initial_separation_m", c.env.arena.min_initial_separation_m);
    overlay(a, "wall_margin_m", c.env.arena.wall_margin_m);
    overlay(a, "min_spawn_z_m", c.env.arena.min_spawn_z_m);
    overlay(a, "dt_s", c.env.arena.dt_s);
  }
  if (j.contains("rewards")) {
    const json& r = j.at("rewards");
    expect_keys(r, "rewards", {"kappa_a", "kappa_br", "kappa_c", "kappa_t", "kappa_b", "r_step"});
    overlay(r, "kappa_a", c.env.rewards.kappa_a);
    overlay(r, "kappa_br", c.env.rewards.kappa_br);
    overlay(r, "kappa_c", c.env.rewards.kappa_c);
    overlay(r, "kappa_t", c.env.rewards.kappa_t);
    overlay(r, "kappa_b", c.env.rewards.kappa_b);
    overlay(r, "r_step", c.env.rewards.r_step);
  }
  if (j.contains("normalization")) {
    const json& n = j.at("normalization");
    expect_keys(n, "normalization",
                {"time_divisor", "rel_pos_divisor", "pos_divisor", "altitude_divisor",
                 "lin_vel_divisor", "ang_vel_divisor", "clamp_limit"});
    overlay(n, "time_divisor", c.env.norm.time_divisor);
    overlay_vec3(n, "rel_pos_divisor", c.env.norm.rel_pos_divisor);
    overlay_vec3(n, "pos_divisor", c.env.norm.pos_divisor);
    overlay(n, "altitude_divisor", c.env.norm.altitude_divisor);
    overlay_vec3(n, "lin_vel_divisor", c.env.norm.lin_vel_divisor);
    overlay_vec3(n, "ang_vel_divisor", c.env.norm.ang_vel_divisor);
    overlay(n, "clamp_limit", c.env.norm.clamp_limit);
  }
  if (j.contains("rate_pid")) {
    const json& p = j.at("rate_pid");
    expect_keys(p, "rate_pid", {"kp", "ki", "kd", "integral_limit_nm"});
    overlay_vec3(p, "kp", c.env.rate_pid.kp);
    overlay_vec3(p, "ki", c.env.rate_pid.ki);
    overlay_vec3(p, "kd", c.env.rate_pid.kd);
    overlay_vec3(p, "integral_limit_nm", c.env.rate_pid.integral_limit_nm);
  }
  if (j.contains("velocity_control")) {
    const json& v = j.at("velocity_control");
    expect_keys(v, "velocity_control", {"kv", "k_att", "speed_cap_mps"});
    overlay(v, "kv", c.env.velocity.kv);
    overlay(v, "k_att", c.env.velocity.k_att);
    overlay(v, "speed_cap_mps", c.env.velocity.speed_cap_mps);
  }
  if (j.contains("downwash")) {
    const json& d = j.at("downwash");
    expect_keys(d, "downwash", {"enabled", "strength", "radius_factor", "depth_m"});
    overlay(d, "enabled", c.env.downwash.enabled);
    overlay(d, "strength", c.env.downwash.strength);
    overlay(d, "radius_factor", c.env.downwash.radius_factor);
    overlay(d, "depth_m", c.env.downwash.depth_m);
  }
  if (j.contains("ppo")) {
    const json& p = j.at("ppo");
    expect_keys(p, "ppo",
                {"learning_rate", "clip_ratio", "gamma", "gae_lambda", "batch_size",
                 "epochs_per_update", "entropy_coeff", "value_coeff", "max_grad_norm",
                 "rollout_steps", "num_envs", "total_env_steps"});
    overlay(p, "learning_rate", c.ppo.learning_rate);
    overlay(p, "clip_ratio", c.ppo.clip_ratio);
    overlay(p, "gamma", c.ppo.gamma);
    overlay(p, "gae_lambda", c.ppo.gae_lambda);
    overlay(p, "batch_size", c.ppo.batch_size);
    overlay(p, "epochs_per_update", c.ppo.epochs_per_update);
    overlay(p, "entropy_coeff", c.ppo.entropy_coeff);
    overlay(p, "value_coeff", c.ppo.value_coeff);
    overlay(p, "max_grad_norm", c.ppo.max_grad_norm);
    overlay(p, "rollout_steps", c.ppo.rollout_steps);
    overlay(p, "num_envs", c.ppo.num_envs);
    overlay(p, "total_env_steps", c.ppo.total_env_steps);
  }
  if (j.contains("league")) {
    const json& l = j.at("league");
    expect_keys(l, "league",
                {"p_old", "stages", "modality", "log_std_init", "velocity_command_bound",
                 "warm_start", "eval_episodes"});
    overlay(l, "p_old", c.league.p_old);
    overlay(l, "stages", c.league.stages);
    if (l.contains("modality")) {
      c.league.modality = policy::modality_from_name(l.at("modality").get<std::string>());
    }
    overlay(l, "log_std_init", c.league.log_std_init);
    overlay_vec3(l, "velocity_command_bound", c.league.velocity_command_bound);
    overlay(l, "warm_start", c.league.warm_start);
    overlay(l, "eval_episodes", c.league.eval_episodes);
  }
  if (j.contains("seeds")) {
    const json& s = j.at("seeds");
    expect_keys(s, "seeds", {"master"});
    overlay(s, "master", c.master_seed);
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    expect_keys(o, "output", {"dir"});
    overlay(o, "dir", c.output_dir);
  }
  c.validate();
  return c;
}

}  // namespace

std::string config_to_text(const LabConfig& cfg) {
  return config_to_json(cfg).dump(2) + "\n";
}

LabConfig config_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("config: malformed JSON: " + std::string(e.what()));
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError("config: " + std::string(e.what()));
  }
}

LabConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return config_from_text(text);
}

std::string config_hash(const LabConfig& cfg) {
  // nlohmann objects keep keys sorted, so the compact dump is canonical.
  const std::string dump = config_to_json(cfg).dump();
  return hex64(fnv1a64(dump));
}

league::StageSettings stage_settings(const LabConfig& cfg) {
  league::StageSettings s;
  s.env = cfg.env;
  s.ppo = cfg.ppo;
  s.modality = cfg.league.modality;
  s.log_std_init = cfg.league.log_std_init;
  s.velocity_command_bound = cfg.league.velocity_command_bound;
  s.warm_start = cfg.league.warm_start;
  s.eval_episodes = cfg.league.eval_episodes;
  s.config_hash = config_hash(cfg);
  return s;
}

}  // namespace pelab::config
