#include "pelab/league.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include "pelab/policy_io.hpp"

namespace pelab::league {

namespace fs = std::filesystem;
using nlohmann::json;

const policy::PolicyRecord* LeagueManifest::find(const std::string& id) const {
  for (const auto& r : pursuers) {
    if (r.id == id) return &r;
  }
  for (const auto& r : evaders) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void LeagueManifest::validate() const {
  if (!(p_old >= 0.0 && p_old <= 1.0)) throw ValidationError("manifest: p_old outside [0, 1]");
  if (schema_version != 1) throw ValidationError("manifest: unsupported schema_version");
  std::set<std::string> ids;
  for (const auto* pop : {&pursuers, &evaders}) {
    for (const auto& rec : *pop) {
      rec.validate();
      if (!ids.insert(rec.id).second) {
        throw ValidationError("manifest: duplicate policy id '" + rec.id + "'");
      }
    }
  }
  for (const auto& rec : pursuers) {
    if (rec.role != env::Role::Pursuer) throw ValidationError("manifest: evader in pursuer pool");
  }
  for (const auto& rec : evaders) {
    if (rec.role != env::Role::Evader) throw ValidationError("manifest: pursuer in evader pool");
  }
  for (size_t i = 0; i < stage_log.size(); ++i) {
    if (stage_log[i].stage_index != static_cast<int>(i) + 1) {
      throw ValidationError("manifest: stage_log indices must run 1..N");
    }
    if (i > 0 && stage_log[i].trained_role == stage_log[i - 1].trained_role) {
      throw ValidationError("manifest: stage roles must alternate");
    }
    if (find(stage_log[i].policy_id) == nullptr) {
      throw ValidationError("manifest: stage_log references unknown policy '" +
                            stage_log[i].policy_id + "'");
    }
  }
  if (!stage_log.empty() && stage_log.front().trained_role != env::Role::Pursuer) {
    throw ValidationError("manifest: first trained stage must be the pursuer");
  }
  for (const auto& [key, rate] : evaluation_matrix) {
    if (!(rate >= 0.0 && rate <= 1.0)) {
      throw ValidationError("manifest: capture rate outside [0, 1] for (" + key.first + ", " +
                            key.second + ")");
    }
    if (find(key.first) == nullptr || find(key.second) == nullptr) {
      throw ValidationError("manifest: matrix references unknown policy");
    }
  }
}

LeagueManifest cold_start(double p_old) {
  LeagueManifest m;
  m.p_old = p_old;

  policy::HeuristicSpec hover;
  hover.kind = policy::HeuristicKind::Hover;
  m.evaders.push_back(policy::make_heuristic_record("hover_e_s0", env::Role::Evader, hover));

  policy::HeuristicSpec circular;
  circular.kind = policy::HeuristicKind::Circular;
  m.evaders.push_back(policy::make_heuristic_record("circular_e_s0", env::Role::Evader, circular));

  policy::HeuristicSpec repel;
  repel.kind = policy::HeuristicKind::Repel;
  m.evaders.push_back(policy::make_heuristic_record("repel_e_s0", env::Role::Evader, repel));

  policy::HeuristicSpec center;
  center.kind = policy::HeuristicKind::Hover;
  center.hold_initial = false;  // parked at the arena center, not at spawn
  m.pursuers.push_back(policy::make_heuristic_record("hover_center_p_s0", env::Role::Pursuer,
                                                     center));
  m.validate();
  return m;
}

env::Role select_stage(const LeagueManifest& manifest) {
  manifest.validate();  // rejects broken alternation before extending it
  if (manifest.stage_log.empty()) return env::Role::Pursuer;
  return manifest.stage_log.back().trained_role == env::Role::Pursuer ? env::Role::Evader
                                                                      : env::Role::Pursuer;
}

const policy::PolicyRecord& sample_opponent(const LeagueManifest& manifest,
                                            env::Role learner_role, Rng& rng) {
  const env::Role opp_role =
      learner_role == env::Role::Pursuer ? env::Role::Evader : env::Role::Pursuer;
  const auto& pool = manifest.population(opp_role);
  if (pool.empty()) throw ValidationError("sample_opponent: opponent population is empty");
  if (pool.size() == 1) return pool.front();
  if (rng.uniform() < manifest.p_old) {
    const int idx = rng.uniform_int(static_cast<int>(pool.size()) - 1);  // all but newest
    return pool[static_cast<size_t>(idx)];
  }
  return pool.back();
}

namespace {

std::string role_letter(env::Role role) { return role == env::Role::Pursuer ? "p" : "e"; }

std::string modality_prefix(policy::Modality m) {
  return m == policy::Modality::Rate ? "rate" : "vel";
}

// Latest same-role trained network with the requested modality, if any.
const policy::PolicyRecord* latest_net(const LeagueManifest& m, env::Role role,
                                       policy::Modality modality) {
  const auto& pool = m.population(role);
  for (auto it = pool.rbegin(); it != pool.rend(); ++it) {
    if (!it->is_heuristic() && it->modality == modality) return &*it;
  }
  return nullptr;
}

// Shrinks a fresh velocity learner's symmetric command envelope. The envelope
// travels with the weights, so warm starts and saved records keep whatever
// their stage trained under.
void apply_velocity_envelope(policy::GaussianPolicy& p, const Vec3& bound,
                             const quad::QuadParams& params) {
  const policy::ActionBounds outer = policy::bounds_for(policy::Modality::Velocity, params);
  for (int i = 0; i < 3; ++i) {
    if (!(bound(i) > 0.0 && bound(i) <= outer.hi(i))) {
      throw ValidationError("StageSettings: velocity_command_bound outside (0, controller limit]");
    }
  }
  p.bounds.lo = -bound;
  p.bounds.hi = bound;
  p.validate();
}

}  // namespace

StageResult run_stage(LeagueManifest& manifest, const StageSettings& settings, uint64_t seed) {
  manifest.validate();
  const env::Role role = select_stage(manifest);
  const int stage_index = manifest.next_stage_index();

  policy::GaussianPolicy learner = [&]() {
    if (settings.warm_start) {
      if (const policy::PolicyRecord* prev = latest_net(manifest, role, settings.modality)) {
        return *prev->net;
      }
    }
    policy::GaussianPolicy fresh =
        policy::GaussianPolicy::make(role, settings.modality, settings.env.quad,
                                     mix_seed(seed, 0x696e6974), settings.log_std_init);
    if (settings.modality == policy::Modality::Velocity) {
      apply_velocity_envelope(fresh, settings.velocity_command_bound, settings.env.quad);
    }
    return fresh;
  }();

  // Opponents resample on every episode reset; the draw stream is part of the
  // stage seed so reruns reproduce the same schedule.
  Rng sample_rng(mix_seed(seed, 0x6f70706f));
  std::vector<std::string> opponents_used;
  std::set<std::string> seen;
  ppo::OpponentProvider provider = [&](long) -> const policy::PolicyRecord* {
    const policy::PolicyRecord& rec = sample_opponent(manifest, role, sample_rng);
    if (seen.insert(rec.id).second) opponents_used.push_back(rec.id);
    return &rec;
  };

  ppo::TrainResult trained =
      ppo::train_stage(role, learner, provider, settings.env, settings.ppo, seed);

  // Deterministic creation metadata only; wall-clock stamps would break the
  // bitwise reproducibility of reruns.
  std::map<std::string, std::string> meta;
  meta["train.seed"] = std::to_string(seed);
  meta["train.env_steps"] = std::to_string(settings.ppo.total_env_steps);
  meta["train.config_hash"] = settings.config_hash;
  const std::string id =
      modality_prefix(settings.modality) + "_" + role_letter(role) + "_s" + std::to_string(stage_index);
  policy::PolicyRecord record = policy::make_net_record(id, trained.trained, stage_index, meta);

  // Evaluate against the full opponent population before touching the manifest.
  const env::Role opp_role = role == env::Role::Pursuer ? env::Role::Evader : env::Role::Pursuer;
  const auto& opponents = manifest.population(opp_role);
  std::vector<std::pair<std::string, double>> rates;
  for (size_t i = 0; i < opponents.size(); ++i) {
    const policy::PolicyRecord& opp = opponents[i];
    const eval::PairResult res =
        role == env::Role::Pursuer
            ? eval::evaluate_pair(record, opp, settings.env, settings.eval_episodes,
                                  mix_seed(seed, 0x6576616c, i))
            : eval::evaluate_pair(opp, record, settings.env, settings.eval_episodes,
                                  mix_seed(seed, 0x6576616c, i));
    rates.emplace_back(opp.id, res.capture_rate);
  }

  // Commit: everything above succeeded, mutate the manifest in one block.
  StageLogEntry entry;
  entry.stage_index = stage_index;
  entry.trained_role = role;
  entry.policy_id = record.id;
  entry.opponent_ids_used = opponents_used;
  entry.seed = seed;
  entry.config_hash = settings.config_hash;
  entry.env_steps = settings.ppo.total_env_steps;
  manifest.population(role).push_back(std::move(record));
  manifest.stage_log.push_back(std::move(entry));
  for (const auto& [opp_id, rate] : rates) {
    manifest.evaluation_matrix[{id, opp_id}] = rate;
  }
  manifest.validate();

  StageResult result;
  result.policy_id = id;
  result.trained_role = role;
  result.curve = std::move(trained.curve);
  return result;
}

namespace {

json manifest_to_json(const LeagueManifest& m) {
  json j;
  j["schema_version"] = m.schema_version;
  j["p_old"] = m.p_old;
  auto pop_to_json = [](const std::vector<policy::PolicyRecord>& pop) {
    json arr = json::array();
    for (const auto& rec : pop) {
      arr.push_back({{"id", rec.id}, {"file", rec.id + ".pepo"}});
    }
    return arr;
  };
  j["pursuers"] = pop_to_json(m.pursuers);
  j["evaders"] = pop_to_json(m.evaders);
  json log = json::array();
  for (const auto& e : m.stage_log) {
    log.push_back({{"stage_index", e.stage_index},
                   {"trained_role", env::role_name(e.trained_role)},
                   {"policy_id", e.policy_id},
                   {"opponent_ids_used", e.opponent_ids_used},
                   {"seed", e.seed},
                   {"config_hash", e.config_hash},
                   {"env_steps", e.env_steps}});
  }
  j["stage_log"] = log;
  json matrix = json::array();
  for (const auto& [key, rate] : m.evaluation_matrix) {
    matrix.push_back({{"policy_id", key.first}, {"opponent_id", key.second}, {"capture_rate", rate}});
  }
  j["evaluation_matrix"] = matrix;
  return j;
}

}  // namespace

void save_manifest(const LeagueManifest& manifest, const std::string& dir) {
  manifest.validate();
  fs::create_directories(dir);
  for (const auto* pop : {&manifest.pursuers, &manifest.evaders}) {
    for (const auto& rec : *pop) {
      policy::save_policy(rec, (fs::path(dir) / (rec.id + ".pepo")).string());
    }
  }
  const fs::path final_path = fs::path(dir) / "manifest.json";
  const fs::path tmp_path = fs::path(dir) / "manifest.json.tmp";
  {
    std::ofstream f(tmp_path, std::ios::trunc);
    if (!f) throw ValidationError("save_manifest: cannot open " + tmp_path.string());
    f << manifest_to_json(manifest).dump(2) << "\n";
    if (!f) throw ValidationError("save_manifest: write failed");
  }
  fs::rename(tmp_path, final_path);
}

LeagueManifest load_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.json";
  std::ifstream f(path);
  if (!f) throw ValidationError("load_manifest: cannot open " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ValidationError("load_manifest: malformed JSON: " + std::string(e.what()));
  }

  LeagueManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1) {
    throw ValidationError("load_manifest: schema_version " + std::to_string(m.schema_version) +
                          " is not supported");
  }
  m.p_old = j.at("p_old").get<double>();

  auto pop_from_json = [&dir](const json& arr) {
    std::vector<policy::PolicyRecord> pop;
    for (const auto& item : arr) {
      const std::string id = item.at("id").get<std::string>();
      const fs::path file = fs::path(dir) / item.at("file").get<std::string>();
      if (!fs::exists(file)) {
        throw ValidationError("load_manifest: missing weight file for policy '" + id + "'");
      }
      policy::PolicyRecord rec = policy::load_policy(file.string());
      if (rec.id != id) {
        throw ValidationError("load_manifest: weight file for '" + id + "' contains '" + rec.id +
                              "'");
      }
      pop.push_back(std::move(rec));
    }
    return pop;
  };
  m.pursuers = pop_from_json(j.at("pursuers"));
  m.evaders = pop_from_json(j.at("evaders"));

  for (const auto& item : j.at("stage_log")) {
    StageLogEntry e;
    e.stage_index = item.at("stage_index").get<int>();
    e.trained_role = env::role_from_name(item.at("trained_role").get<std::string>());
    e.policy_id = item.at("policy_id").get<std::string>();
    e.opponent_ids_used = item.at("opponent_ids_used").get<std::vector<std::string>>();
    e.seed = item.at("seed").get<uint64_t>();
    e.config_hash = item.at("config_hash").get<std::string>();
    e.env_steps = item.at("env_steps").get<long>();
    m.stage_log.push_back(std::move(e));
  }
  for (const auto& item : j.at("evaluation_matrix")) {
    m.evaluation_matrix[{item.at("policy_id").get<std::string>(),
                         item.at("opponent_id").get<std::string>()}] =
        item.at("capture_rate").get<double>();
  }
  m.validate();
  return m;
}

}  // namespace pelab::league
