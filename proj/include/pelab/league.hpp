#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pelab/eval.hpp"
#include "pelab/policy.hpp"
#include "pelab/ppo.hpp"

namespace pelab::league {

struct StageLogEntry {
  int stage_index = 0;
  env::Role trained_role = env::Role::Pursuer;
  std::string policy_id;
  std::vector<std::string> opponent_ids_used;
  uint64_t seed = 0;
  std::string config_hash;
  long env_steps = 0;
};

// (policy_id, opponent_id) -> pursuer capture rate of that pairing.
using EvalMatrix = std::map<std::pair<std::string, std::string>, double>;

struct LeagueManifest {
  int schema_version = 1;
  double p_old = 0.75;
  std::vector<policy::PolicyRecord> pursuers;
  std::vector<policy::PolicyRecord> evaders;
  std::vector<StageLogEntry> stage_log;
  EvalMatrix evaluation_matrix;

  const std::vector<policy::PolicyRecord>& population(env::Role role) const {
    return role == env::Role::Pursuer ? pursuers : evaders;
  }
  std::vector<policy::PolicyRecord>& population(env::Role role) {
    return role == env::Role::Pursuer ? pursuers : evaders;
  }
  const policy::PolicyRecord* find(const std::string& id) const;
  int next_stage_index() const { return static_cast<int>(stage_log.size()) + 1; }

  // Checks id uniqueness, alternation, matrix bounds and record integrity.
  void validate() const;
};

// Seed populations: heuristic evaders {hover, circular, repel} and a pursuer
// hovering at the arena center. All carry stage_index 0.
LeagueManifest cold_start(double p_old);

// The role that trains next: opposite of the last trained role, pursuer first.
env::Role select_stage(const LeagueManifest& manifest);

// With probability p_old a uniform draw over all but the newest opponent
// (newest when the population has size 1), otherwise the newest.
const policy::PolicyRecord& sample_opponent(const LeagueManifest& manifest,
                                            env::Role learner_role, Rng& rng);

struct StageSettings {
  env::EnvConfig env;
  ppo::PpoConfig ppo;
  policy::Modality modality = policy::Modality::Velocity;
  double log_std_init = -0.5;
  // Command envelope for freshly created velocity learners. Narrower
  // envelopes trade top speed for precision; warm-started learners keep the
  // envelope stored with their weights.
  Vec3 velocity_command_bound = Vec3(15.0, 15.0, 5.0);
  bool warm_start = true;    // start from the latest same-role network
  int eval_episodes = 256;
  std::string config_hash;   // recorded into the stage log and new records
};

struct StageResult {
  std::string policy_id;
  env::Role trained_role = env::Role::Pursuer;
  std::vector<ppo::CurvePoint> curve;
};

// One AMSPB stage: select role, warm-start the learner, train against
// per-episode sampled opponents, evaluate against every current opponent and
// admit unconditionally. The manifest is only mutated once everything
// succeeded, so a thrown error leaves it untouched.
StageResult run_stage(LeagueManifest& manifest, const StageSettings& settings, uint64_t seed);

// Directory layout: manifest.json plus one .pepo weight file per record.
// manifest.json lands via temp-file rename, weight files are written first,
// so a reader (or a resumed run) never observes a torn state.
void save_manifest(const LeagueManifest& manifest, const std::string& dir);
LeagueManifest load_manifest(const std::string& dir);

}  // namespace pelab::league
