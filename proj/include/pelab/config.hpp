#pragma once

#include <string>

#include "pelab/env.hpp"
#include "pelab/league.hpp"
#include "pelab/ppo.hpp"

namespace pelab::config {

struct LeagueSettings {
  double p_old = 0.75;
  int stages = 4;
  policy::Modality modality = policy::Modality::Velocity;
  double log_std_init = -0.5;
  Vec3 velocity_command_bound = Vec3(15.0, 15.0, 5.0);
  bool warm_start = true;
  int eval_episodes = 256;

  void validate() const;
};

// Whole-lab configuration: one JSON document with a schema_version. Every
// value has a default, unknown keys are rejected at every nesting level.
struct LabConfig {
  int schema_version = 1;
  env::EnvConfig env;
  ppo::PpoConfig ppo;
  LeagueSettings league;
  uint64_t master_seed = 1;
  std::string output_dir = "runs";

  void validate() const;
};

LabConfig default_config();

// Canonical pretty-printed JSON (sorted keys), the same text layout the
// shipped defaults file uses.
std::string config_to_text(const LabConfig& cfg);

// Overlay semantics: absent keys keep their defaults, unknown keys throw.
LabConfig config_from_text(const std::string& text);
LabConfig load_config(const std::string& path);

// FNV-1a over the canonical compact dump; embedded in every artifact so a
// result can be traced back to the exact configuration that produced it.
std::string config_hash(const LabConfig& cfg);

// league::StageSettings assembled from the lab config.
league::StageSettings stage_settings(const LabConfig& cfg);

}  // namespace pelab::config
