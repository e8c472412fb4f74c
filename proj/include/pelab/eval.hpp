#pragma once

#include <string>

#include "pelab/env.hpp"
#include "pelab/policy.hpp"

namespace pelab::eval {

struct PairResult {
  std::string pursuer_id;
  std::string evader_id;
  int episodes = 0;
  int captures = 0;
  int timeouts = 0;
  int crashes = 0;  // episodes where either vehicle hit the ground; informational
  double mean_capture_time_s = 0.0;
  double capture_rate = 0.0;

  bool operator==(const PairResult&) const = default;
};

// Number of evaluation workers: PE_ARENA_THREADS when set, else the hardware
// count, never more than `jobs`.
int worker_count(int jobs);

// Plays n seeded episodes with both records in deterministic mode. Episodes
// run in parallel but are reduced in episode order, so the counts are
// identical for any thread count.
PairResult evaluate_pair(const policy::PolicyRecord& pursuer, const policy::PolicyRecord& evader,
                         const env::EnvConfig& cfg, int n_episodes, uint64_t seed);

}  // namespace pelab::eval
