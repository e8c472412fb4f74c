#pragma once

#include <string>
#include <vector>

#include "pelab/eval.hpp"
#include "pelab/league.hpp"

namespace pelab::bench {

struct SpeedRow {
  std::string policy_id;
  double max_linear_mps = 0.0;
  double max_angular_radps = 0.0;

  bool operator==(const SpeedRow&) const = default;
};

// Full-scale results quoted alongside desk-scale measurements for context;
// these rows are carried through reports verbatim, never recomputed.
struct ReferenceRow {
  std::string pursuer_label;
  std::string evader_label;
  double capture_rate = 0.0;

  bool operator==(const ReferenceRow&) const = default;
};

inline constexpr double kFullScaleRatePursuerRate = 0.5703;
inline constexpr double kFullScaleVelocityPursuerRate = 0.1367;

struct EvalReport {
  std::vector<eval::PairResult> pairs;
  std::vector<SpeedRow> max_speed;
  std::vector<ReferenceRow> references;
  // Staircase layout when the report came out of capture_matrix: cell
  // (row, col) is filled iff pairs contains (row_ids[row], column_ids[col]).
  std::vector<std::string> row_ids;
  std::vector<std::string> column_ids;
  std::string config_hash;
  uint64_t seed = 0;
  // Evaluation plays policies at their deterministic mean; reports carry the
  // mode explicitly so published rates are unambiguous about it.
  std::string action_mode = "deterministic";

  bool operator==(const EvalReport&) const = default;
  void validate() const;
  bool cell_present(size_t row, size_t col) const;
};

// Row at which the benchmark occupying 1-based list slot `position` enters
// the table: never before the slot itself, never before the policy existed.
// Stage-0 heuristics exist from row 1; an evader admitted at league stage s
// first meets the pursuer trained at stage s+1, which is row s/2 + 1.
int introduction_row(int position, int admission_stage);

// One row per trained pursuer in admission order, one column per benchmark
// id. Cells appear per introduction_row, giving the staircase layout whose
// gaps mark opponents not yet introduced at that row.
EvalReport capture_matrix(const league::LeagueManifest& manifest,
                          const std::vector<std::string>& benchmark_ids,
                          const env::EnvConfig& cfg, int n_episodes, uint64_t seed);

// Fixed-width text rendering of the staircase with "--" in the gaps.
std::string format_matrix(const EvalReport& report);

// Free-flight speed probe: the probed vehicle spawns normally, the opponent
// is pinned at a fixed far offset so relative observations stay finite, and
// the maxima of ||v|| and ||omega|| are tracked over n_rollouts seeded
// episodes of duration_s each.
SpeedRow max_speed_probe(const policy::PolicyRecord& record, const env::EnvConfig& cfg,
                         double duration_s, int n_rollouts, uint64_t seed);

struct TiltScript {
  double pitch_rate_radps = 15.0;  // commanded pitch rate during the pulse
  double pulse_s = 0.05;           // pulse length before the full-thrust hold
  double path_limit_m = 10.0;      // stop once this much path is covered
  double max_duration_s = 4.0;

  void validate() const;
};

struct TiltResult {
  double max_speed_mps = 0.0;
  double path_length_m = 0.0;  // path covered when the maximum was recorded
  double max_body_rate_radps = 0.0;
};

// Open-loop envelope check independent of any learned policy: pitch over at
// the full commanded rate from hover, then hold maximum collective thrust.
// Returns the top speed reached within the path budget.
TiltResult scripted_tilt_run(const quad::QuadParams& params, const control::RatePidGains& gains,
                             const TiltScript& script = TiltScript{});

// The two cross-modality pairings (rate pursuer vs velocity evader and the
// reverse), plus the full-scale reference rows for context.
EvalReport cross_modality_suite(const policy::PolicyRecord& rate_pursuer,
                                const policy::PolicyRecord& vel_pursuer,
                                const policy::PolicyRecord& rate_evader,
                                const policy::PolicyRecord& vel_evader,
                                const env::EnvConfig& cfg, int n_episodes, uint64_t seed);

enum class ReportFormat { Csv, Json };

// CSV column order: kind, pursuer_id, evader_id, policy_id, episodes,
// captures, timeouts, crashes, mean_capture_time_s, capture_rate,
// max_linear_mps, max_angular_radps. Metadata (config hash, seed, action
// mode, layout) rides in leading # lines; JSON mirrors the same content.
void emit_report(const EvalReport& report, const std::string& path, ReportFormat format);

// Sniffs the format from the first byte. Rejects reports without a seed.
EvalReport parse_report(const std::string& path);

}  // namespace pelab::bench
