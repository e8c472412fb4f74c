#pragma once

#include "pelab/common.hpp"
#include "pelab/control.hpp"
#include "pelab/quad.hpp"

#include <array>
#include <string>
#include <vector>

namespace pelab::env {

enum class Role { Pursuer, Evader };

inline Role other(Role r) { return r == Role::Pursuer ? Role::Evader : Role::Pursuer; }
const char* role_name(Role r);
Role role_from_name(const std::string& name);

// Flight volume: x, y in [-hx, hx] x [-hy, hy], z in [0, 2 hz].
struct ArenaSpec {
  Vec3 half_extents_m = Vec3(5.0, 5.0, 2.0);
  double capture_radius_m = 0.5;
  int max_steps = 600;
  double z_min_m = 0.3;                  // pursuer altitude floor (penalty only)
  double min_initial_separation_m = 2.0;
  double wall_margin_m = 0.5;            // spawn margin from every wall
  double min_spawn_z_m = 0.5;
  double dt_s = 0.016;

  void validate() const;
  Vec3 center() const { return Vec3(0.0, 0.0, half_extents_m.z()); }
  bool inside(const Vec3& p) const {
    return std::abs(p.x()) <= half_extents_m.x() && std::abs(p.y()) <= half_extents_m.y() &&
           p.z() >= 0.0 && p.z() <= 2.0 * half_extents_m.z();
  }
};

struct RewardCoeffs {
  double kappa_a = 0.05;    // approach shaping (pursuer)
  double kappa_br = 0.0005; // body-rate regularization (both)
  double kappa_c = 10.0;    // capture bonus/penalty
  double kappa_t = 10.0;    // timeout penalty/bonus
  double kappa_b = 0.1;     // out-of-bounds per-step penalty
  double r_step = 0.005;    // evader survival bonus per step

  void validate() const;
};

struct NormalizationSpec {
  double time_divisor = 600.0;
  Vec3 rel_pos_divisor = Vec3(10.0, 10.0, 4.0);
  Vec3 pos_divisor = Vec3(5.0, 5.0, 2.0);
  double altitude_divisor = 2.0;
  Vec3 lin_vel_divisor = Vec3(15.0, 15.0, 5.0);
  Vec3 ang_vel_divisor = Vec3(15.0, 15.0, 5.0);
  double clamp_limit = 1.5;  // soft margin applied to every normalized entry

  void validate() const;
};

inline constexpr int kHistoryLen = 5;
inline constexpr int kPursuerObsDim = 32;  // t | 5x3 rel-pos history | z | R | v | omega
inline constexpr int kEvaderObsDim = 34;   // t | 5x3 rel-pos history | p | R | v | omega

inline int obs_dim(Role r) { return r == Role::Pursuer ? kPursuerObsDim : kEvaderObsDim; }

// Relative opponent positions in the pursuer's frame of reference
// (p_evader - p_pursuer), ordered oldest -> newest. The evader's view negates.
using History = std::array<Vec3, kHistoryLen>;

struct StepOutcome {
  double reward_pursuer = 0.0;
  double reward_evader = 0.0;
  bool captured = false;
  bool timed_out = false;
  bool oob_pursuer = false;
  bool oob_evader = false;
  double distance_m = 0.0;
  bool done = false;
  // Ground-contact flags, sticky for the episode (metadata, not termination).
  bool crashed_pursuer = false;
  bool crashed_evader = false;
};

// Per-step rewards. Non-zero-sum by design: the pursuer is shaped toward
// approach, the evader earns a survival bonus; capture and timeout transfer
// +/- kappa_c and kappa_t, out-of-bounds costs each violator kappa_b per step.
std::pair<double, double> compute_rewards(double prev_distance, double new_distance,
                                          bool captured, bool timed_out, bool oob_p, bool oob_e,
                                          const Vec3& omega_p, const Vec3& omega_e,
                                          const RewardCoeffs& coeffs);

// Flattens the role's view into the normalized observation vector.
// `history_own_frame` must already point from self to opponent.
Eigen::VectorXd build_observation(Role role, int t, const quad::QuadState& own,
                                  const History& history_own_frame, const ArenaSpec& arena,
                                  const NormalizationSpec& norm);

// Everything one episode needs; shared read-only across a batch.
struct EnvConfig {
  quad::QuadParams quad;
  ArenaSpec arena;
  RewardCoeffs rewards;
  NormalizationSpec norm;
  control::RatePidGains rate_pid;
  control::VelocityGains velocity;
  quad::DownwashModel downwash;
  // Optional replacement wake model; when set it overrides `downwash`.
  quad::DownwashFn downwash_fn;

  void validate() const;
};

class Episode {
 public:
  explicit Episode(const EnvConfig& cfg);

  void reset(uint64_t seed);
  // Places both vehicles explicitly (probe and test hook). Clears controller
  // memory, history and flags just like reset().
  void reset_to(const quad::QuadState& pursuer, const quad::QuadState& evader);
  // Steps both vehicles once. Throws ValidationError when called on a
  // finished episode or with out-of-bound actions.
  StepOutcome step(const control::ActionCommand& action_p, const control::ActionCommand& action_e);

  Eigen::VectorXd observation(Role role) const;
  const quad::QuadState& state(Role role) const {
    return role == Role::Pursuer ? pursuer_ : evader_;
  }
  const History& history_pursuer_frame() const { return history_; }
  int t() const { return t_; }
  bool done() const { return done_; }
  double distance() const { return distance_; }
  double time_s() const { return t_ * cfg_->arena.dt_s; }
  bool crashed(Role role) const { return role == Role::Pursuer ? crashed_p_ : crashed_e_; }
  uint64_t seed() const { return seed_; }
  const EnvConfig& config() const { return *cfg_; }

 private:
  const EnvConfig* cfg_;
  quad::QuadState pursuer_, evader_;
  control::RatePidState pid_p_, pid_e_;
  History history_{};
  int t_ = 0;
  bool done_ = true;
  double distance_ = 0.0;
  bool crashed_p_ = false, crashed_e_ = false;
  uint64_t seed_ = 0;
};

// Fixed-size batch of independent episodes with auto-reset. Episode seeds are
// derived as mix(master_seed, env_index, episode_counter), so results do not
// depend on how the batch is partitioned or interleaved.
class BatchEnv {
 public:
  BatchEnv(int n, const EnvConfig& cfg, uint64_t master_seed);

  int size() const { return static_cast<int>(envs_.size()); }
  Episode& env(int i) { return envs_[static_cast<size_t>(i)]; }
  const Episode& env(int i) const { return envs_[static_cast<size_t>(i)]; }

  std::vector<StepOutcome> step(const std::vector<control::ActionCommand>& actions_p,
                                const std::vector<control::ActionCommand>& actions_e);

  // Env indices that auto-reset during the last step() call.
  const std::vector<int>& last_resets() const { return last_resets_; }
  uint64_t episode_seed(int env_index) const;

 private:
  EnvConfig cfg_;
  std::vector<Episode> envs_;
  std::vector<long> episode_counter_;
  uint64_t master_seed_;
  std::vector<int> last_resets_;
};

// One trajectory record per vehicle per step, for replay export.
struct TraceRow {
  long episode_id = 0;
  int t = 0;
  Role role = Role::Pursuer;
  Vec3 position;
  Vec3 velocity;
  Vec4 quat_wxyz;
  Vec3 body_rates;
  control::ActionCommand action;
  double reward = 0.0;
  bool captured = false, timed_out = false, oob = false, crashed = false;
};

extern const char* const kTraceCsvHeader;
std::string trace_row_csv(const TraceRow& row);
void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path);

}  // namespace pelab::env
