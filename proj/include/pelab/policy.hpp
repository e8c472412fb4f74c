#pragma once

#include <map>
#include <optional>
#include <string>

#include "pelab/control.hpp"
#include "pelab/env.hpp"
#include "pelab/nn.hpp"

namespace pelab::policy {

// How a policy's actions reach the vehicle: raw body-rate commands, desired
// velocities through the cascaded controller, or a scripted heuristic (always
// velocity-shaped so it flies the same physics).
enum class Modality { Rate, Velocity, Heuristic };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);

int obs_dim_for(env::Role role);
int act_dim_for(Modality m);

// Per-dimension closed action intervals the squash maps onto.
struct ActionBounds {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int dim() const { return static_cast<int>(lo.size()); }
  void validate() const;
};

ActionBounds bounds_for(Modality m, const quad::QuadParams& params);

enum class ActMode { Stochastic, Deterministic };

// Diagonal-Gaussian actor with tanh squashing plus a separate value critic.
// Weights live in double precision; records are snapped to the f32 grid before
// publication so a saved file reproduces the in-memory policy bit for bit.
struct GaussianPolicy {
  env::Role role = env::Role::Pursuer;
  Modality modality = Modality::Velocity;
  nn::Mlp actor;
  nn::Mlp critic;
  Eigen::VectorXd log_std;
  ActionBounds bounds;

  static GaussianPolicy make(env::Role role, Modality modality, const quad::QuadParams& params,
                             uint64_t seed, double log_std_init = -0.5);

  int obs_dim() const { return actor.input_dim(); }
  int act_dim() const { return actor.output_dim(); }
  void validate() const;
  void quantize_f32();

  // Flat parameter order: actor, log_std, critic.
  int param_count() const;
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
};

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 1.0;

// Numerically stable log(1 - tanh(u)^2).
double log_one_minus_tanh_sq(double u);

// Log density of the squashed action expressed through its pre-squash sample u,
// including the tanh change-of-variables term.
double squashed_log_prob(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std, const ActionBounds& bounds);

// Entropy of the pre-squash Gaussian (the quantity the entropy bonus uses).
double gaussian_entropy(const Eigen::VectorXd& log_std);

// Maps a pre-squash sample to the bounded ActionCommand for the modality.
Eigen::VectorXd squash(const Eigen::VectorXd& u, const ActionBounds& bounds);
control::ActionCommand command_from_u(const GaussianPolicy& p, const Eigen::VectorXd& u);

struct ActResult {
  control::ActionCommand command;
  Eigen::VectorXd u;  // pre-squash sample, what the rollout buffer stores
  double log_prob = 0.0;
  double value = 0.0;
};

ActResult act(const GaussianPolicy& p, const Eigen::VectorXd& obs, ActMode mode, Rng& rng);

struct BatchActResult {
  Eigen::MatrixXd u;        // one row per sample
  Eigen::VectorXd log_prob;
  Eigen::VectorXd value;
};

// Batched act; samples are drawn row-major (per sample, then per dimension) so
// the stream is reproducible. The caller builds commands via command_from_u.
BatchActResult act_batch(const GaussianPolicy& p, const Eigen::MatrixXd& obs, ActMode mode,
                         Rng& rng);

// Mean action only, no sampling and no critic pass (for frozen opponents).
control::ActionCommand act_policy_deterministic(const GaussianPolicy& p,
                                                const Eigen::VectorXd& obs);

enum class HeuristicKind { Hover, Circular, Repel };

const char* heuristic_name(HeuristicKind k);
HeuristicKind heuristic_from_name(const std::string& name);

struct HeuristicSpec {
  HeuristicKind kind = HeuristicKind::Hover;
  // Hover: hold the spawn point, or a fixed point when hold_initial is false.
  bool hold_initial = true;
  Vec3 hover_point = Vec3(0.0, 0.0, 2.0);
  double hover_gain = 2.0;
  // Circular: horizontal circle, tangential feedforward plus a tracking term.
  Vec3 circle_center = Vec3(0.0, 0.0, 2.0);
  double circle_radius_m = 3.0;
  double circle_period_s = 6.0;
  double track_gain = 2.0;
  // Repel: flee the pursuer at full speed, bent inward near walls.
  double repel_speed_mps = 15.0;
  double wall_field_margin_m = 1.0;

  void validate() const;
};

// Per-episode wrapper: captures the hold point at reset, then maps raw states
// to velocity commands. Stateless between steps apart from that hold point.
class HeuristicAgent {
 public:
  explicit HeuristicAgent(const HeuristicSpec& spec);

  void reset(const quad::QuadState& own);
  control::ActionCommand act(const quad::QuadState& own, const quad::QuadState& opponent,
                             const env::ArenaSpec& arena) const;

  const HeuristicSpec& spec() const { return spec_; }

 private:
  HeuristicSpec spec_;
  Vec3 hold_point_ = Vec3(0.0, 0.0, 2.0);
};

// A league member: either a trained network or a heuristic, plus identity.
struct PolicyRecord {
  std::string id;
  env::Role role = env::Role::Pursuer;
  Modality modality = Modality::Velocity;
  int stage_index = 0;
  std::optional<GaussianPolicy> net;
  std::optional<HeuristicSpec> heuristic;
  std::map<std::string, std::string> metadata;

  bool is_heuristic() const { return modality == Modality::Heuristic; }
  void validate() const;
};

// Builds a published record from a trained policy, snapping weights to f32.
PolicyRecord make_net_record(std::string id, const GaussianPolicy& net, int stage_index,
                             std::map<std::string, std::string> metadata = {});
PolicyRecord make_heuristic_record(std::string id, env::Role role, const HeuristicSpec& spec,
                                   int stage_index = 0);

// Plays one PolicyRecord deterministically for one episode at a time: nets act
// at their squashed mean, heuristics through their agent. Re-bind at episode
// start so hover heuristics capture their spawn point.
class RecordActor {
 public:
  RecordActor() = default;

  void bind(const PolicyRecord* record, const quad::QuadState& own_spawn);
  control::ActionCommand act(const env::Episode& episode, env::Role role);

  const PolicyRecord* record() const { return record_; }

 private:
  const PolicyRecord* record_ = nullptr;
  HeuristicAgent heuristic_{HeuristicSpec{}};
};

}  // namespace pelab::policy
