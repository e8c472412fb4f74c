#pragma once

#include <functional>
#include <vector>

#include "pelab/env.hpp"
#include "pelab/policy.hpp"

namespace pelab::ppo {

struct PpoConfig {
  double learning_rate = 5e-4;
  double clip_ratio = 0.1;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int batch_size = 2048;        // minibatch rows per gradient step
  int epochs_per_update = 4;
  double entropy_coeff = 0.001;
  double value_coeff = 1.0;
  double max_grad_norm = 5.0;
  int rollout_steps = 128;      // steps collected per env per update
  int num_envs = 256;
  long total_env_steps = 200000;

  long steps_per_update() const { return static_cast<long>(rollout_steps) * num_envs; }
  void validate() const;
};

// delta_t = r_t + gamma*V_{t+1}*(1-done_t) - V_t, accumulated with lambda.
// Advantages come back raw; normalization is a separate per-update concern.
void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                 const std::vector<uint8_t>& dones, double bootstrap_value, double gamma,
                 double lambda, Eigen::VectorXd& advantages, Eigen::VectorXd& returns);

void normalize_advantages(Eigen::VectorXd& advantages);

// Flat rollout storage; row = env_index * rollout_steps + t.
struct RolloutBuffer {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd u;         // pre-squash actions
  Eigen::VectorXd log_prob;
  Eigen::VectorXd reward;
  Eigen::VectorXd value;
  std::vector<uint8_t> done;
  Eigen::VectorXd advantage;
  Eigen::VectorXd ret;

  long size() const { return obs.rows(); }
  void validate() const;
};

struct LossDiagnostics {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

// Loss over the selected rows; when `grad` is non-null it receives the analytic
// gradient with respect to the policy's flat parameter vector.
LossDiagnostics ppo_loss(const policy::GaussianPolicy& pol, const RolloutBuffer& buffer,
                         const std::vector<int>& rows, const PpoConfig& cfg,
                         Eigen::VectorXd* grad);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamState(int n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state, double lr);

// Scales `grad` so its global norm does not exceed `max_norm`.
void clip_grad_norm(Eigen::VectorXd& grad, double max_norm);

struct UpdateDiagnostics {
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

// One PPO update: normalize advantages over the whole buffer, then
// epochs_per_update sweeps of shuffled minibatches with Adam and norm clipping.
UpdateDiagnostics update(policy::GaussianPolicy& pol, AdamState& adam, RolloutBuffer& buffer,
                         const PpoConfig& cfg, Rng& rng);

// Supplies the frozen opponent for each new episode, in episode order (envs
// 0..N-1 take episodes 0..N-1 at startup, resets take the next index).
using OpponentProvider = std::function<const policy::PolicyRecord*(long episode_index)>;

struct CurvePoint {
  int update_index = 0;
  long env_steps = 0;
  double mean_return = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  policy::GaussianPolicy trained;
  std::vector<CurvePoint> curve;
  long episodes_completed = 0;
};

// Alternates rollout collection against frozen opponents with PPO updates
// until total_env_steps learner steps have been consumed.
TrainResult train_stage(env::Role learner_role, const policy::GaussianPolicy& learner,
                        const OpponentProvider& opponents, const env::EnvConfig& env_cfg,
                        const PpoConfig& cfg, uint64_t seed);

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path);

}  // namespace pelab::ppo
