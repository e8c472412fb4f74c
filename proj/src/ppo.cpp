#include "pelab/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pelab::ppo {

void PpoConfig::validate() const {
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) {
    throw ValidationError("PpoConfig: clip_ratio must be in (0, 1)");
  }
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda > 0.0 && gae_lambda <= 1.0)) {
    throw ValidationError("PpoConfig: gamma and lambda must be in (0, 1]");
  }
  if (learning_rate < 0.0 || entropy_coeff < 0.0 || value_coeff < 0.0 || max_grad_norm < 0.0) {
    throw ValidationError("PpoConfig: coefficients must be >= 0");
  }
  if (batch_size <= 0 || epochs_per_update <= 0 || rollout_steps <= 0 || num_envs <= 0) {
    throw ValidationError("PpoConfig: sizes must be positive");
  }
  if (total_env_steps < 0) throw ValidationError("PpoConfig: total_env_steps must be >= 0");
}

void compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                 const std::vector<uint8_t>& dones, double bootstrap_value, double gamma,
                 double lambda, Eigen::VectorXd& advantages, Eigen::VectorXd& returns) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw ValidationError("compute_gae: array lengths disagree");
  }
  advantages.resize(n);
  returns.resize(n);
  double gae = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double not_done = dones[static_cast<size_t>(t)] ? 0.0 : 1.0;
    const double next_value = (t == n - 1) ? bootstrap_value : values(t + 1);
    const double delta = rewards(t) + gamma * next_value * not_done - values(t);
    gae = delta + gamma * lambda * not_done * gae;
    advantages(t) = gae;
    returns(t) = gae + values(t);
  }
  if (!advantages.allFinite()) throw NumericError("compute_gae: non-finite advantage");
}

void normalize_advantages(Eigen::VectorXd& advantages) {
  const Eigen::Index n = advantages.size();
  if (n == 0) return;
  const double mean = advantages.mean();
  const double var = (advantages.array() - mean).square().sum() / static_cast<double>(n);
  const double std = std::sqrt(var);
  advantages = (advantages.array() - mean) / (std + 1e-8);
}

void RolloutBuffer::validate() const {
  const long n = size();
  if (u.rows() != n || log_prob.size() != n || reward.size() != n || value.size() != n ||
      static_cast<long>(done.size()) != n || advantage.size() != n || ret.size() != n) {
    throw ValidationError("RolloutBuffer: array lengths disagree");
  }
  if (!advantage.allFinite()) throw NumericError("RolloutBuffer: non-finite advantages");
}

LossDiagnostics ppo_loss(const policy::GaussianPolicy& pol, const RolloutBuffer& buffer,
                         const std::vector<int>& rows, const PpoConfig& cfg,
                         Eigen::VectorXd* grad) {
  if (rows.empty()) throw ValidationError("ppo_loss: empty batch");
  const int n = static_cast<int>(rows.size());
  const int act_dim = pol.act_dim();
  const double inv_n = 1.0 / static_cast<double>(n);

  Eigen::MatrixXd obs(n, pol.obs_dim());
  Eigen::MatrixXd u(n, act_dim);
  for (int i = 0; i < n; ++i) {
    obs.row(i) = buffer.obs.row(rows[static_cast<size_t>(i)]);
    u.row(i) = buffer.u.row(rows[static_cast<size_t>(i)]);
  }

  nn::ForwardCache actor_cache, critic_cache;
  const Eigen::MatrixXd mean = pol.actor.forward_batch(obs, grad ? &actor_cache : nullptr);
  const Eigen::VectorXd values = pol.critic.forward_batch(obs, grad ? &critic_cache : nullptr).col(0);

  Eigen::VectorXd sigma(act_dim), inv_sigma(act_dim);
  for (int j = 0; j < act_dim; ++j) {
    sigma(j) = std::exp(pol.log_std(j));
    inv_sigma(j) = 1.0 / sigma(j);
  }

  // z-scores and fresh log-probs; the tanh correction matches the rollout's
  // convention so it cancels inside the ratio.
  Eigen::MatrixXd z(n, act_dim);
  Eigen::VectorXd log_prob_new(n);
  for (int i = 0; i < n; ++i) {
    z.row(i) = (u.row(i) - mean.row(i)).cwiseProduct(inv_sigma.transpose());
    log_prob_new(i) =
        policy::squashed_log_prob(u.row(i), mean.row(i), pol.log_std, pol.bounds);
  }

  LossDiagnostics diag;
  double surrogate_sum = 0.0, value_sq_sum = 0.0, kl_sum = 0.0;
  int clipped = 0;
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(n);  // d(policy loss)/d(log_prob_new), per row
  const double lo = 1.0 - cfg.clip_ratio, hi = 1.0 + cfg.clip_ratio;

  for (int i = 0; i < n; ++i) {
    const int r = rows[static_cast<size_t>(i)];
    const double adv = buffer.advantage(r);
    const double ratio = std::exp(log_prob_new(i) - buffer.log_prob(r));
    const double unclipped = ratio * adv;
    const double clipped_term = std::clamp(ratio, lo, hi) * adv;
    surrogate_sum += std::min(unclipped, clipped_term);
    if (unclipped <= clipped_term) {
      // Unclipped branch is active; its derivative wrt log_prob is ratio*adv.
      coef(i) = -inv_n * ratio * adv;
    }
    if (std::abs(ratio - 1.0) > cfg.clip_ratio) ++clipped;
    kl_sum += buffer.log_prob(r) - log_prob_new(i);
    const double verr = values(i) - buffer.ret(r);
    value_sq_sum += verr * verr;
  }

  diag.policy_loss = -surrogate_sum * inv_n;
  diag.value_loss = value_sq_sum * inv_n;
  diag.entropy = policy::gaussian_entropy(pol.log_std);
  diag.clip_fraction = static_cast<double>(clipped) * inv_n;
  diag.approx_kl = kl_sum * inv_n;
  diag.loss = diag.policy_loss + cfg.value_coeff * diag.value_loss - cfg.entropy_coeff * diag.entropy;
  if (!std::isfinite(diag.loss)) {
    throw NumericError("ppo_loss: non-finite loss (policy=" + std::to_string(diag.policy_loss) +
                       ", value=" + std::to_string(diag.value_loss) +
                       ", entropy=" + std::to_string(diag.entropy) + ")");
  }
  if (grad == nullptr) return diag;

  // Actor gradient: dL/dmean_ij = coef_i * dlogpi/dmean_ij = coef_i * z_ij / sigma_j.
  Eigen::MatrixXd d_mean(n, act_dim);
  for (int i = 0; i < n; ++i) {
    d_mean.row(i) = coef(i) * z.row(i).cwiseProduct(inv_sigma.transpose());
  }
  const nn::Grads actor_grads = pol.actor.backward(actor_cache, d_mean);

  // log_std gradient: policy term via dlogpi/dlog_std_j = z^2 - 1, plus the
  // entropy bonus whose derivative is exactly 1 per dimension.
  Eigen::VectorXd d_log_std = Eigen::VectorXd::Zero(act_dim);
  for (int i = 0; i < n; ++i) {
    d_log_std += coef(i) * (z.row(i).array().square() - 1.0).matrix().transpose();
  }
  d_log_std.array() -= cfg.entropy_coeff;

  // Critic gradient: dL/dV_i = value_coeff * 2 (V_i - R_i) / n.
  Eigen::MatrixXd d_value(n, 1);
  for (int i = 0; i < n; ++i) {
    d_value(i, 0) = cfg.value_coeff * 2.0 * inv_n * (values(i) - buffer.ret(rows[static_cast<size_t>(i)]));
  }
  const nn::Grads critic_grads = pol.critic.backward(critic_cache, d_value);

  grad->resize(pol.param_count());
  int off = 0;
  nn::Mlp::flatten_grads_into(actor_grads, *grad, off);
  off += pol.actor.param_count();
  for (int j = 0; j < act_dim; ++j) (*grad)(off++) = d_log_std(j);
  nn::Mlp::flatten_grads_into(critic_grads, *grad, off);
  if (!grad->allFinite()) throw NumericError("ppo_loss: non-finite gradient");
  return diag;
}

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state, double lr) {
  if (theta.size() != grad.size() || theta.size() != state.m.size()) {
    throw ValidationError("adam_step: size mismatch");
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  state.t += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double m_hat = state.m(i) / bias1;
    const double v_hat = state.v(i) / bias2;
    theta(i) -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

void clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
}

namespace {

void clamp_log_std(policy::GaussianPolicy& pol) {
  for (Eigen::Index i = 0; i < pol.log_std.size(); ++i) {
    pol.log_std(i) = std::clamp(pol.log_std(i), policy::kLogStdMin, policy::kLogStdMax);
  }
}

}  // namespace

UpdateDiagnostics update(policy::GaussianPolicy& pol, AdamState& adam, RolloutBuffer& buffer,
                         const PpoConfig& cfg, Rng& rng) {
  buffer.validate();
  normalize_advantages(buffer.advantage);

  const int n = static_cast<int>(buffer.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  Eigen::VectorXd theta = pol.flatten();
  Eigen::VectorXd grad;
  UpdateDiagnostics diag;
  int batches = 0;

  for (int epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    // Fisher-Yates with our own rng keeps the shuffle reproducible everywhere.
    for (int i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
    }
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(start + cfg.batch_size, n);
      std::vector<int> rows(order.begin() + start, order.begin() + stop);
      LossDiagnostics loss = ppo_loss(pol, buffer, rows, cfg, &grad);
      clip_grad_norm(grad, cfg.max_grad_norm);
      adam_step(theta, grad, adam, cfg.learning_rate);
      pol.unflatten(theta);
      clamp_log_std(pol);
      theta = pol.flatten();
      diag.clip_fraction += loss.clip_fraction;
      diag.approx_kl += loss.approx_kl;
      diag.entropy += loss.entropy;
      diag.policy_loss += loss.policy_loss;
      diag.value_loss += loss.value_loss;
      ++batches;
    }
  }
  if (batches > 0) {
    const double inv = 1.0 / static_cast<double>(batches);
    diag.clip_fraction *= inv;
    diag.approx_kl *= inv;
    diag.entropy *= inv;
    diag.policy_loss *= inv;
    diag.value_loss *= inv;
  }
  return diag;
}

namespace {

// Frozen opponents for every env in the batch, re-bound on episode resets.
class OpponentBank {
 public:
  OpponentBank(const OpponentProvider& provider, env::BatchEnv& batch, env::Role opponent_role)
      : provider_(provider), opponent_role_(opponent_role) {
    actors_.resize(static_cast<size_t>(batch.size()));
    for (int i = 0; i < batch.size(); ++i) rebind(batch, i);
  }

  void rebind(env::BatchEnv& batch, int env_index) {
    const policy::PolicyRecord* rec = provider_(next_episode_++);
    if (rec == nullptr) throw ValidationError("train_stage: opponent provider returned null");
    actors_[static_cast<size_t>(env_index)].bind(
        rec, batch.env(env_index).state(opponent_role_));
  }

  control::ActionCommand act(const env::Episode& episode, int env_index) {
    return actors_[static_cast<size_t>(env_index)].act(episode, opponent_role_);
  }

 private:
  const OpponentProvider& provider_;
  env::Role opponent_role_;
  std::vector<policy::RecordActor> actors_;
  long next_episode_ = 0;
};

}  // namespace

TrainResult train_stage(env::Role learner_role, const policy::GaussianPolicy& learner,
                        const OpponentProvider& opponents, const env::EnvConfig& env_cfg,
                        const PpoConfig& cfg, uint64_t seed) {
  cfg.validate();
  learner.validate();
  if (learner.role != learner_role) throw ValidationError("train_stage: learner role mismatch");

  TrainResult result;
  result.trained = learner;
  if (cfg.total_env_steps == 0) return result;

  const env::Role opp_role =
      learner_role == env::Role::Pursuer ? env::Role::Evader : env::Role::Pursuer;
  const int n_envs = cfg.num_envs;
  const int t_steps = cfg.rollout_steps;
  const int obs_dim = learner.obs_dim();
  const int act_dim = learner.act_dim();

  env::BatchEnv batch(n_envs, env_cfg, mix_seed(seed, 0x656e7673));
  OpponentBank bank(opponents, batch, opp_role);
  Rng act_rng(mix_seed(seed, 0x61637431));
  Rng update_rng(mix_seed(seed, 0x75706431));
  AdamState adam(result.trained.param_count());

  std::vector<double> episode_return(static_cast<size_t>(n_envs), 0.0);
  std::vector<control::ActionCommand> learner_cmds(static_cast<size_t>(n_envs));
  std::vector<control::ActionCommand> opponent_cmds(static_cast<size_t>(n_envs));

  const long updates =
      (cfg.total_env_steps + cfg.steps_per_update() - 1) / cfg.steps_per_update();
  long env_steps_done = 0;

  RolloutBuffer buffer;
  buffer.obs.resize(static_cast<long>(n_envs) * t_steps, obs_dim);
  buffer.u.resize(static_cast<long>(n_envs) * t_steps, act_dim);
  buffer.log_prob.resize(static_cast<long>(n_envs) * t_steps);
  buffer.reward.resize(static_cast<long>(n_envs) * t_steps);
  buffer.value.resize(static_cast<long>(n_envs) * t_steps);
  buffer.done.assign(static_cast<size_t>(n_envs) * static_cast<size_t>(t_steps), 0);
  buffer.advantage.resize(static_cast<long>(n_envs) * t_steps);
  buffer.ret.resize(static_cast<long>(n_envs) * t_steps);

  Eigen::MatrixXd obs_now(n_envs, obs_dim);

  for (long upd = 0; upd < updates; ++upd) {
    double return_sum = 0.0;
    long returns_seen = 0;

    for (int t = 0; t < t_steps; ++t) {
      for (int i = 0; i < n_envs; ++i) {
        obs_now.row(i) = batch.env(i).observation(learner_role);
      }
      policy::BatchActResult acted =
          policy::act_batch(result.trained, obs_now, policy::ActMode::Stochastic, act_rng);
      for (int i = 0; i < n_envs; ++i) {
        learner_cmds[static_cast<size_t>(i)] = policy::command_from_u(result.trained, acted.u.row(i));
        opponent_cmds[static_cast<size_t>(i)] = bank.act(batch.env(i), i);
      }
      const std::vector<env::StepOutcome>& outcomes =
          learner_role == env::Role::Pursuer ? batch.step(learner_cmds, opponent_cmds)
                                             : batch.step(opponent_cmds, learner_cmds);
      for (int i = 0; i < n_envs; ++i) {
        const env::StepOutcome& out = outcomes[static_cast<size_t>(i)];
        const double r = learner_role == env::Role::Pursuer ? out.reward_pursuer : out.reward_evader;
        const long row = static_cast<long>(i) * t_steps + t;
        buffer.obs.row(row) = obs_now.row(i);
        buffer.u.row(row) = acted.u.row(i);
        buffer.log_prob(row) = acted.log_prob(i);
        buffer.value(row) = acted.value(i);
        buffer.reward(row) = r;
        buffer.done[static_cast<size_t>(row)] = out.done ? 1 : 0;
        episode_return[static_cast<size_t>(i)] += r;
        if (out.done) {
          return_sum += episode_return[static_cast<size_t>(i)];
          episode_return[static_cast<size_t>(i)] = 0.0;
          ++returns_seen;
          ++result.episodes_completed;
        }
      }
      for (int i : batch.last_resets()) bank.rebind(batch, i);
      env_steps_done += n_envs;
    }

    // Bootstrap from the critic at the post-rollout observations, then GAE
    // env by env over its contiguous slice.
    for (int i = 0; i < n_envs; ++i) {
      obs_now.row(i) = batch.env(i).observation(learner_role);
    }
    const Eigen::VectorXd bootstrap =
        result.trained.critic.forward_batch(obs_now).col(0);
    for (int i = 0; i < n_envs; ++i) {
      const long base = static_cast<long>(i) * t_steps;
      Eigen::VectorXd adv, rets;
      std::vector<uint8_t> dones(buffer.done.begin() + base, buffer.done.begin() + base + t_steps);
      compute_gae(buffer.reward.segment(base, t_steps), buffer.value.segment(base, t_steps),
                  dones, bootstrap(i), cfg.gamma, cfg.gae_lambda, adv, rets);
      buffer.advantage.segment(base, t_steps) = adv;
      buffer.ret.segment(base, t_steps) = rets;
    }

    UpdateDiagnostics ud = update(result.trained, adam, buffer, cfg, update_rng);

    CurvePoint pt;
    pt.update_index = static_cast<int>(upd);
    pt.env_steps = env_steps_done;
    if (returns_seen > 0) {
      pt.mean_return = return_sum / static_cast<double>(returns_seen);
    } else {
      // No episode finished inside this window; report the running partials.
      double partial = 0.0;
      for (double v : episode_return) partial += v;
      pt.mean_return = partial / static_cast<double>(n_envs);
    }
    pt.clip_fraction = ud.clip_fraction;
    pt.approx_kl = ud.approx_kl;
    pt.entropy = ud.entropy;
    result.curve.push_back(pt);
  }
  return result;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ValidationError("write_curve_csv: cannot open " + path);
  f << "update_index,env_steps,mean_return,clip_fraction,approx_kl,entropy\n";
  char buf[160];
  for (const CurvePoint& p : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%ld,%.17g,%.17g,%.17g,%.17g\n", p.update_index,
                  p.env_steps, p.mean_return, p.clip_fraction, p.approx_kl, p.entropy);
    f << buf;
  }
}

}  // namespace pelab::ppo
