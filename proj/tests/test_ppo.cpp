#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pelab/ppo.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace pelab;
using namespace pelab::ppo;
using policy::GaussianPolicy;
using policy::Modality;

namespace {

// Small hand-assembled policy so finite differences stay cheap.
GaussianPolicy toy_policy(uint64_t seed, int obs_dim = 1, int act_dim = 1) {
  GaussianPolicy p;
  p.role = env::Role::Pursuer;
  p.modality = Modality::Rate;
  Rng rng(seed);
  p.actor = nn::Mlp::xavier({obs_dim, 2, act_dim}, rng);
  p.critic = nn::Mlp::xavier({obs_dim, 2, 1}, rng);
  p.log_std = Eigen::VectorXd::Constant(act_dim, -0.4);
  p.bounds.lo = Eigen::VectorXd::Constant(act_dim, -2.0);
  p.bounds.hi = Eigen::VectorXd::Constant(act_dim, 2.0);
  return p;
}

// Buffer whose old log-probs sit `log_ratio_offset` below the policy's own,
// so every row has ratio exp(offset) under the unperturbed parameters.
RolloutBuffer synthetic_buffer(const GaussianPolicy& p, int n, uint64_t seed,
                               double log_ratio_offset = 0.0) {
  Rng rng(seed);
  RolloutBuffer b;
  b.obs.resize(n, p.obs_dim());
  b.u.resize(n, p.act_dim());
  b.log_prob.resize(n);
  b.reward.resize(n);
  b.value.resize(n);
  b.done.assign(static_cast<size_t>(n), 0);
  b.advantage.resize(n);
  b.ret.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p.obs_dim(); ++j) b.obs(i, j) = rng.uniform(-1.0, 1.0);
    const Eigen::VectorXd mean = p.actor.forward(b.obs.row(i));
    for (int j = 0; j < p.act_dim(); ++j) {
      b.u(i, j) = mean(j) + std::exp(p.log_std(j)) * 0.5 * rng.uniform(-1.0, 1.0);
    }
    b.log_prob(i) =
        policy::squashed_log_prob(b.u.row(i), mean, p.log_std, p.bounds) - log_ratio_offset;
    // Advantages kept away from zero so gradient entries stay meaningful.
    const double mag = rng.uniform(0.5, 2.0);
    b.advantage(i) = (i % 2 == 0) ? mag : -mag;
    b.ret(i) = rng.uniform(-1.0, 1.0);
    b.reward(i) = 0.0;
    b.value(i) = 0.0;
  }
  return b;
}

std::vector<int> all_rows(const RolloutBuffer& b) {
  std::vector<int> rows(static_cast<size_t>(b.size()));
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return rows;
}

env::EnvConfig reach_task_config() {
  env::EnvConfig cfg;
  cfg.arena.max_steps = 64;
  cfg.rewards.kappa_a = 0.05;  // approach shaping only
  cfg.rewards.kappa_br = 0.0;
  cfg.rewards.kappa_c = 0.0;
  cfg.rewards.kappa_t = 0.0;
  cfg.rewards.kappa_b = 0.0;
  cfg.rewards.r_step = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("gae on a single terminal step") {
  Eigen::VectorXd rewards(1), values(1), adv, ret;
  rewards << 1.0;
  values << 0.0;
  compute_gae(rewards, values, {1}, 0.0, 0.99, 0.95, adv, ret);
  CHECK(adv(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ret(0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("gae two-step hand recursion") {
  Eigen::VectorXd rewards(2), values(2), adv, ret;
  rewards << 1.0, 1.0;
  values << 0.0, 0.0;
  compute_gae(rewards, values, {0, 0}, 0.0, 0.99, 0.95, adv, ret);
  CHECK(adv(1) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(adv(0) == doctest::Approx(1.9405).epsilon(1e-12));
  CHECK(ret(0) == doctest::Approx(1.9405).epsilon(1e-12));
}

TEST_CASE("gae degenerates to reward minus value at gamma zero") {
  Rng rng(3);
  Eigen::VectorXd rewards(20), values(20), adv, ret;
  std::vector<uint8_t> dones(20, 0);
  for (int i = 0; i < 20; ++i) {
    rewards(i) = rng.uniform(-1, 1);
    values(i) = rng.uniform(-1, 1);
    dones[static_cast<size_t>(i)] = rng.uniform() < 0.2 ? 1 : 0;
  }
  compute_gae(rewards, values, dones, 0.35, 0.0, 0.95, adv, ret);
  for (int i = 0; i < 20; ++i) {
    REQUIRE(adv(i) == doctest::Approx(rewards(i) - values(i)).epsilon(1e-15));
  }
}

TEST_CASE("gae rejects mismatched array lengths") {
  Eigen::VectorXd rewards(3), values(2), adv, ret;
  rewards.setZero();
  values.setZero();
  CHECK_THROWS_AS(compute_gae(rewards, values, {0, 0, 0}, 0.0, 0.99, 0.95, adv, ret),
                  ValidationError);
}

TEST_CASE("advantage normalization hits zero mean and unit variance") {
  Rng rng(7);
  Eigen::VectorXd adv(4096);
  for (int i = 0; i < adv.size(); ++i) adv(i) = rng.uniform(-3.0, 10.0);
  normalize_advantages(adv);
  CHECK(std::abs(adv.mean()) < 1e-6);
  const double var = (adv.array() - adv.mean()).square().sum() / adv.size();
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
}

TEST_CASE("identity ratio recovers the plain surrogate") {
  GaussianPolicy p = toy_policy(1, 3, 2);
  RolloutBuffer b = synthetic_buffer(p, 64, 11);
  PpoConfig cfg;
  LossDiagnostics d = ppo_loss(p, b, all_rows(b), cfg, nullptr);
  CHECK(d.clip_fraction == 0.0);
  CHECK(d.policy_loss == doctest::Approx(-b.advantage.mean()).epsilon(1e-9));
  CHECK(d.approx_kl == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("clip rule caps the surrogate at ratio 1.2") {
  GaussianPolicy p = toy_policy(2, 2, 1);
  RolloutBuffer b = synthetic_buffer(p, 8, 13, std::log(1.2));
  b.advantage.setConstant(2.0);
  PpoConfig cfg;
  LossDiagnostics d = ppo_loss(p, b, all_rows(b), cfg, nullptr);
  // Every sample contributes min(1.2*2, 1.1*2) = 2.2.
  CHECK(d.policy_loss == doctest::Approx(-2.2).epsilon(1e-9));
  CHECK(d.clip_fraction == doctest::Approx(1.0));
}

TEST_CASE("zero advantages reduce the loss to value and entropy terms") {
  GaussianPolicy p = toy_policy(3, 2, 2);
  RolloutBuffer b = synthetic_buffer(p, 32, 17);
  b.advantage.setZero();
  PpoConfig cfg;
  Eigen::VectorXd grad;
  LossDiagnostics d = ppo_loss(p, b, all_rows(b), cfg, &grad);
  CHECK(d.policy_loss == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.loss == doctest::Approx(cfg.value_coeff * d.value_loss -
                                  cfg.entropy_coeff * d.entropy).epsilon(1e-12));
}

TEST_CASE("analytic gradients agree with central finite differences") {
  GaussianPolicy p = toy_policy(4, 2, 2);
  // Ratios near but not at 1 so the unclipped branch is active with margin.
  RolloutBuffer b = synthetic_buffer(p, 24, 19, 0.03);

  struct Combo {
    double value_coeff;
    double entropy_coeff;
  };
  for (const Combo combo : {Combo{0.0, 0.0}, Combo{1.0, 0.0}, Combo{1.0, 0.01}}) {
    PpoConfig cfg;
    cfg.value_coeff = combo.value_coeff;
    cfg.entropy_coeff = combo.entropy_coeff;
    Eigen::VectorXd grad;
    ppo_loss(p, b, all_rows(b), cfg, &grad);

    const Eigen::VectorXd theta = p.flatten();
    const double fd_eps = 1e-5;
    double max_rel = 0.0;
    for (int i = 0; i < theta.size(); ++i) {
      GaussianPolicy q = p;
      Eigen::VectorXd t = theta;
      t(i) += fd_eps;
      q.unflatten(t);
      const double up = ppo_loss(q, b, all_rows(b), cfg, nullptr).loss;
      t(i) -= 2.0 * fd_eps;
      q.unflatten(t);
      const double down = ppo_loss(q, b, all_rows(b), cfg, nullptr).loss;
      const double fd = (up - down) / (2.0 * fd_eps);
      const double rel = std::abs(fd - grad(i)) / std::max({1e-6, std::abs(fd), std::abs(grad(i))});
      max_rel = std::max(max_rel, rel);
    }
    REQUIRE(max_rel < 1e-4);
  }
}

TEST_CASE("gradient clipping scales an oversized gradient onto the ball") {
  Rng rng(23);
  Eigen::VectorXd g(40);
  for (int i = 0; i < 40; ++i) g(i) = rng.uniform(-1.0, 1.0);
  g *= 50.0 / g.norm();
  CHECK(g.norm() == doctest::Approx(50.0).epsilon(1e-12));
  clip_grad_norm(g, 5.0);
  CHECK(std::abs(g.norm() - 5.0) < 1e-9);
  // Under the bound nothing changes.
  Eigen::VectorXd small = Eigen::VectorXd::Constant(4, 0.1);
  Eigen::VectorXd copy = small;
  clip_grad_norm(small, 5.0);
  CHECK(small == copy);
}

TEST_CASE("update with zero learning rate leaves parameters bitwise intact") {
  GaussianPolicy p = toy_policy(5, 3, 2);
  const Eigen::VectorXd before = p.flatten();
  RolloutBuffer b = synthetic_buffer(p, 64, 29, 0.02);
  PpoConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 16;
  AdamState adam(p.param_count());
  Rng rng(31);
  update(p, adam, b, cfg, rng);
  CHECK(p.flatten() == before);
}

TEST_CASE("update is deterministic for a fixed seed") {
  PpoConfig cfg;
  cfg.batch_size = 32;
  auto run = [&cfg]() {
    GaussianPolicy p = toy_policy(6, 3, 2);
    RolloutBuffer b = synthetic_buffer(p, 128, 37, 0.01);
    AdamState adam(p.param_count());
    Rng rng(41);
    update(p, adam, b, cfg, rng);
    return p.flatten();
  };
  CHECK(run() == run());
}

TEST_CASE("update moves log_std back inside its clamp") {
  GaussianPolicy p = toy_policy(7, 2, 1);
  p.log_std.setConstant(policy::kLogStdMax);  // pinned at the ceiling
  RolloutBuffer b = synthetic_buffer(p, 64, 43, 0.02);
  PpoConfig cfg;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.05;  // aggressive on purpose
  AdamState adam(p.param_count());
  Rng rng(47);
  update(p, adam, b, cfg, rng);
  for (Eigen::Index i = 0; i < p.log_std.size(); ++i) {
    REQUIRE(p.log_std(i) <= policy::kLogStdMax);
    REQUIRE(p.log_std(i) >= policy::kLogStdMin);
  }
}

TEST_CASE("train_stage with zero env steps returns the input unchanged") {
  GaussianPolicy learner =
      GaussianPolicy::make(env::Role::Pursuer, Modality::Velocity, quad::QuadParams{}, 3);
  policy::PolicyRecord hover =
      policy::make_heuristic_record("hover_e_s0", env::Role::Evader, policy::HeuristicSpec{});
  PpoConfig cfg;
  cfg.total_env_steps = 0;
  env::EnvConfig env_cfg;
  TrainResult r = train_stage(env::Role::Pursuer, learner,
                              [&hover](long) { return &hover; }, env_cfg, cfg, 1);
  CHECK(r.trained.flatten() == learner.flatten());
  CHECK(r.curve.empty());
}

TEST_CASE("train_stage reproduces its curve for a fixed seed") {
  policy::PolicyRecord hover =
      policy::make_heuristic_record("hover_e_s0", env::Role::Evader, policy::HeuristicSpec{});
  PpoConfig cfg;
  cfg.num_envs = 4;
  cfg.rollout_steps = 16;
  cfg.batch_size = 64;
  cfg.total_env_steps = 3 * 64;  // three updates

  auto run = [&]() {
    GaussianPolicy learner = toy_policy(8, env::kPursuerObsDim, 3);
    learner.role = env::Role::Pursuer;
    learner.modality = Modality::Velocity;
    learner.bounds = policy::bounds_for(Modality::Velocity, quad::QuadParams{});
    env::EnvConfig env_cfg;
    TrainResult r = train_stage(env::Role::Pursuer, learner,
                                [&hover](long) { return &hover; }, env_cfg, cfg, 77);
    return r;
  };
  TrainResult a = run();
  TrainResult b = run();
  REQUIRE(a.curve.size() == b.curve.size());
  REQUIRE(a.curve.size() == 3);
  for (size_t i = 0; i < a.curve.size(); ++i) {
    REQUIRE(a.curve[i].mean_return == b.curve[i].mean_return);
    REQUIRE(a.curve[i].approx_kl == b.curve[i].approx_kl);
    REQUIRE(a.curve[i].env_steps == b.curve[i].env_steps);
  }
  REQUIRE(a.trained.flatten() == b.trained.flatten());
}

TEST_CASE("reach-hover returns improve over one hundred updates in most seeds") {
  // Single-agent shaping sanity: pursuer vs a parked hover evader, approach
  // reward only. Small widths keep the hundred updates affordable.
  const env::EnvConfig env_cfg = reach_task_config();
  policy::PolicyRecord hover =
      policy::make_heuristic_record("hover_e_s0", env::Role::Evader, policy::HeuristicSpec{});

  PpoConfig cfg;
  cfg.num_envs = 16;
  cfg.rollout_steps = 64;
  cfg.batch_size = 512;
  cfg.total_env_steps = 101L * cfg.steps_per_update();

  int improved = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    GaussianPolicy learner;
    learner.role = env::Role::Pursuer;
    learner.modality = Modality::Velocity;
    Rng rng(mix_seed(900, seed));
    learner.actor = nn::Mlp::xavier({env::kPursuerObsDim, 32, 32, 32, 3}, rng, 0.01);
    learner.critic = nn::Mlp::xavier({env::kPursuerObsDim, 32, 32, 32, 1}, rng);
    learner.log_std = Eigen::VectorXd::Constant(3, -0.5);
    learner.bounds = policy::bounds_for(Modality::Velocity, quad::QuadParams{});

    TrainResult r = train_stage(env::Role::Pursuer, learner,
                                [&hover](long) { return &hover; }, env_cfg, cfg, seed);
    REQUIRE(r.curve.size() == 101);
    if (r.curve[100].mean_return > r.curve[0].mean_return) ++improved;
  }
  CHECK(improved >= 9);
}

TEST_CASE("curve csv carries the documented columns") {
  std::vector<CurvePoint> curve(2);
  curve[0] = {0, 1024, 0.5, 0.1, 0.01, 2.0};
  curve[1] = {1, 2048, 0.75, 0.12, 0.02, 1.9};
  const auto path = std::filesystem::temp_directory_path() / "pelab_curve.csv";
  write_curve_csv(curve, path.string());
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "update_index,env_steps,mean_return,clip_fraction,approx_kl,entropy");
  int rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
  std::filesystem::remove(path);
}
