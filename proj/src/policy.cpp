#include "pelab/policy.hpp"

#include <cmath>

namespace pelab::policy {

namespace {

constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Rate: return "rate";
    case Modality::Velocity: return "velocity";
    case Modality::Heuristic: return "heuristic";
  }
  throw ValidationError("modality_name: unknown modality");
}

Modality modality_from_name(const std::string& name) {
  if (name == "rate") return Modality::Rate;
  if (name == "velocity") return Modality::Velocity;
  if (name == "heuristic") return Modality::Heuristic;
  throw ValidationError("unknown modality: " + name);
}

int obs_dim_for(env::Role role) {
  return role == env::Role::Pursuer ? env::kPursuerObsDim : env::kEvaderObsDim;
}

int act_dim_for(Modality m) {
  switch (m) {
    case Modality::Rate: return 4;
    case Modality::Velocity: return 3;
    case Modality::Heuristic: break;
  }
  throw ValidationError("act_dim_for: heuristics have no network action space");
}

void ActionBounds::validate() const {
  if (lo.size() != hi.size() || lo.size() == 0) {
    throw ValidationError("ActionBounds: lo/hi must be nonempty and equal length");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!(lo(i) < hi(i))) throw ValidationError("ActionBounds: lo must be strictly below hi");
  }
}

ActionBounds bounds_for(Modality m, const quad::QuadParams& params) {
  ActionBounds b;
  if (m == Modality::Rate) {
    b.lo = Eigen::Vector4d(-control::kMaxRollPitchRate, -control::kMaxRollPitchRate,
                           -control::kMaxYawRate, 0.0);
    b.hi = Eigen::Vector4d(control::kMaxRollPitchRate, control::kMaxRollPitchRate,
                           control::kMaxYawRate, params.max_thrust_norm());
  } else if (m == Modality::Velocity) {
    b.lo = Vec3(-control::kMaxHorizontalSpeed, -control::kMaxHorizontalSpeed,
                -control::kMaxVerticalSpeed);
    b.hi = Vec3(control::kMaxHorizontalSpeed, control::kMaxHorizontalSpeed,
                control::kMaxVerticalSpeed);
  } else {
    throw ValidationError("bounds_for: heuristics have no network action space");
  }
  return b;
}

GaussianPolicy GaussianPolicy::make(env::Role role, Modality modality,
                                    const quad::QuadParams& params, uint64_t seed,
                                    double log_std_init) {
  if (modality == Modality::Heuristic) {
    throw ValidationError("GaussianPolicy: heuristic records carry no network");
  }
  const int in = obs_dim_for(role);
  const int out = act_dim_for(modality);
  GaussianPolicy p;
  p.role = role;
  p.modality = modality;
  Rng rng(mix_seed(seed, 0x6e657473));
  p.actor = nn::Mlp::xavier({in, 128, 128, 128, out}, rng, 0.01);
  p.critic = nn::Mlp::xavier({in, 128, 128, 128, 1}, rng);
  p.log_std = Eigen::VectorXd::Constant(out, log_std_init);
  p.bounds = bounds_for(modality, params);
  p.validate();
  return p;
}

void GaussianPolicy::validate() const {
  bounds.validate();
  if (actor.output_dim() != bounds.dim() || log_std.size() != bounds.dim()) {
    throw ValidationError("GaussianPolicy: action dimension mismatch");
  }
  if (critic.input_dim() != actor.input_dim() || critic.output_dim() != 1) {
    throw ValidationError("GaussianPolicy: critic shape mismatch");
  }
  if (!actor.all_finite() || !critic.all_finite() || !log_std.allFinite()) {
    throw NumericError("GaussianPolicy: non-finite parameters");
  }
  for (Eigen::Index i = 0; i < log_std.size(); ++i) {
    if (log_std(i) < kLogStdMin - 1e-12 || log_std(i) > kLogStdMax + 1e-12) {
      throw ValidationError("GaussianPolicy: log_std outside [-5, 1]");
    }
  }
}

void GaussianPolicy::quantize_f32() {
  actor.quantize_f32();
  critic.quantize_f32();
  for (Eigen::Index i = 0; i < log_std.size(); ++i) {
    log_std(i) = static_cast<double>(static_cast<float>(log_std(i)));
  }
}

int GaussianPolicy::param_count() const {
  return actor.param_count() + static_cast<int>(log_std.size()) + critic.param_count();
}

Eigen::VectorXd GaussianPolicy::flatten() const {
  Eigen::VectorXd theta(param_count());
  int off = 0;
  actor.flatten_into(theta, off);
  off += actor.param_count();
  for (Eigen::Index i = 0; i < log_std.size(); ++i) theta(off++) = log_std(i);
  critic.flatten_into(theta, off);
  return theta;
}

void GaussianPolicy::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != param_count()) throw ValidationError("GaussianPolicy: flat size mismatch");
  int off = 0;
  actor.unflatten_from(theta, off);
  off += actor.param_count();
  for (Eigen::Index i = 0; i < log_std.size(); ++i) log_std(i) = theta(off++);
  critic.unflatten_from(theta, off);
}

double log_one_minus_tanh_sq(double u) {
  const double a = std::abs(u);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

double squashed_log_prob(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& log_std, const ActionBounds& bounds) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double sigma = std::exp(log_std(i));
    const double z = (u(i) - mean(i)) / sigma;
    const double half_range = 0.5 * (bounds.hi(i) - bounds.lo(i));
    lp += -0.5 * z * z - log_std(i) - 0.5 * kLogTwoPi;
    lp -= std::log(half_range) + log_one_minus_tanh_sq(u(i));
  }
  return lp;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  // Per dimension: log_std + 0.5*log(2*pi*e).
  return log_std.sum() + 0.5 * static_cast<double>(log_std.size()) * (kLogTwoPi + 1.0);
}

Eigen::VectorXd squash(const Eigen::VectorXd& u, const ActionBounds& bounds) {
  Eigen::VectorXd a(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double mid = 0.5 * (bounds.hi(i) + bounds.lo(i));
    const double half = 0.5 * (bounds.hi(i) - bounds.lo(i));
    a(i) = mid + half * std::tanh(u(i));
  }
  return a;
}

control::ActionCommand command_from_u(const GaussianPolicy& p, const Eigen::VectorXd& u) {
  const Eigen::VectorXd a = squash(u, p.bounds);
  if (p.modality == Modality::Rate) {
    return control::ActionCommand::body_rate(Vec3(a(0), a(1), a(2)), a(3));
  }
  return control::ActionCommand::velocity(Vec3(a(0), a(1), a(2)));
}

ActResult act(const GaussianPolicy& p, const Eigen::VectorXd& obs, ActMode mode, Rng& rng) {
  if (obs.size() != p.obs_dim()) throw ValidationError("act: observation dimension mismatch");
  const Eigen::VectorXd mean = p.actor.forward(obs);
  Eigen::VectorXd u = mean;
  if (mode == ActMode::Stochastic) {
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      u(i) += std::exp(p.log_std(i)) * rng.normal();
    }
  }
  ActResult r;
  r.command = command_from_u(p, u);
  r.u = u;
  r.log_prob = squashed_log_prob(u, mean, p.log_std, p.bounds);
  r.value = p.critic.forward(obs)(0);
  return r;
}

BatchActResult act_batch(const GaussianPolicy& p, const Eigen::MatrixXd& obs, ActMode mode,
                         Rng& rng) {
  if (obs.cols() != p.obs_dim()) throw ValidationError("act_batch: observation dimension mismatch");
  const Eigen::Index n = obs.rows();
  BatchActResult r;
  const Eigen::MatrixXd mean = p.actor.forward_batch(obs);
  r.u = mean;
  if (mode == ActMode::Stochastic) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < r.u.cols(); ++j) {
        r.u(i, j) += std::exp(p.log_std(j)) * rng.normal();
      }
    }
  }
  r.log_prob.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r.log_prob(i) = squashed_log_prob(r.u.row(i), mean.row(i), p.log_std, p.bounds);
  }
  r.value = p.critic.forward_batch(obs).col(0);
  return r;
}

control::ActionCommand act_policy_deterministic(const GaussianPolicy& p,
                                                const Eigen::VectorXd& obs) {
  if (obs.size() != p.obs_dim()) {
    throw ValidationError("act_policy_deterministic: observation dimension mismatch");
  }
  return command_from_u(p, p.actor.forward(obs));
}

const char* heuristic_name(HeuristicKind k) {
  switch (k) {
    case HeuristicKind::Hover: return "hover";
    case HeuristicKind::Circular: return "circular";
    case HeuristicKind::Repel: return "repel";
  }
  throw ValidationError("heuristic_name: unknown kind");
}

HeuristicKind heuristic_from_name(const std::string& name) {
  if (name == "hover") return HeuristicKind::Hover;
  if (name == "circular") return HeuristicKind::Circular;
  if (name == "repel") return HeuristicKind::Repel;
  throw ValidationError("unknown heuristic: " + name);
}

void HeuristicSpec::validate() const {
  if (hover_gain <= 0.0 || track_gain <= 0.0) {
    throw ValidationError("HeuristicSpec: gains must be positive");
  }
  if (circle_radius_m <= 0.0 || circle_period_s <= 0.0) {
    throw ValidationError("HeuristicSpec: circle geometry must be positive");
  }
  if (repel_speed_mps <= 0.0 || repel_speed_mps > control::kMaxHorizontalSpeed) {
    throw ValidationError("HeuristicSpec: repel speed outside (0, 15]");
  }
  if (wall_field_margin_m <= 0.0) {
    throw ValidationError("HeuristicSpec: wall field margin must be positive");
  }
}

HeuristicAgent::HeuristicAgent(const HeuristicSpec& spec) : spec_(spec) {
  spec_.validate();
  hold_point_ = spec_.hover_point;
}

void HeuristicAgent::reset(const quad::QuadState& own) {
  hold_point_ = (spec_.kind == HeuristicKind::Hover && spec_.hold_initial) ? own.position_m
                                                                           : spec_.hover_point;
}

namespace {

Vec3 clamp_velocity(Vec3 v) {
  v.x() = std::clamp(v.x(), -control::kMaxHorizontalSpeed, control::kMaxHorizontalSpeed);
  v.y() = std::clamp(v.y(), -control::kMaxHorizontalSpeed, control::kMaxHorizontalSpeed);
  v.z() = std::clamp(v.z(), -control::kMaxVerticalSpeed, control::kMaxVerticalSpeed);
  return v;
}

}  // namespace

control::ActionCommand HeuristicAgent::act(const quad::QuadState& own,
                                           const quad::QuadState& opponent,
                                           const env::ArenaSpec& arena) const {
  Vec3 v = Vec3::Zero();
  switch (spec_.kind) {
    case HeuristicKind::Hover:
      v = spec_.hover_gain * (hold_point_ - own.position_m);
      break;
    case HeuristicKind::Circular: {
      Vec3 radial = own.position_m - spec_.circle_center;
      radial.z() = 0.0;
      const double phi = radial.norm() < 1e-9 ? 0.0 : std::atan2(radial.y(), radial.x());
      const Vec3 target = spec_.circle_center +
                          spec_.circle_radius_m * Vec3(std::cos(phi), std::sin(phi), 0.0);
      const double omega = 2.0 * M_PI / spec_.circle_period_s;
      const Vec3 feedforward =
          omega * spec_.circle_radius_m * Vec3(-std::sin(phi), std::cos(phi), 0.0);
      v = feedforward + spec_.track_gain * (target - own.position_m);
      break;
    }
    case HeuristicKind::Repel: {
      Vec3 away = own.position_m - opponent.position_m;
      if (away.norm() < 1e-9) away = Vec3(1.0, 0.0, 0.0);
      Vec3 dir = away.normalized();
      // Bend inward when hugging a wall so full speed does not carry us out.
      const double m = spec_.wall_field_margin_m;
      const Vec3 he = arena.half_extents_m;
      Vec3 push = Vec3::Zero();
      const Vec3& p = own.position_m;
      if (p.x() > he.x() - m) push.x() -= (p.x() - (he.x() - m)) / m;
      if (p.x() < -he.x() + m) push.x() += ((-he.x() + m) - p.x()) / m;
      if (p.y() > he.y() - m) push.y() -= (p.y() - (he.y() - m)) / m;
      if (p.y() < -he.y() + m) push.y() += ((-he.y() + m) - p.y()) / m;
      if (p.z() < m) push.z() += (m - p.z()) / m;
      if (p.z() > 2.0 * he.z() - m) push.z() -= (p.z() - (2.0 * he.z() - m)) / m;
      Vec3 blended = dir + 2.0 * push;
      if (blended.norm() < 1e-9) blended = dir;
      v = spec_.repel_speed_mps * blended.normalized();
      break;
    }
  }
  return control::ActionCommand::velocity(clamp_velocity(v));
}

void PolicyRecord::validate() const {
  if (id.empty()) throw ValidationError("PolicyRecord: id must be nonempty");
  if (stage_index < 0) throw ValidationError("PolicyRecord: stage_index must be >= 0");
  if (is_heuristic()) {
    if (!heuristic || net) throw ValidationError("PolicyRecord: heuristic record needs a spec");
    heuristic->validate();
  } else {
    if (!net || heuristic) throw ValidationError("PolicyRecord: net record needs weights");
    net->validate();
    if (net->role != role || net->modality != modality) {
      throw ValidationError("PolicyRecord: net role/modality disagree with the record");
    }
  }
}

PolicyRecord make_net_record(std::string id, const GaussianPolicy& net, int stage_index,
                             std::map<std::string, std::string> metadata) {
  PolicyRecord rec;
  rec.id = std::move(id);
  rec.role = net.role;
  rec.modality = net.modality;
  rec.stage_index = stage_index;
  rec.net = net;
  rec.net->quantize_f32();
  rec.metadata = std::move(metadata);
  rec.validate();
  return rec;
}

PolicyRecord make_heuristic_record(std::string id, env::Role role, const HeuristicSpec& spec,
                                   int stage_index) {
  PolicyRecord rec;
  rec.id = std::move(id);
  rec.role = role;
  rec.modality = Modality::Heuristic;
  rec.stage_index = stage_index;
  rec.heuristic = spec;
  rec.validate();
  return rec;
}

void RecordActor::bind(const PolicyRecord* record, const quad::QuadState& own_spawn) {
  if (record == nullptr) throw ValidationError("RecordActor: null record");
  record_ = record;
  if (record_->is_heuristic()) {
    heuristic_ = HeuristicAgent(*record_->heuristic);
    heuristic_.reset(own_spawn);
  }
}

control::ActionCommand RecordActor::act(const env::Episode& episode, env::Role role) {
  if (record_ == nullptr) throw ValidationError("RecordActor: act before bind");
  if (record_->role != role) {
    throw ValidationError("RecordActor: record '" + record_->id + "' plays the other role");
  }
  const env::Role opp_role = role == env::Role::Pursuer ? env::Role::Evader : env::Role::Pursuer;
  if (record_->is_heuristic()) {
    return heuristic_.act(episode.state(role), episode.state(opp_role),
                          episode.config().arena);
  }
  return act_policy_deterministic(*record_->net, episode.observation(role));
}

}  // namespace pelab::policy
