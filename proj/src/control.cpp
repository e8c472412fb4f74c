#include "pelab/control.hpp"

#include <algorithm>
#include <cmath>

namespace pelab::control {

void validate(const ActionCommand& cmd, const quad::QuadParams& params) {
  if (cmd.kind == CommandKind::BodyRate) {
    const Vec3& w = cmd.body_rates_des_radps;
    if (!w.allFinite() || !std::isfinite(cmd.thrust_norm_mps2)) {
      throw ValidationError("action: non-finite body-rate command");
    }
    if (std::abs(w.x()) > kMaxRollPitchRate || std::abs(w.y()) > kMaxRollPitchRate ||
        std::abs(w.z()) > kMaxYawRate) {
      throw ValidationError("action: body-rate command out of bounds");
    }
    if (cmd.thrust_norm_mps2 < 0.0 || cmd.thrust_norm_mps2 > params.max_thrust_norm() + 1e-9) {
      throw ValidationError("action: thrust command out of [0, max] range");
    }
  } else {
    const Vec3& v = cmd.velocity_des_mps;
    if (!v.allFinite()) {
      throw ValidationError("action: non-finite velocity command");
    }
    if (std::abs(v.x()) > kMaxHorizontalSpeed || std::abs(v.y()) > kMaxHorizontalSpeed ||
        std::abs(v.z()) > kMaxVerticalSpeed) {
      throw ValidationError("action: velocity command out of bounds");
    }
  }
}

void RatePidGains::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (!(kp(i) >= 0.0) || !(ki(i) >= 0.0) || !(kd(i) >= 0.0) || !(integral_limit_nm(i) >= 0.0)) {
      throw ValidationError("rate pid gains must be non-negative");
    }
  }
  if (!kp.allFinite() || !ki.allFinite() || !kd.allFinite() || !integral_limit_nm.allFinite()) {
    throw ValidationError("rate pid gains must be finite");
  }
}

namespace {

// Allocation matrix mapping rotor speeds squared to [thrust; torque].
Mat4 allocation_matrix(const quad::QuadParams& p) {
  Mat4 a;
  for (int i = 0; i < 4; ++i) {
    const double kt = p.rotor_force_const;
    const Vec3 r = p.rotor_position(i);
    a(0, i) = kt;
    a(1, i) = kt * r.y();   // roll torque from thrust offset
    a(2, i) = -kt * r.x();  // pitch torque
    a(3, i) = p.rotor_spin_dirs[static_cast<size_t>(i)] * p.rotor_moment_const;
  }
  return a;
}

}  // namespace

MixResult mix(const Vec3& torque_nm, double total_thrust_n, const quad::QuadParams& params) {
  if (!torque_nm.allFinite() || !std::isfinite(total_thrust_n)) {
    throw NumericError("mix: non-finite request");
  }
  const double w_max_sq = params.rotor_max_speed_radps * params.rotor_max_speed_radps;
  const double thrust_max = params.max_total_thrust_n();

  MixResult out;
  double thrust = std::clamp(total_thrust_n, 0.0, thrust_max);
  if (thrust != total_thrust_n) out.saturated = true;

  const Mat4 a = allocation_matrix(params);
  const Eigen::PartialPivLU<Mat4> lu(a);
  const Vec4 x_thrust = lu.solve(Vec4(thrust, 0.0, 0.0, 0.0));
  const Vec4 x_torque = lu.solve(Vec4(0.0, torque_nm.x(), torque_nm.y(), torque_nm.z()));

  // Thrust-priority saturation: find the largest gamma in [0, 1] such that
  // x_thrust + gamma * x_torque stays within [0, w_max^2] per rotor. The
  // thrust-only solution is feasible by construction, so gamma = 0 always is.
  double gamma = 1.0;
  for (int i = 0; i < 4; ++i) {
    const double base = x_thrust(i);
    const double delta = x_torque(i);
    if (delta > 0.0) {
      gamma = std::min(gamma, (w_max_sq - base) / delta);
    } else if (delta < 0.0) {
      gamma = std::min(gamma, (0.0 - base) / delta);
    }
  }
  gamma = std::clamp(gamma, 0.0, 1.0);
  if (gamma < 1.0) out.saturated = true;

  for (int i = 0; i < 4; ++i) {
    const double sq = std::max(0.0, x_thrust(i) + gamma * x_torque(i));
    out.rotors.speeds_radps(i) = std::min(std::sqrt(sq), params.rotor_max_speed_radps);
  }
  return out;
}

quad::RotorSpeeds track_body_rates(const Vec3& body_rates_des, double thrust_norm,
                                   const quad::QuadState& state, const RatePidGains& gains,
                                   const quad::QuadParams& params, RatePidState& pid,
                                   double dt_s, bool* saturated) {
  if (!(dt_s > 0.0)) throw ValidationError("track_body_rates: dt_s must be positive");
  if (!body_rates_des.allFinite() || !std::isfinite(thrust_norm)) {
    throw NumericError("track_body_rates: non-finite command");
  }

  const Vec3 error = body_rates_des - state.body_rates_radps;

  pid.integral_torque_nm += gains.ki.cwiseProduct(error) * dt_s;
  pid.integral_torque_nm = pid.integral_torque_nm.cwiseMax(-gains.integral_limit_nm)
                               .cwiseMin(gains.integral_limit_nm);

  Vec3 derivative = Vec3::Zero();
  if (pid.has_prev_error) derivative = (error - pid.prev_error_radps) / dt_s;
  pid.prev_error_radps = error;
  pid.has_prev_error = true;

  const Vec3 torque = gains.kp.cwiseProduct(error) + pid.integral_torque_nm +
                      gains.kd.cwiseProduct(derivative);

  const double thrust_n = std::clamp(thrust_norm, 0.0, params.max_thrust_norm()) * params.mass_kg;
  MixResult mixed = mix(torque, thrust_n, params);
  if (saturated) *saturated = mixed.saturated;
  return mixed.rotors;
}

void VelocityGains::validate() const {
  if (!(kv > 0.0) || !(k_att > 0.0) || !(speed_cap_mps > 0.0)) {
    throw ValidationError("velocity gains must be positive");
  }
}

ActionCommand velocity_controller(const Vec3& velocity_des_mps, const quad::QuadState& state,
                                  const quad::QuadParams& params, const VelocityGains& gains) {
  if (!velocity_des_mps.allFinite()) throw NumericError("velocity_controller: non-finite command");

  Vec3 v_des = velocity_des_mps;
  const double speed = v_des.norm();
  if (speed > gains.speed_cap_mps) v_des *= gains.speed_cap_mps / speed;

  // Desired specific force: velocity error feedback plus gravity compensation.
  const Vec3 f_des = gains.kv * (v_des - state.velocity_mps) + Vec3(0.0, 0.0, params.gravity_mps2);

  Vec3 z_des(0.0, 0.0, 1.0);
  if (f_des.norm() > 1e-6) z_des = f_des.normalized();

  // Hold the current yaw while tilting.
  const double yaw = std::atan2(state.rotation(1, 0), state.rotation(0, 0));
  const Vec3 x_c(std::cos(yaw), std::sin(yaw), 0.0);
  Vec3 y_des = z_des.cross(x_c);
  if (y_des.norm() < 1e-6) y_des = z_des.cross(Vec3(-std::sin(yaw), std::cos(yaw), 0.0));
  y_des.normalize();
  const Vec3 x_des = y_des.cross(z_des);

  Mat3 r_des;
  r_des.col(0) = x_des;
  r_des.col(1) = y_des;
  r_des.col(2) = z_des;

  // Attitude error in the body frame (vee of the skew part), mapped to rates.
  const Mat3 e_mat = r_des.transpose() * state.rotation - state.rotation.transpose() * r_des;
  const Vec3 e_r(0.5 * e_mat(2, 1), 0.5 * e_mat(0, 2), 0.5 * e_mat(1, 0));
  Vec3 rates = -gains.k_att * e_r;
  rates.x() = std::clamp(rates.x(), -kMaxRollPitchRate, kMaxRollPitchRate);
  rates.y() = std::clamp(rates.y(), -kMaxRollPitchRate, kMaxRollPitchRate);
  rates.z() = std::clamp(rates.z(), -kMaxYawRate, kMaxYawRate);

  const double thrust = std::clamp(f_des.dot(state.rotation.col(2)), 0.0, params.max_thrust_norm());
  return ActionCommand::body_rate(rates, thrust);
}

}  // namespace pelab::control
