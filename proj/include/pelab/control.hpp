#pragma once

#include "pelab/common.hpp"
#include "pelab/quad.hpp"

namespace pelab::control {

enum class CommandKind { BodyRate, Velocity };

// Per-axis command limits. Body-rate commands bound roll/pitch rates to
// 15 rad/s, yaw rate to 5 rad/s and mass-normalized thrust to the rotor
// ceiling; velocity commands bound horizontal speed to 15 m/s per axis and
// vertical speed to 5 m/s.
inline constexpr double kMaxRollPitchRate = 15.0;
inline constexpr double kMaxYawRate = 5.0;
inline constexpr double kMaxHorizontalSpeed = 15.0;
inline constexpr double kMaxVerticalSpeed = 5.0;

struct ActionCommand {
  CommandKind kind = CommandKind::BodyRate;
  Vec3 body_rates_des_radps = Vec3::Zero();
  double thrust_norm_mps2 = 0.0;
  Vec3 velocity_des_mps = Vec3::Zero();

  static ActionCommand body_rate(const Vec3& rates, double thrust_norm) {
    ActionCommand c;
    c.kind = CommandKind::BodyRate;
    c.body_rates_des_radps = rates;
    c.thrust_norm_mps2 = thrust_norm;
    return c;
  }

  static ActionCommand velocity(const Vec3& v_des) {
    ActionCommand c;
    c.kind = CommandKind::Velocity;
    c.velocity_des_mps = v_des;
    return c;
  }
};

// Throws ValidationError if the command violates its per-axis bounds.
void validate(const ActionCommand& cmd, const quad::QuadParams& params);

struct RatePidGains {
  Vec3 kp = Vec3(0.3, 0.3, 0.15);
  Vec3 ki = Vec3(0.05, 0.05, 0.02);
  Vec3 kd = Vec3(0.003, 0.003, 0.001);
  Vec3 integral_limit_nm = Vec3(0.5, 0.5, 0.2);  // clamp on the integral torque term

  void validate() const;
};

// Controller memory carried across steps within one episode.
struct RatePidState {
  Vec3 integral_torque_nm = Vec3::Zero();
  Vec3 prev_error_radps = Vec3::Zero();
  bool has_prev_error = false;

  void reset() { *this = RatePidState{}; }
};

struct MixResult {
  quad::RotorSpeeds rotors;
  bool saturated = false;
};

// Solves the 4x4 allocation [thrust; torque] -> rotor speeds squared. When the
// request is infeasible the torque demand is scaled down uniformly while the
// (clamped) total thrust is preserved.
MixResult mix(const Vec3& torque_nm, double total_thrust_n, const quad::QuadParams& params);

// One body-rate PID step followed by allocation. `thrust_norm` is the
// mass-normalized collective thrust in m/s^2.
quad::RotorSpeeds track_body_rates(const Vec3& body_rates_des, double thrust_norm,
                                   const quad::QuadState& state, const RatePidGains& gains,
                                   const quad::QuadParams& params, RatePidState& pid,
                                   double dt_s, bool* saturated = nullptr);

struct VelocityGains {
  double kv = 3.0;               // velocity error -> specific force
  double k_att = 8.0;            // attitude error -> body rate
  double speed_cap_mps = 15.0;   // cap on the commanded speed norm

  void validate() const;
};

// Cascaded velocity tracking: velocity error plus gravity compensation defines
// a desired specific force; its direction gives the target attitude (with yaw
// held), the attitude error maps to body rates and the projection on the
// current body z gives the collective thrust. The returned command always
// satisfies the body-rate bounds.
ActionCommand velocity_controller(const Vec3& velocity_des_mps, const quad::QuadState& state,
                                  const quad::QuadParams& params,
                                  const VelocityGains& gains = VelocityGains{});

}  // namespace pelab::control
