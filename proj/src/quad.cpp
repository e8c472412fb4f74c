#include "pelab/quad.hpp"

#include <cmath>
#include <string>

namespace pelab::quad {

void QuadParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError(std::string("quad params: ") + name + " must be positive and finite");
    }
  };
  positive(mass_kg, "mass_kg");
  positive(arm_length_m, "arm_length_m");
  positive(rotor_force_const, "rotor_force_const");
  positive(rotor_moment_const, "rotor_moment_const");
  positive(rotor_max_speed_radps, "rotor_max_speed_radps");
  positive(gravity_mps2, "gravity_mps2");
  if (!(drag_coeff >= 0.0) || !std::isfinite(drag_coeff)) {
    throw ValidationError("quad params: drag_coeff must be >= 0 and finite");
  }
  for (int i = 0; i < 3; ++i) {
    if (!(inertia_diag(i) > 0.0) || !std::isfinite(inertia_diag(i))) {
      throw ValidationError("quad params: inertia_diag entries must be positive and finite");
    }
  }
  for (double d : rotor_spin_dirs) {
    if (d != 1.0 && d != -1.0) {
      throw ValidationError("quad params: rotor_spin_dirs entries must be +1 or -1");
    }
  }
  double spin_sum = rotor_spin_dirs[0] + rotor_spin_dirs[1] + rotor_spin_dirs[2] + rotor_spin_dirs[3];
  if (spin_sum != 0.0) {
    throw ValidationError("quad params: rotor spin directions must cancel (two of each sign)");
  }
  for (double a : rotor_angles_rad) {
    if (!std::isfinite(a)) {
      throw ValidationError("quad params: rotor_angles_rad entries must be finite");
    }
  }
}

StateDerivative derivatives(const QuadState& state, const RotorSpeeds& rotors,
                            const QuadParams& params, const Vec3& external_force_n) {
  if (!state.is_finite()) {
    throw NumericError("quad derivatives: non-finite state");
  }
  if (!rotors.speeds_radps.allFinite()) {
    throw NumericError("quad derivatives: non-finite rotor speeds");
  }
  if (!external_force_n.allFinite()) {
    throw NumericError("quad derivatives: non-finite external force");
  }

  const double kT = params.rotor_force_const;
  const double kM = params.rotor_moment_const;

  double total_thrust = 0.0;
  Vec3 torque = Vec3::Zero();
  for (int i = 0; i < 4; ++i) {
    const double w = rotors.speeds_radps(i);
    const double thrust = kT * w * w;
    total_thrust += thrust;
    // Thrust acts along body z at the rotor position; the aerodynamic reaction
    // torque acts about body z with the rotor's spin sign.
    torque += params.rotor_position(i).cross(Vec3(0.0, 0.0, thrust));
    torque.z() += params.rotor_spin_dirs[static_cast<size_t>(i)] * kM * w * w;
  }

  const Vec3 gravity(0.0, 0.0, -params.gravity_mps2);
  const Vec3 thrust_world = state.rotation * Vec3(0.0, 0.0, total_thrust);
  const Vec3 drag = -params.drag_coeff * params.mass_kg * state.velocity_mps;

  StateDerivative d;
  d.d_position = state.velocity_mps;
  d.d_velocity = gravity + (thrust_world + drag + external_force_n) / params.mass_kg;
  d.d_rotation = state.rotation * skew(state.body_rates_radps);
  const Vec3 i_diag = params.inertia_diag;
  const Vec3 ang_mom = i_diag.cwiseProduct(state.body_rates_radps);
  const Vec3 ang = -state.body_rates_radps.cross(ang_mom) + torque;
  d.d_body_rates = ang.cwiseQuotient(i_diag);
  return d;
}

namespace {

QuadState add_scaled(const QuadState& s, const StateDerivative& d, double h) {
  QuadState out;
  out.position_m = s.position_m + h * d.d_position;
  out.velocity_mps = s.velocity_mps + h * d.d_velocity;
  out.rotation = s.rotation + h * d.d_rotation;
  out.body_rates_radps = s.body_rates_radps + h * d.d_body_rates;
  return out;
}

void check_finite(const QuadState& s) {
  if (!s.position_m.allFinite()) throw NumericError("quad step: non-finite position");
  if (!s.velocity_mps.allFinite()) throw NumericError("quad step: non-finite velocity");
  if (!s.rotation.allFinite()) throw NumericError("quad step: non-finite rotation");
  if (!s.body_rates_radps.allFinite()) throw NumericError("quad step: non-finite body rates");
}

}  // namespace

QuadState step(const QuadState& state, const RotorSpeeds& rotors,
               const QuadParams& params, double dt_s, const Vec3& external_force_n) {
  if (!(dt_s > 0.0) || !std::isfinite(dt_s)) {
    throw ValidationError("quad step: dt_s must be positive and finite");
  }
  for (int i = 0; i < 4; ++i) {
    const double w = rotors.speeds_radps(i);
    if (!(w >= 0.0) || w > params.rotor_max_speed_radps + 1e-9) {
      throw ValidationError("quad step: rotor speed out of [0, max] range");
    }
  }

  const StateDerivative k1 = derivatives(state, rotors, params, external_force_n);
  const StateDerivative k2 = derivatives(add_scaled(state, k1, 0.5 * dt_s), rotors, params, external_force_n);
  const StateDerivative k3 = derivatives(add_scaled(state, k2, 0.5 * dt_s), rotors, params, external_force_n);
  const StateDerivative k4 = derivatives(add_scaled(state, k3, dt_s), rotors, params, external_force_n);

  QuadState out;
  const double h6 = dt_s / 6.0;
  out.position_m = state.position_m + h6 * (k1.d_position + 2.0 * k2.d_position + 2.0 * k3.d_position + k4.d_position);
  out.velocity_mps = state.velocity_mps + h6 * (k1.d_velocity + 2.0 * k2.d_velocity + 2.0 * k3.d_velocity + k4.d_velocity);
  out.rotation = state.rotation + h6 * (k1.d_rotation + 2.0 * k2.d_rotation + 2.0 * k3.d_rotation + k4.d_rotation);
  out.body_rates_radps = state.body_rates_radps +
      h6 * (k1.d_body_rates + 2.0 * k2.d_body_rates + 2.0 * k3.d_body_rates + k4.d_body_rates);

  check_finite(out);
  out.rotation = orthonormalized(out.rotation);
  return out;
}

double hover_rotor_speed(const QuadParams& params) {
  params.validate();
  const double w = std::sqrt(params.mass_kg * params.gravity_mps2 / (4.0 * params.rotor_force_const));
  if (w > params.rotor_max_speed_radps) {
    throw ValidationError("hover_rotor_speed: vehicle cannot hover within the rotor speed limit");
  }
  return w;
}

Vec3 DownwashModel::force(const QuadState& receiver, const QuadState& source,
                          const QuadParams& receiver_params) const {
  if (!enabled) return Vec3::Zero();
  const Vec3 delta = receiver.position_m - source.position_m;
  const double depth = -delta.z();  // positive when the receiver is below
  if (depth <= 0.0 || depth >= depth_m) return Vec3::Zero();
  const double radius = radius_factor * receiver_params.arm_length_m;
  if (delta.head<2>().norm() > radius) return Vec3::Zero();
  const double mag = strength * receiver_params.mass_kg * receiver_params.gravity_mps2 *
                     (1.0 - depth / depth_m);
  return Vec3(0.0, 0.0, -mag);
}

Vec3 downwash_force(const QuadState& receiver, const QuadState& source,
                    const QuadParams& receiver_params) {
  return DownwashModel{}.force(receiver, source, receiver_params);
}

}  // namespace pelab::quad
