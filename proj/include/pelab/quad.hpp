#pragma once

#include "pelab/common.hpp"

#include <array>
#include <functional>

namespace pelab::quad {

// Rigid-body and rotor constants for a plus-configuration quadrotor.
// Defaults correspond to a ~0.7 kg research vehicle.
struct QuadParams {
  double mass_kg = 0.716;
  Vec3 inertia_diag = Vec3(0.007, 0.007, 0.012);  // kg m^2, body axes
  double arm_length_m = 0.17;
  double drag_coeff = 0.2;  // linear drag, 1/s (force = -c_d * m * v)
  double rotor_force_const = 8.54858e-6;    // k_T, N s^2/rad^2
  double rotor_moment_const = 1.3677729e-7; // k_M, N m s^2/rad^2
  double rotor_max_speed_radps = 838.0;
  std::array<double, 4> rotor_angles_rad = {0.0, M_PI_2, M_PI, -M_PI_2};
  std::array<double, 4> rotor_spin_dirs = {1.0, -1.0, 1.0, -1.0};
  double gravity_mps2 = 9.81;

  void validate() const;  // throws ValidationError on non-physical values

  Vec3 rotor_position(int i) const {
    return Vec3(arm_length_m * std::cos(rotor_angles_rad[static_cast<size_t>(i)]),
                arm_length_m * std::sin(rotor_angles_rad[static_cast<size_t>(i)]), 0.0);
  }

  double max_total_thrust_n() const {
    return 4.0 * rotor_force_const * rotor_max_speed_radps * rotor_max_speed_radps;
  }

  // Mass-normalized thrust ceiling, m/s^2. This is the upper bound of the
  // thrust channel in body-rate commands.
  double max_thrust_norm() const { return max_total_thrust_n() / mass_kg; }
};

struct QuadState {
  Vec3 position_m = Vec3::Zero();
  Vec3 velocity_mps = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // body -> world
  Vec3 body_rates_radps = Vec3::Zero();

  bool is_finite() const {
    return position_m.allFinite() && velocity_mps.allFinite() &&
           rotation.allFinite() && body_rates_radps.allFinite();
  }
};

struct RotorSpeeds {
  Vec4 speeds_radps = Vec4::Zero();
};

struct StateDerivative {
  Vec3 d_position;
  Vec3 d_velocity;
  Mat3 d_rotation;
  Vec3 d_body_rates;
};

// Continuous-time rigid-body derivative under rotor thrusts, gravity, linear
// drag and an optional external world-frame force (e.g. downwash).
StateDerivative derivatives(const QuadState& state, const RotorSpeeds& rotors,
                            const QuadParams& params,
                            const Vec3& external_force_n = Vec3::Zero());

// One RK4 step with held rotor speeds; the rotation is re-orthonormalized
// afterwards. Throws NumericError naming the offending field if the result is
// not finite, ValidationError if dt <= 0 or rotor speeds are out of range.
QuadState step(const QuadState& state, const RotorSpeeds& rotors,
               const QuadParams& params, double dt_s,
               const Vec3& external_force_n = Vec3::Zero());

// Per-rotor speed that exactly balances gravity; throws ValidationError when
// the vehicle cannot hover within the rotor speed limit.
double hover_rotor_speed(const QuadParams& params);

// Cylinder stand-in for the wake below a hovering vehicle: inside a cylinder
// of radius `radius_factor * arm_length` extending `depth_m` below the source,
// the receiver feels a downward force that fades linearly with depth.
struct DownwashModel {
  bool enabled = true;
  double strength = 0.3;       // fraction of receiver weight at zero depth
  double radius_factor = 2.0;
  double depth_m = 2.0;

  Vec3 force(const QuadState& receiver, const QuadState& source,
             const QuadParams& receiver_params) const;
};

// World-frame downwash force on `receiver` from `source` under the default model.
Vec3 downwash_force(const QuadState& receiver, const QuadState& source,
                    const QuadParams& receiver_params);

// Signature used by the environment so the wake model stays pluggable.
using DownwashFn = std::function<Vec3(const QuadState& receiver, const QuadState& source,
                                      const QuadParams& receiver_params)>;

}  // namespace pelab::quad
