#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pelab/control.hpp"

#include <cmath>

using namespace pelab;
using namespace pelab::control;
using namespace pelab::quad;

namespace {

// Forward model of the allocation, used as the independent oracle.
void achieved_wrench(const RotorSpeeds& r, const QuadParams& p, double* thrust, Vec3* torque) {
  *thrust = 0.0;
  *torque = Vec3::Zero();
  for (int i = 0; i < 4; ++i) {
    const double w2 = r.speeds_radps(i) * r.speeds_radps(i);
    const double t = p.rotor_force_const * w2;
    *thrust += t;
    *torque += p.rotor_position(i).cross(Vec3(0, 0, t));
    torque->z() += p.rotor_spin_dirs[static_cast<size_t>(i)] * p.rotor_moment_const * w2;
  }
}

}  // namespace

TEST_CASE("mix at hover: zero torque and weight thrust gives hover rotor speeds") {
  QuadParams p;
  const double w_hover = hover_rotor_speed(p);
  MixResult m = mix(Vec3::Zero(), p.mass_kg * p.gravity_mps2, p);
  CHECK_FALSE(m.saturated);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(m.rotors.speeds_radps(i) - w_hover) < 1e-6);
  }
}

TEST_CASE("mix round trip reproduces feasible requests") {
  QuadParams p;
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    const double thrust = 0.5 * p.max_total_thrust_n();
    const Vec3 torque(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.05, 0.05));
    MixResult m = mix(torque, thrust, p);
    REQUIRE_FALSE(m.saturated);
    double t_ach;
    Vec3 tau_ach;
    achieved_wrench(m.rotors, p, &t_ach, &tau_ach);
    CHECK(std::abs(t_ach - thrust) / thrust < 1e-9);
    CHECK((tau_ach - torque).norm() < 1e-9 * std::max(1.0, torque.norm()));
  }
}

TEST_CASE("mix saturation preserves thrust and scales torque uniformly") {
  QuadParams p;
  const double thrust = p.mass_kg * p.gravity_mps2;
  const Vec3 torque(2.0, 0.0, 0.0);  // far beyond the roll authority at hover thrust
  MixResult m = mix(torque, thrust, p);
  CHECK(m.saturated);
  double t_ach;
  Vec3 tau_ach;
  achieved_wrench(m.rotors, p, &t_ach, &tau_ach);
  CHECK(std::abs(t_ach - thrust) / thrust < 1e-9);
  CHECK(tau_ach.x() > 0.0);
  CHECK(tau_ach.x() < torque.x());
  CHECK(std::abs(tau_ach.y()) < 1e-9);
  CHECK(std::abs(tau_ach.z()) < 1e-9);
  // Rotor limits hold.
  for (int i = 0; i < 4; ++i) {
    CHECK(m.rotors.speeds_radps(i) >= 0.0);
    CHECK(m.rotors.speeds_radps(i) <= p.rotor_max_speed_radps);
  }
}

TEST_CASE("mix clamps an over-limit thrust request") {
  QuadParams p;
  MixResult m = mix(Vec3::Zero(), 2.0 * p.max_total_thrust_n(), p);
  CHECK(m.saturated);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.rotors.speeds_radps(i) == doctest::Approx(p.rotor_max_speed_radps).epsilon(1e-12));
  }
}

TEST_CASE("rate tracking at equilibrium returns hover speeds") {
  QuadParams p;
  RatePidGains g;
  RatePidState pid;
  QuadState s;  // zero rates
  RotorSpeeds r = track_body_rates(Vec3::Zero(), p.gravity_mps2, s, g, p, pid, 0.016);
  const double w_hover = hover_rotor_speed(p);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(r.speeds_radps(i) - w_hover) < 1e-6);
  }
}

TEST_CASE("closed-loop roll step crosses 90% of the command within 0.2 s") {
  QuadParams p;
  RatePidGains g;
  RatePidState pid;
  QuadState s;
  const Vec3 cmd(5.0, 0.0, 0.0);
  const double dt = 0.016;
  double t_cross = -1.0;
  for (int i = 0; i < 60; ++i) {
    RotorSpeeds r = track_body_rates(cmd, p.gravity_mps2, s, g, p, pid, dt);
    s = step(s, r, p, dt);
    if (t_cross < 0.0 && s.body_rates_radps.x() >= 4.5) t_cross = (i + 1) * dt;
  }
  REQUIRE(t_cross > 0.0);
  CHECK(t_cross <= 0.2);
  // The commanded axis dominates the motion.
  CHECK(std::abs(s.body_rates_radps.y()) < 1.0);
  CHECK(std::abs(s.body_rates_radps.z()) < 1.0);
}

TEST_CASE("integral term is clamped under persistent error") {
  QuadParams p;
  RatePidGains g;
  RatePidState pid;
  QuadState s;  // rates stay zero; keep integrating a constant error
  for (int i = 0; i < 10000; ++i) {
    track_body_rates(Vec3(5.0, 5.0, 3.0), p.gravity_mps2, s, g, p, pid, 0.016);
  }
  CHECK(pid.integral_torque_nm.x() == doctest::Approx(g.integral_limit_nm.x()));
  CHECK(pid.integral_torque_nm.y() == doctest::Approx(g.integral_limit_nm.y()));
  CHECK(pid.integral_torque_nm.z() == doctest::Approx(g.integral_limit_nm.z()));
}

TEST_CASE("velocity controller holds hover when the command matches the velocity") {
  QuadParams p;
  QuadState s;
  ActionCommand c = velocity_controller(Vec3::Zero(), s, p);
  CHECK(c.kind == CommandKind::BodyRate);
  CHECK(c.body_rates_des_radps.norm() < 1e-9);
  CHECK(c.thrust_norm_mps2 == doctest::Approx(p.gravity_mps2).epsilon(1e-9));
}

TEST_CASE("velocity controller pitches toward a forward command and tracks it") {
  QuadParams p;
  RatePidGains g;
  RatePidState pid;
  QuadState s;
  const Vec3 v_des(15.0, 0.0, 0.0);

  ActionCommand first = velocity_controller(v_des, s, p);
  // Tilting the thrust axis toward +x is a positive rotation about body y in
  // this right-handed x-forward / z-up frame.
  CHECK(first.body_rates_des_radps.y() > 0.0);
  CHECK(std::abs(first.body_rates_des_radps.x()) < 1e-9);

  const double dt = 0.016;
  double best = 0.0;
  for (int i = 0; i < 125; ++i) {  // 2 s
    ActionCommand c = velocity_controller(v_des, s, p);
    validate(c, p);
    RotorSpeeds r = track_body_rates(c.body_rates_des_radps, c.thrust_norm_mps2, s, g, p, pid, dt);
    s = step(s, r, p, dt);
    best = std::max(best, s.velocity_mps.x());
  }
  CHECK(best >= 10.0);
}

TEST_CASE("velocity controller caps the commanded speed norm") {
  QuadParams p;
  QuadState s;
  // A box-feasible command whose norm exceeds the cap must behave like its
  // capped projection.
  const Vec3 big(15.0, 15.0, 5.0);
  const Vec3 capped = big * (15.0 / big.norm());
  ActionCommand a = velocity_controller(big, s, p);
  ActionCommand b = velocity_controller(capped, s, p);
  CHECK((a.body_rates_des_radps - b.body_rates_des_radps).norm() < 1e-9);
  CHECK(a.thrust_norm_mps2 == doctest::Approx(b.thrust_norm_mps2).epsilon(1e-9));
}

TEST_CASE("velocity controller handles a degenerate force demand") {
  QuadParams p;
  QuadState s;
  // Demand exactly free fall: kv (v_des - v) = -g z.
  const Vec3 v_des(0.0, 0.0, -p.gravity_mps2 / VelocityGains{}.kv);
  ActionCommand c = velocity_controller(v_des, s, p);
  CHECK(c.body_rates_des_radps.norm() < 1e-6);
  CHECK(c.thrust_norm_mps2 < 1e-6);
}

TEST_CASE("action validation enforces per-axis bounds") {
  QuadParams p;
  CHECK_NOTHROW(validate(ActionCommand::body_rate(Vec3(15.0, -15.0, 5.0), 0.0), p));
  CHECK_NOTHROW(validate(ActionCommand::body_rate(Vec3::Zero(), p.max_thrust_norm()), p));
  CHECK_THROWS_AS(validate(ActionCommand::body_rate(Vec3(15.1, 0, 0), 1.0), p), ValidationError);
  CHECK_THROWS_AS(validate(ActionCommand::body_rate(Vec3(0, 0, 5.1), 1.0), p), ValidationError);
  CHECK_THROWS_AS(validate(ActionCommand::body_rate(Vec3::Zero(), -0.1), p), ValidationError);
  CHECK_THROWS_AS(validate(ActionCommand::body_rate(Vec3::Zero(), 40.0), p), ValidationError);
  CHECK_NOTHROW(validate(ActionCommand::velocity(Vec3(15.0, 15.0, -5.0)), p));
  CHECK_THROWS_AS(validate(ActionCommand::velocity(Vec3(15.1, 0, 0)), p), ValidationError);
  CHECK_THROWS_AS(validate(ActionCommand::velocity(Vec3(0, 0, -5.1)), p), ValidationError);
}
