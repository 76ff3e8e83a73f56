#pragma once

#include <string>
#include <vector>

#include "dynaflow/autodiff.hpp"
#include "dynaflow/tensor.hpp"

namespace dynaflow {

enum class SystemKind { kDoubleIntegrator, kPendulum };

// One-step discrete dynamics description: f, the action set U (box bounds)
// and the control period. Instances are immutable; all step/rollout functions
// are pure.
struct SystemSpec {
  SystemKind kind = SystemKind::kDoubleIntegrator;
  std::string name;
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  double dt = 0.0;
  Tensor action_low, action_high;  // {1, action_dim}
  double mass = 1.0, length = 1.0, gravity = 9.81, damping = 0.0;
  std::vector<bool> angle_dims;     // compared with wrapped difference
  std::vector<bool> velocity_dims;  // may be down-weighted in the loss
};

// Planar point mass: state [px, py, vx, vy], force action, |u| <= 1 per axis,
// semi-implicit Euler, dt = 0.1.
inline SystemSpec make_double_integrator() {
  SystemSpec s;
  s.kind = SystemKind::kDoubleIntegrator;
  s.name = "double_integrator";
  s.state_dim = 4;
  s.action_dim = 2;
  s.dt = 0.1;
  s.action_low = Tensor::row({-1.0, -1.0});
  s.action_high = Tensor::row({1.0, 1.0});
  s.angle_dims = {false, false, false, false};
  s.velocity_dims = {false, false, true, true};
  return s;
}

// Torque-limited pendulum: state [theta, omega] with theta = 0 upright and
// theta = pi hanging, |u| <= 2, semi-implicit Euler, dt = 0.05. The 2 N*m
// limit is far below the m*g*l = 9.81 needed to hold the horizontal, so
// swing-up requires energy pumping.
inline SystemSpec make_pendulum() {
  SystemSpec s;
  s.kind = SystemKind::kPendulum;
  s.name = "pendulum";
  s.state_dim = 2;
  s.action_dim = 1;
  s.dt = 0.05;
  s.action_low = Tensor::row({-2.0});
  s.action_high = Tensor::row({2.0});
  s.mass = 1.0;
  s.length = 1.0;
  s.gravity = 9.81;
  s.damping = 0.05;
  s.angle_dims = {true, false};
  s.velocity_dims = {false, true};
  return s;
}

inline SystemSpec make_system(const std::string& name) {
  if (name == "double_integrator") return make_double_integrator();
  if (name == "pendulum") return make_pendulum();
  throw ValidationError("unknown system: " + name);
}

// Elementwise projection onto the action box.
inline Tensor clamp_action(const SystemSpec& spec, const Tensor& u) {
  return clamp(u, spec.action_low, spec.action_high);
}

namespace detail {

// Integrator body. `u_eff` is the already-clamped (optionally disturbed)
// generalized force, shape [B, action_dim]; `x` is [B, state_dim].
template <class V>
V step_core(const SystemSpec& spec, const V& x, const V& u_eff) {
  const double dt = spec.dt;
  switch (spec.kind) {
    case SystemKind::kDoubleIntegrator: {
      V p = slice(x, 1, 0, 2);
      V v = slice(x, 1, 2, 2);
      V v2 = v + u_eff * dt;
      V p2 = p + v2 * dt;
      return concat(p2, v2, 1);
    }
    case SystemKind::kPendulum: {
      V th = slice(x, 1, 0, 1);
      V om = slice(x, 1, 1, 1);
      const double inv_inertia = 1.0 / (spec.mass * spec.length * spec.length);
      V acc = sin(th) * (spec.gravity / spec.length) +
              (u_eff - om * spec.damping) * inv_inertia;
      V om2 = om + acc * dt;
      V th2 = th + om2 * dt;
      return concat(th2, om2, 1);
    }
  }
  throw ValidationError("step: unknown system kind");
}

}  // namespace detail

// Batched one-step dynamics: x [B, d_x], u [B, d_u] -> [B, d_x]. Actions are
// clamped to the box inside the step, so out-of-range inputs behave exactly
// like their projections.
template <class V>
V step_rows(const SystemSpec& spec, const V& x, const V& u) {
  V uc = clamp(u, spec.action_low, spec.action_high);
  return detail::step_core(spec, x, uc);
}

// Execution-time step with an additive external disturbance force/torque
// d [B, d_u]; the disturbance bypasses the actuator bounds.
inline Tensor step_rows_disturbed(const SystemSpec& spec, const Tensor& x,
                                  const Tensor& u, const Tensor& d) {
  Tensor uc = clamp_action(spec, u);
  return detail::step_core(spec, x, add(uc, d));
}

// Batched rollout: x0 [B, d_x], U [B, H*d_u] (u_0..u_{H-1} blocks) ->
// X [B, H*d_x] (x_1..x_H blocks).
template <class V>
V rollout_rows(const SystemSpec& spec, const V& x0, const V& u_flat,
               std::size_t horizon) {
  std::vector<V> states;
  states.reserve(horizon);
  V x = x0;
  for (std::size_t i = 0; i < horizon; ++i) {
    V u = slice(u_flat, 1, i * spec.action_dim, spec.action_dim);
    x = step_rows(spec, x, u);
    states.push_back(x);
  }
  return concat(states, 1);
}

// ---------------------------------------------------------------------------
// Plain single-trajectory containers and entry points.

// States x_1..x_H with the anchor x_0 held separately: x_0 is given at
// inference time and is not part of the flow variable.
struct StateTrajectory {
  Tensor x0;      // {d_x}
  Tensor states;  // {H, d_x}
  std::size_t horizon() const { return states.rows(); }
  Tensor state(std::size_t i) const { return slice(states, 0, i, 1); }
};

struct ActionTrajectory {
  Tensor actions;  // {H, d_u}
  std::size_t horizon() const { return actions.rows(); }
};

inline Tensor step(const SystemSpec& spec, const Tensor& x, const Tensor& u) {
  require_finite(x, "step state");
  require_finite(u, "step action");
  if (x.numel() != spec.state_dim) throw ValidationError("step: state dim mismatch");
  if (u.numel() != spec.action_dim) throw ValidationError("step: action dim mismatch");
  Tensor xr = reshape(x, {std::size_t{1}, spec.state_dim});
  Tensor ur = reshape(u, {std::size_t{1}, spec.action_dim});
  return reshape(step_rows(spec, xr, ur), {spec.state_dim});
}

inline StateTrajectory rollout(const SystemSpec& spec, const Tensor& x0,
                               const ActionTrajectory& traj) {
  const std::size_t horizon = traj.horizon();
  if (horizon < 1) throw ValidationError("rollout: horizon must be >= 1");
  if (traj.actions.cols() != spec.action_dim)
    throw ValidationError("rollout: action dim mismatch");
  require_finite(x0, "rollout x0");
  require_finite(traj.actions, "rollout actions");
  Tensor x0r = reshape(x0, {std::size_t{1}, spec.state_dim});
  Tensor u_flat = reshape(traj.actions, {std::size_t{1}, horizon * spec.action_dim});
  Tensor flat = rollout_rows(spec, x0r, u_flat, horizon);
  StateTrajectory out;
  out.x0 = x0;
  out.states = reshape(std::move(flat), {horizon, spec.state_dim});
  return out;
}

// Termination predicate for closed-loop experiments (the toy analog of the
// paper-scale fall detection): pendulum |omega| > 25 rad/s, double
// integrator |v| > 10.
inline bool failure_predicate(const SystemSpec& spec, const Tensor& x) {
  switch (spec.kind) {
    case SystemKind::kDoubleIntegrator: {
      const double vx = x[2], vy = x[3];
      return vx * vx + vy * vy > 100.0;
    }
    case SystemKind::kPendulum:
      return std::abs(x[1]) > 25.0;
  }
  return true;
}

}  // namespace dynaflow
