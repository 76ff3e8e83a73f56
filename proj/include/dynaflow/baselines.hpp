#pragma once

#include <optional>
#include <vector>

#include "dynaflow/flow.hpp"
#include "dynaflow/metrics.hpp"
#include "dynaflow/trainer.hpp"

namespace dynaflow {

// The baselines reuse the network and trainer wholesale with only the head
// dimensionality changed, so comparisons isolate the rollout embedding.

inline ModelSpec make_vanilla_spec(const SystemSpec& system, NetworkConfig net,
                                   const Normalization& norm) {
  return make_model_spec(Method::kVanillaState, system, net, norm);
}

inline ModelSpec make_sa_spec(const SystemSpec& system, NetworkConfig net,
                              const Normalization& norm) {
  return make_model_spec(Method::kSaFlow, system, net, norm);
}

inline TrainState train_vanilla(const ModelSpec& spec, const Dataset& ds,
                                const TrainConfig& cfg,
                                std::vector<TrainLogRow>* log = nullptr) {
  if (spec.method != Method::kVanillaState)
    throw ValidationError("train_vanilla: spec method is not vanilla");
  return train(spec, ds, cfg, log);
}

inline TrainState train_sa_flow(const ModelSpec& spec, const Dataset& ds,
                                const TrainConfig& cfg,
                                std::vector<TrainLogRow>* log = nullptr) {
  if (spec.method != Method::kSaFlow)
    throw ValidationError("train_sa_flow: spec method is not sa_flow");
  if (!ds.has_actions()) throw ValidationError("dataset lacks actions");
  return train(spec, ds, cfg, log);
}

// ---------------------------------------------------------------------------
// Tracker baseline: execute a state plan by solving the inverse dynamics
// problem toward each planned next state and stepping the true dynamics.

struct TrackResult {
  StateTrajectory executed;
  ActionTrajectory actions;
  bool success = true;
  int failure_step = -1;       // first step at which the failure predicate fired
  double terminal_error = 0.0; // wrapped deviation from the plan's final state
};

inline TrackResult tracker_rollout(const SystemSpec& spec, const StateTrajectory& plan,
                                   const Tensor& x0, const IdSolverConfig& id_cfg) {
  if (plan.states.cols() != spec.state_dim)
    throw ValidationError("tracker_rollout: plan dim mismatch");
  if (x0.numel() != spec.state_dim)
    throw ValidationError("tracker_rollout: x0 dim mismatch");

  const std::size_t horizon = plan.horizon();
  TrackResult out;
  out.executed.x0 = x0;
  out.executed.states = Tensor::zeros({horizon, spec.state_dim});
  out.actions.actions = Tensor::zeros({horizon, spec.action_dim});

  Tensor x = x0;
  std::size_t executed_steps = 0;
  for (std::size_t i = 0; i < horizon; ++i) {
    Tensor target = reshape(plan.state(i), {spec.state_dim});
    IdResult id = inverse_dynamics(spec, x, target, id_cfg);
    x = step(spec, x, id.action);
    for (std::size_t d = 0; d < spec.state_dim; ++d) out.executed.states.at(i, d) = x[d];
    for (std::size_t d = 0; d < spec.action_dim; ++d)
      out.actions.actions.at(i, d) = id.action[d];
    executed_steps = i + 1;
    if (failure_predicate(spec, x)) {
      out.success = false;
      out.failure_step = static_cast<int>(i);
      break;
    }
  }

  Tensor final_plan = reshape(plan.state(executed_steps - 1), {spec.state_dim});
  double acc = 0.0;
  for (std::size_t d = 0; d < spec.state_dim; ++d) {
    double diff = x[d] - final_plan[d];
    if (spec.angle_dims[d]) diff = wrap_angle(diff);
    acc += diff * diff;
  }
  out.terminal_error = std::sqrt(acc);

  // freeze remaining rows at the failure state so the trajectory stays
  // rectangular for serialization
  for (std::size_t i = executed_steps; i < horizon; ++i)
    for (std::size_t d = 0; d < spec.state_dim; ++d)
      out.executed.states.at(i, d) = x[d];
  return out;
}

}  // namespace dynaflow
