#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynaflow/common.hpp"
#include "dynaflow/dynamics.hpp"
#include "dynaflow/net.hpp"
#include "dynaflow/rng.hpp"

namespace dynaflow {

// Optimal-transport path: alpha(t) = t, sigma(t) = 1 - t. The velocity field
// divides by 1 - t, so direct queries are refused beyond t_max_clip; the
// sampler only ever evaluates at t in {0, dt, .., 1 - dt}.
struct FlowSchedule {
  double t_max_clip = 1.0 - 1e-3;
  static double alpha(double t) { return t; }
  static double sigma(double t) { return 1.0 - t; }
};

struct SamplerConfig {
  std::size_t n_steps = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_steps < 1) throw ValidationError("SamplerConfig: n_steps must be >= 1");
    if (n_steps > 1000)
      throw ValidationError("SamplerConfig: n_steps beyond the t clip resolution");
  }
};

enum class Method { kDynaFlow, kVanillaState, kSaFlow };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kDynaFlow: return "dynaflow";
    case Method::kVanillaState: return "vanilla";
    case Method::kSaFlow: return "sa_flow";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "dynaflow") return Method::kDynaFlow;
  if (s == "vanilla") return Method::kVanillaState;
  if (s == "sa_flow") return Method::kSaFlow;
  throw ValidationError("unknown method: " + s + " (expected dynaflow|vanilla|sa_flow)");
}

// Conditioning layout: [normalized x0 | command | provenance one-hot(2)].
struct Conditioning {
  Tensor x0;       // raw initial state {d_x}
  Tensor command;  // task command {d_cmd}
  int tag = 0;     // 0 = expert-style data, 1 = kinematic-style data
};

inline std::size_t cond_width(std::size_t state_dim, std::size_t command_dim) {
  return state_dim + command_dim + 2;
}

inline Tensor conditioning_vector(const Conditioning& c, const Normalization& norm) {
  std::vector<double> out;
  out.reserve(c.x0.numel() + c.command.numel() + 2);
  for (std::size_t d = 0; d < c.x0.numel(); ++d)
    out.push_back((c.x0[d] - norm.state_mean[d]) / safe_std(norm.state_std[d]));
  for (std::size_t d = 0; d < c.command.numel(); ++d) out.push_back(c.command[d]);
  out.push_back(c.tag == 0 ? 1.0 : 0.0);
  out.push_back(c.tag == 1 ? 1.0 : 0.0);
  return Tensor::vec(std::move(out));
}

// Method spec + everything needed to evaluate it (no parameters). The flow
// variable covers x_1..x_H; for state-action flows the per-step channels are
// laid out as [state block | action block] over the flattened horizon.
struct ModelSpec {
  Method method = Method::kDynaFlow;
  SystemSpec system;
  NetworkConfig net;
  Normalization norm;
  FlowSchedule schedule;

  std::size_t flow_dim() const { return net.flow_dim; }
  std::size_t horizon() const { return net.horizon; }
  std::size_t state_width() const { return net.horizon * system.state_dim; }
  std::size_t action_width() const { return net.horizon * system.action_dim; }
  std::size_t flow_width() const { return net.horizon * net.flow_dim; }

  // Tiled per-channel statistics over the flattened flow variable.
  Tensor flow_mean_row, flow_std_row;    // {1, flow_width}
  Tensor state_mean_row, state_std_row;  // {1, state_width}
};

inline ModelSpec make_model_spec(Method method, const SystemSpec& system,
                                 NetworkConfig net, const Normalization& norm) {
  if (norm.state_mean.size() != system.state_dim)
    throw ValidationError("make_model_spec: normalization state width mismatch");
  if (method == Method::kSaFlow && norm.action_mean.size() != system.action_dim)
    throw ValidationError("make_model_spec: sa_flow requires action statistics");

  ModelSpec m;
  m.method = method;
  m.system = system;
  m.norm = norm;
  net.state_dim = system.state_dim;
  net.action_dim = system.action_dim;
  switch (method) {
    case Method::kDynaFlow:
      net.flow_dim = system.state_dim;
      net.out_dim = net.horizon * system.action_dim;
      net.squash_output = true;
      net.squash_low = system.action_low.data();
      net.squash_high = system.action_high.data();
      break;
    case Method::kVanillaState:
      net.flow_dim = system.state_dim;
      net.out_dim = net.horizon * system.state_dim;
      net.squash_output = false;
      break;
    case Method::kSaFlow:
      net.flow_dim = system.state_dim + system.action_dim;
      net.out_dim = net.horizon * (system.state_dim + system.action_dim);
      net.squash_output = false;
      break;
  }
  net.validate();
  m.net = net;

  auto tile = [&](bool with_actions, bool stds) {
    std::vector<double> row;
    const std::size_t horizon = net.horizon;
    for (std::size_t i = 0; i < horizon; ++i)
      for (std::size_t d = 0; d < system.state_dim; ++d)
        row.push_back(stds ? safe_std(norm.state_std[d]) : norm.state_mean[d]);
    if (with_actions)
      for (std::size_t i = 0; i < horizon; ++i)
        for (std::size_t d = 0; d < system.action_dim; ++d)
          row.push_back(stds ? safe_std(norm.action_std[d]) : norm.action_mean[d]);
    return Tensor::row(std::move(row));
  };

  m.state_mean_row = tile(false, false);
  m.state_std_row = tile(false, true);
  const bool joint = method == Method::kSaFlow;
  m.flow_mean_row = joint ? tile(true, false) : m.state_mean_row;
  m.flow_std_row = joint ? tile(true, true) : m.state_std_row;
  return m;
}

template <class V>
V normalize_rows(const V& x, const Tensor& mean_row, const Tensor& std_row, const V& anchor) {
  return (x - lift(mean_row, anchor)) / lift(std_row, anchor);
}

template <class V>
V denormalize_rows(const V& x, const Tensor& mean_row, const Tensor& std_row, const V& anchor) {
  return x * lift(std_row, anchor) + lift(mean_row, anchor);
}

// X_t = (1 - t) X0 + t X1. t may be a [B,1] column or a scalar tensor.
template <class V, class T>
V interpolate_rows(const V& x0, const V& x1, const T& t) {
  return x0 * (1.0 - t) + x1 * t;
}

inline Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
  if (!x0.same_shape(x1)) throw ValidationError("interpolate: shape mismatch");
  if (t < 0.0 || t > 1.0) throw ValidationError("interpolate: t outside [0,1]");
  return add(mul(x0, Tensor::scalar(1.0 - t)), mul(x1, Tensor::scalar(t)));
}

// Marginal velocity of the OT path from the posterior-mean prediction.
inline Tensor velocity(const FlowSchedule& sched, const Tensor& xt, const Tensor& xhat1,
                       double t) {
  if (!xt.same_shape(xhat1)) throw ValidationError("velocity: shape mismatch");
  if (t > sched.t_max_clip)
    throw ValidationError("velocity: t beyond t_max_clip; caller must clip");
  return div(sub(xhat1, xt), Tensor::scalar(1.0 - t));
}

namespace detail {

template <class V>
struct PosteriorParts {
  V prediction;  // normalized flow-space posterior mean [B, flow_width]
  V net_out;     // raw network output (actions for DynaFlow) [B, out_dim]
};

// xt: [B, flow_width] normalized, cond: [B, cond_dim], tcol: [B, 1],
// x0_raw: [B, d_x] raw states (rollout anchor).
template <class V>
PosteriorParts<V> posterior_parts(const ModelSpec& m, const std::vector<V>& params,
                                  const V& xt, const V& cond, const V& tcol,
                                  const V& x0_raw) {
  PosteriorParts<V> out;
  out.net_out = net_forward(m.net, params, xt, cond, tcol);
  if (m.method == Method::kDynaFlow) {
    V traj = rollout_rows(m.system, x0_raw, out.net_out, m.horizon());
    out.prediction = normalize_rows(traj, m.state_mean_row, m.state_std_row, traj);
  } else {
    out.prediction = out.net_out;
  }
  return out;
}

}  // namespace detail

// Posterior mean through the rollout: feasible by construction for DynaFlow.
// xt is the normalized noisy trajectory {H, flow_dim}.
inline StateTrajectory posterior_mean(const ModelSpec& m, const Parameters& params,
                                      const Tensor& xt, const Conditioning& cond,
                                      double t, const Tensor& x0) {
  if (xt.rows() != m.horizon() || xt.cols() != m.flow_dim())
    throw ValidationError("posterior_mean: X_t shape mismatch");
  Tensor xt_flat = reshape(xt, {std::size_t{1}, m.flow_width()});
  Tensor cond_row = reshape(conditioning_vector(cond, m.norm), {std::size_t{1}, m.net.cond_dim});
  Tensor tcol = Tensor({std::size_t{1}, std::size_t{1}}, {t});
  Tensor x0_row = reshape(x0, {std::size_t{1}, m.system.state_dim});
  auto parts = detail::posterior_parts<Tensor>(m, params.values(), xt_flat, cond_row,
                                               tcol, x0_row);
  StateTrajectory out;
  out.x0 = x0;
  if (m.method == Method::kDynaFlow) {
    Tensor raw = denormalize_rows(parts.prediction, m.state_mean_row, m.state_std_row,
                                  parts.prediction);
    out.states = reshape(std::move(raw), {m.horizon(), m.system.state_dim});
  } else {
    Tensor raw = denormalize_rows(slice(parts.prediction, 1, 0, m.state_width()),
                                  m.state_mean_row, m.state_std_row, parts.prediction);
    out.states = reshape(std::move(raw), {m.horizon(), m.system.state_dim});
  }
  return out;
}

// One training item: a data window, its matching base-noise draw and flow
// time. X1/actions are raw; x0_noise lives in the normalized flow space.
struct FlowBatchItem {
  Tensor x1;                     // {H, d_x} target states
  std::optional<Tensor> actions; // {H, d_u} expert actions (SA flow)
  Tensor x0_noise;               // {H, flow_dim} ~ N(0, I)
  double t = 0.0;
  Tensor x0;                     // {d_x} window initial state
  Conditioning cond;
};

struct BatchRows {
  std::size_t batch = 0;
  Tensor x1_norm;   // [B, flow_width] normalized targets (joint for SA)
  Tensor x0_noise;  // [B, flow_width]
  Tensor tcol;      // [B, 1]
  Tensor cond;      // [B, cond_dim]
  Tensor x0_raw;    // [B, d_x]
};

inline BatchRows to_rows(const ModelSpec& m, const std::vector<FlowBatchItem>& items) {
  if (items.empty()) throw ValidationError("to_rows: empty batch");
  const std::size_t B = items.size();
  BatchRows rows;
  rows.batch = B;
  rows.x1_norm = Tensor::zeros({B, m.flow_width()});
  rows.x0_noise = Tensor::zeros({B, m.flow_width()});
  rows.tcol = Tensor::zeros({B, std::size_t{1}});
  rows.cond = Tensor::zeros({B, m.net.cond_dim});
  rows.x0_raw = Tensor::zeros({B, m.system.state_dim});

  const std::size_t sw = m.state_width();
  for (std::size_t b = 0; b < B; ++b) {
    const FlowBatchItem& it = items[b];
    if (it.x1.rows() != m.horizon() || it.x1.cols() != m.system.state_dim)
      throw ValidationError("to_rows: item X1 shape mismatch");
    if (it.x0_noise.rows() != m.horizon() || it.x0_noise.cols() != m.flow_dim())
      throw ValidationError("to_rows: item noise shape mismatch");
    if (m.method == Method::kSaFlow && !it.actions)
      throw ValidationError("to_rows: sa_flow batch item lacks actions");

    for (std::size_t j = 0; j < sw; ++j)
      rows.x1_norm.at(b, j) = (it.x1[j] - m.state_mean_row[j]) / m.state_std_row[j];
    if (m.method == Method::kSaFlow) {
      const Tensor& u = *it.actions;
      for (std::size_t j = 0; j < m.action_width(); ++j)
        rows.x1_norm.at(b, sw + j) =
            (u[j] - m.flow_mean_row[sw + j]) / m.flow_std_row[sw + j];
    }
    // re-block the {H, flow_dim} noise into the flat [state | action] layout
    const std::size_t dx = m.system.state_dim;
    for (std::size_t i = 0; i < m.horizon(); ++i) {
      for (std::size_t d = 0; d < dx; ++d)
        rows.x0_noise.at(b, i * dx + d) = it.x0_noise.at(i, d);
      for (std::size_t d = dx; d < m.flow_dim(); ++d)
        rows.x0_noise.at(b, sw + i * m.system.action_dim + (d - dx)) =
            it.x0_noise.at(i, d);
    }
    rows.tcol.at(b, 0) = it.t;
    Tensor cv = conditioning_vector(it.cond, m.norm);
    for (std::size_t j = 0; j < cv.numel(); ++j) rows.cond.at(b, j) = cv[j];
    for (std::size_t j = 0; j < m.system.state_dim; ++j)
      rows.x0_raw.at(b, j) = it.x0[j];
  }
  return rows;
}

// Per-channel loss weights over the flattened flow variable; velocity state
// dimensions may be down-weighted, action channels (SA) keep weight 1.
inline Tensor weight_row(const ModelSpec& m, double velocity_weight) {
  std::vector<double> w;
  for (std::size_t i = 0; i < m.horizon(); ++i)
    for (std::size_t d = 0; d < m.system.state_dim; ++d)
      w.push_back(m.system.velocity_dims[d] ? velocity_weight : 1.0);
  if (m.method == Method::kSaFlow)
    for (std::size_t i = 0; i < m.action_width(); ++i) w.push_back(1.0);
  return Tensor::row(std::move(w));
}

// Conditional matching loss: mean over the batch of || W o (Xhat1 - X1) ||^2,
// computed in the normalized flow space.
template <class V>
V cm_loss_rows(const ModelSpec& m, const std::vector<V>& params, const BatchRows& rows,
               const Tensor& w_row, const V& anchor) {
  V x1 = lift(rows.x1_norm, anchor);
  V x0n = lift(rows.x0_noise, anchor);
  V tcol = lift(rows.tcol, anchor);
  V xt = interpolate_rows(x0n, x1, tcol);
  auto parts = detail::posterior_parts<V>(m, params, xt, lift(rows.cond, anchor), tcol,
                                          lift(rows.x0_raw, anchor));
  V err = lift(w_row, anchor) * (parts.prediction - x1);
  return sum(err * err) * (1.0 / static_cast<double>(rows.batch));
}

inline double cm_loss(const ModelSpec& m, const Parameters& params,
                      const std::vector<FlowBatchItem>& items, const Tensor& w_row) {
  if (!(w_row.numel() == m.flow_width())) throw ValidationError("cm_loss: W width mismatch");
  for (double v : w_row.data())
    if (v < 0.0) throw ValidationError("cm_loss: W must be nonnegative");
  BatchRows rows = to_rows(m, items);
  Tensor anchor = Tensor::scalar(0.0);
  return cm_loss_rows<Tensor>(m, params.values(), rows, w_row, anchor)[0];
}

// ---------------------------------------------------------------------------
// Sampling (Euler integration of the learned flow; plain tensors, no tape).

struct SampleRows {
  Tensor states;          // [B, H*d_x] authoritative trajectory per method
  Tensor actions;         // [B, H*d_u] (DynaFlow: final-step prediction; SA: clamped)
  Tensor rollout_states;  // [B, H*d_x] rollout of `actions` (empty for vanilla)
  Tensor euler_state;     // [B, H*d_x] de-normalized final Euler iterate, diagnostics
  bool has_actions = false;
};

// Noise for one item: state block first, then (for SA) the action block, so
// the state-channel noise matches across methods sharing an item seed.
inline Tensor draw_noise(const ModelSpec& m, std::uint64_t seed) {
  Rng rng(seed);
  Tensor n = Tensor::zeros({m.horizon(), m.flow_dim()});
  const std::size_t sw = m.state_width();
  std::vector<double> flat(m.flow_width());
  for (std::size_t j = 0; j < m.flow_width(); ++j) flat[j] = rng.normal();
  // re-block [state | action] into per-step rows
  for (std::size_t i = 0; i < m.horizon(); ++i) {
    for (std::size_t d = 0; d < m.system.state_dim; ++d)
      n.at(i, d) = flat[i * m.system.state_dim + d];
    for (std::size_t d = m.system.state_dim; d < m.flow_dim(); ++d)
      n.at(i, d) = flat[sw + i * m.system.action_dim + (d - m.system.state_dim)];
  }
  return n;
}

inline SampleRows sample_rows(const ModelSpec& m, const Parameters& params,
                              const Tensor& x0_raw, const Tensor& cond,
                              std::size_t n_steps,
                              const std::vector<std::uint64_t>& seeds) {
  SamplerConfig{n_steps, 0}.validate();
  const std::size_t B = x0_raw.rows();
  if (seeds.size() != B) throw ValidationError("sample_rows: one seed per row required");
  const std::vector<Tensor> pvals = params.values();

  // Base noise, flattened with the [state | action] block layout.
  Tensor x = Tensor::zeros({B, m.flow_width()});
  const std::size_t sw = m.state_width();
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(seeds[b]);
    for (std::size_t j = 0; j < m.flow_width(); ++j) x.at(b, j) = rng.normal();
    (void)sw;
  }

  const double dt = 1.0 / static_cast<double>(n_steps);
  Tensor net_out;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    Tensor tcol = Tensor::full({B, std::size_t{1}}, t);
    auto parts = detail::posterior_parts<Tensor>(m, pvals, x, cond, tcol, x0_raw);
    net_out = parts.net_out;
    Tensor vel = velocity(m.schedule, x, parts.prediction, t);
    x = add(x, mul(vel, Tensor::scalar(dt)));
  }

  SampleRows out;
  Tensor euler_states_norm = slice(x, 1, 0, sw);
  out.euler_state = denormalize_rows(euler_states_norm, m.state_mean_row,
                                     m.state_std_row, euler_states_norm);
  switch (m.method) {
    case Method::kDynaFlow: {
      out.actions = net_out;  // squashed, strictly inside U
      out.rollout_states = rollout_rows(m.system, x0_raw, out.actions, m.horizon());
      out.states = out.rollout_states;
      out.has_actions = true;
      break;
    }
    case Method::kVanillaState: {
      out.states = out.euler_state;
      break;
    }
    case Method::kSaFlow: {
      Tensor u_norm = slice(x, 1, sw, m.action_width());
      Tensor u_raw = denormalize_rows(
          u_norm, slice(m.flow_mean_row, 1, sw, m.action_width()),
          slice(m.flow_std_row, 1, sw, m.action_width()), u_norm);
      // tile bounds across the horizon for the flat clamp
      std::vector<double> lo, hi;
      for (std::size_t i = 0; i < m.horizon(); ++i)
        for (std::size_t d = 0; d < m.system.action_dim; ++d) {
          lo.push_back(m.system.action_low[d]);
          hi.push_back(m.system.action_high[d]);
        }
      out.actions = clamp(u_raw, Tensor::row(std::move(lo)), Tensor::row(std::move(hi)));
      out.rollout_states = rollout_rows(m.system, x0_raw, out.actions, m.horizon());
      out.states = out.euler_state;  // SA-State; rollout_states is SA-Rollout
      out.has_actions = true;
      break;
    }
  }
  return out;
}

struct SampleResult {
  StateTrajectory trajectory;      // method's authoritative state output
  ActionTrajectory actions;        // empty for vanilla
  StateTrajectory rollout;         // Phi(x0, actions); equals trajectory for DynaFlow
  Tensor euler_state;              // {H, d_x} diagnostics
  bool has_actions = false;
};

inline SampleResult sample(const ModelSpec& m, const Parameters& params, const Tensor& x0,
                           const Conditioning& cond, const SamplerConfig& cfg) {
  cfg.validate();
  require_finite(x0, "sample x0");
  Tensor x0_row = reshape(x0, {std::size_t{1}, m.system.state_dim});
  Tensor cond_row = reshape(conditioning_vector(cond, m.norm),
                            {std::size_t{1}, m.net.cond_dim});
  SampleRows rows = sample_rows(m, params, x0_row, cond_row, cfg.n_steps, {cfg.seed});

  SampleResult out;
  out.trajectory.x0 = x0;
  out.trajectory.states = reshape(rows.states, {m.horizon(), m.system.state_dim});
  out.euler_state = reshape(rows.euler_state, {m.horizon(), m.system.state_dim});
  out.has_actions = rows.has_actions;
  if (rows.has_actions) {
    out.actions.actions = reshape(rows.actions, {m.horizon(), m.system.action_dim});
    out.rollout.x0 = x0;
    out.rollout.states = reshape(rows.rollout_states, {m.horizon(), m.system.state_dim});
  }
  return out;
}

}  // namespace dynaflow
