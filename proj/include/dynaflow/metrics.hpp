#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "dynaflow/autodiff.hpp"
#include "dynaflow/dynamics.hpp"
#include "dynaflow/rng.hpp"

namespace dynaflow {

struct IdSolverConfig {
  std::size_t max_iters = 500;
  double step_size = 0.1;   // initial step, halved while not improving
  double tol = 1e-10;       // convergence tolerance on residual change
  std::size_t n_restarts = 4;  // zero, clamped least-squares, two random

  void validate() const {
    if (max_iters < 1) throw ValidationError("IdSolverConfig: max_iters >= 1 required");
    if (tol <= 0.0) throw ValidationError("IdSolverConfig: tol must be positive");
    if (n_restarts < 1) throw ValidationError("IdSolverConfig: n_restarts >= 1 required");
  }
};

struct IdResult {
  Tensor action;    // u* in U
  double residual;  // || x_next - f(x, u*) || (angle dims wrapped)
  bool converged;
  std::size_t iters;
};

namespace detail {

// Shift angle components of the demanded next state onto the branch nearest
// the reachable set. The reachable angle range per step is O(dt^2 * u_range),
// far below pi, so shifting against f(x, 0) is exact for every admissible u
// and keeps the objective smooth.
inline Tensor wrap_target(const SystemSpec& spec, const Tensor& x, const Tensor& x_next) {
  Tensor f0 = step(spec, x, Tensor::zeros({spec.action_dim}));
  Tensor target = x_next;
  for (std::size_t d = 0; d < spec.state_dim; ++d)
    if (spec.angle_dims[d]) target[d] = f0[d] + wrap_angle(x_next[d] - f0[d]);
  return target;
}

inline double id_objective(const SystemSpec& spec, const Tensor& x, const Tensor& target,
                           const Tensor& u) {
  Tensor diff = sub(step(spec, x, u), target);
  double acc = 0.0;
  for (double v : diff.data()) acc += v * v;
  return acc;
}

inline Tensor id_gradient(const SystemSpec& spec, const Tensor& x, const Tensor& target,
                          const Tensor& u) {
  Recording rec = record(
      ScalarFn([&](Tape& tape, const std::vector<Var>& in) {
        Var xr = tape.constant(reshape(x, {std::size_t{1}, spec.state_dim}));
        Var ur = in[0];
        Var xn = step_rows(spec, xr, ur);
        Var d = xn - tape.constant(reshape(target, {std::size_t{1}, spec.state_dim}));
        return sum(d * d);
      }),
      {reshape(u, {std::size_t{1}, spec.action_dim})});
  return reshape(rec.tape.backward(Tensor::scalar(1.0))[0], {spec.action_dim});
}

// Unconstrained least-squares action against the linearization of f at u = 0,
// clamped to the box. For dynamics affine in u (both shipped systems) the
// clamped solution is already the constrained optimum.
inline Tensor id_least_squares_seed(const SystemSpec& spec, const Tensor& x,
                                    const Tensor& target) {
  Recording rec = record(
      TracedFn([&](Tape& tape, const std::vector<Var>& in) {
        Var xr = tape.constant(reshape(x, {std::size_t{1}, spec.state_dim}));
        return std::vector<Var>{step_rows(spec, xr, in[0])};
      }),
      {Tensor::zeros({std::size_t{1}, spec.action_dim})});

  const std::size_t dx = spec.state_dim, du = spec.action_dim;
  const Tensor& f0_row = rec.outputs[0];
  // J[r][c] = d f_r / d u_c via one reverse pass per state dimension
  std::vector<std::vector<double>> J(dx, std::vector<double>(du, 0.0));
  for (std::size_t r = 0; r < dx; ++r) {
    Tensor seed = Tensor::zeros({std::size_t{1}, dx});
    seed[r] = 1.0;
    Tensor g = rec.tape.backward(seed)[0];
    for (std::size_t c = 0; c < du; ++c) J[r][c] = g[c];
  }

  // normal equations (J^T J) u = J^T (target - f0); du <= 2 in this artifact
  std::vector<double> rhs(du, 0.0);
  std::vector<double> gram(du * du, 0.0);
  for (std::size_t c = 0; c < du; ++c) {
    for (std::size_t r = 0; r < dx; ++r) rhs[c] += J[r][c] * (target[r] - f0_row[r]);
    for (std::size_t c2 = 0; c2 < du; ++c2)
      for (std::size_t r = 0; r < dx; ++r) gram[c * du + c2] += J[r][c] * J[r][c2];
  }

  Tensor u = Tensor::zeros({du});
  if (du == 1) {
    if (std::abs(gram[0]) > 1e-300) u[0] = rhs[0] / gram[0];
  } else if (du == 2) {
    const double det = gram[0] * gram[3] - gram[1] * gram[2];
    if (std::abs(det) > 1e-300) {
      u[0] = (rhs[0] * gram[3] - rhs[1] * gram[1]) / det;
      u[1] = (rhs[1] * gram[0] - rhs[0] * gram[2]) / det;
    }
  } else {
    // fall back to a diagonal solve for wider action spaces
    for (std::size_t c = 0; c < du; ++c)
      if (std::abs(gram[c * du + c]) > 1e-300) u[c] = rhs[c] / gram[c * du + c];
  }
  return reshape(clamp_action(spec, u), {du});
}

}  // namespace detail

// Projected gradient descent on || x_next - f(x, u) ||^2 over the action box,
// restarted from zero, the clamped least-squares seed and random points; the
// reported action is the best across restarts. Never throws on slow
// convergence: the best-so-far is returned with converged = false.
inline IdResult inverse_dynamics(const SystemSpec& spec, const Tensor& x,
                                 const Tensor& x_next, const IdSolverConfig& cfg) {
  cfg.validate();
  require_finite(x, "inverse_dynamics x");
  require_finite(x_next, "inverse_dynamics x_next");
  Tensor target = detail::wrap_target(spec, x, x_next);

  // Restart set: clamped least-squares seed, zero action, random points.
  // The LS seed goes first so the early exit below skips the remaining
  // restarts on feasible transitions; the reported minimum is unaffected.
  std::vector<Tensor> seeds;
  seeds.push_back(detail::id_least_squares_seed(spec, x, target));
  if (cfg.n_restarts >= 2) seeds.push_back(Tensor::zeros({spec.action_dim}));
  // random restarts seeded from the problem data, so identical inputs give
  // identical solver behavior
  std::uint64_t state_hash = 0x1D5EEDuLL;
  for (double v : x.data()) state_hash = mix_seed(state_hash, std::bit_cast<std::uint64_t>(v));
  for (double v : x_next.data())
    state_hash = mix_seed(state_hash, std::bit_cast<std::uint64_t>(v));
  Rng rng(state_hash);
  while (seeds.size() < cfg.n_restarts) {
    Tensor r = Tensor::zeros({spec.action_dim});
    for (std::size_t d = 0; d < spec.action_dim; ++d)
      r[d] = rng.uniform(spec.action_low[d], spec.action_high[d]);
    seeds.push_back(std::move(r));
  }

  IdResult best{Tensor::zeros({spec.action_dim}),
                std::numeric_limits<double>::infinity(), false, 0};
  std::size_t total_iters = 0;

  for (const Tensor& seed : seeds) {
    Tensor u = clamp_action(spec, seed);
    u = reshape(u, {spec.action_dim});
    double g = detail::id_objective(spec, x, target, u);
    double res = std::sqrt(g);
    bool converged = false;

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
      ++total_iters;
      Tensor grad = detail::id_gradient(spec, x, target, u);
      double alpha = cfg.step_size;
      Tensor u_next = u;
      double g_next = g;
      bool improved = false;
      for (int halving = 0; halving < 40; ++halving) {
        Tensor cand =
            reshape(clamp_action(spec, sub(u, mul(grad, Tensor::scalar(alpha)))),
                    {spec.action_dim});
        const double gc = detail::id_objective(spec, x, target, cand);
        if (gc < g) {
          u_next = std::move(cand);
          g_next = gc;
          improved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!improved) {
        converged = true;  // stationary within the box at this precision
        break;
      }
      const double res_next = std::sqrt(g_next);
      const bool small_change = std::abs(res - res_next) < cfg.tol;
      u = std::move(u_next);
      g = g_next;
      res = res_next;
      if (small_change) {
        converged = true;
        break;
      }
    }

    if (res < best.residual) {
      best.action = u;
      best.residual = res;
      best.converged = converged;
    }
    if (best.residual < cfg.tol) break;  // global optimum up to tolerance
  }
  best.iters = total_iters;
  return best;
}

// Statewise Admissibility Error for each consecutive transition of the
// trajectory (x_0 -> x_1, .., x_{H-1} -> x_H): H values.
inline std::vector<double> sae(const SystemSpec& spec, const StateTrajectory& traj,
                               const IdSolverConfig& cfg) {
  const std::size_t horizon = traj.horizon();
  if (horizon < 1) throw ValidationError("sae: trajectory must contain a transition");
  std::vector<double> out(horizon);
  Tensor prev = traj.x0;
  for (std::size_t i = 0; i < horizon; ++i) {
    Tensor next = reshape(traj.state(i), {spec.state_dim});
    out[i] = inverse_dynamics(spec, prev, next, cfg).residual;
    prev = std::move(next);
  }
  return out;
}

// Trajectory Reconstruction Error: mean squared deviation over the compared
// (non-initial) states, angle dimensions wrapped. Symmetric, nonnegative,
// zero iff the trajectories agree up to angle wrapping.
inline double tre(const SystemSpec& spec, const StateTrajectory& a,
                  const StateTrajectory& b) {
  if (a.horizon() != b.horizon() || a.states.cols() != b.states.cols())
    throw ValidationError("tre: mismatched trajectory shapes");
  for (std::size_t d = 0; d < spec.state_dim; ++d) {
    const double dx0 = spec.angle_dims[d] ? wrap_angle(a.x0[d] - b.x0[d])
                                          : a.x0[d] - b.x0[d];
    if (std::abs(dx0) > 1e-9)
      throw ValidationError("tre: trajectories must share the initial state");
  }
  const std::size_t horizon = a.horizon();
  double acc = 0.0;
  for (std::size_t i = 0; i < horizon; ++i)
    for (std::size_t d = 0; d < spec.state_dim; ++d) {
      double diff = a.states.at(i, d) - b.states.at(i, d);
      if (spec.angle_dims[d]) diff = wrap_angle(diff);
      acc += diff * diff;
    }
  return acc / static_cast<double>(horizon);
}

// ---------------------------------------------------------------------------

struct BoxStats {
  double mean = 0, median = 0, q25 = 0, q75 = 0, min = 0, max = 0;
  std::size_t count = 0;
};

inline BoxStats box_stats(std::vector<double> v) {
  BoxStats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  auto quantile = [&v](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
  };
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / static_cast<double>(v.size());
  s.median = quantile(0.5);
  s.q25 = quantile(0.25);
  s.q75 = quantile(0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

// One evaluation item: a reference window plus the noise seed every method
// must reuse for it.
struct EvalItem {
  StateTrajectory reference;
  Tensor command;
  int tag = 0;
  std::uint64_t noise_seed = 0;
};

using MethodSampler = std::function<StateTrajectory(const EvalItem&)>;

struct EvalReport {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> sae_per_item;
  std::vector<double> tre_per_item;
  BoxStats sae_stats;  // pooled over every transition
  BoxStats tre_stats;
  // tracking extras (filled by the tracking protocol)
  std::vector<int> track_success;
  std::vector<int> failure_step;  // -1 when none
  std::vector<double> terminal_error;
};

inline void parallel_for(std::size_t n, std::size_t n_threads,
                         const std::function<void(std::size_t)>& body) {
  if (n_threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t workers = std::min(n_threads, n);
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Runs a method over shared evaluation items: SAE of its generated
// trajectory, TRE against the reference window. Deterministic given the
// items; thread count only affects wall-clock.
inline EvalReport evaluate_method(const MethodSampler& sampler,
                                  const std::vector<EvalItem>& items,
                                  const SystemSpec& spec, const IdSolverConfig& id_cfg,
                                  std::size_t n_threads = 1) {
  EvalReport rep;
  rep.sae_per_item.resize(items.size());
  rep.tre_per_item.resize(items.size());
  parallel_for(items.size(), n_threads, [&](std::size_t i) {
    StateTrajectory traj = sampler(items[i]);
    rep.sae_per_item[i] = sae(spec, traj, id_cfg);
    rep.tre_per_item[i] = tre(spec, traj, items[i].reference);
  });
  std::vector<double> pooled;
  for (const auto& v : rep.sae_per_item) pooled.insert(pooled.end(), v.begin(), v.end());
  rep.sae_stats = box_stats(std::move(pooled));
  rep.tre_stats = box_stats(rep.tre_per_item);
  return rep;
}

}  // namespace dynaflow
