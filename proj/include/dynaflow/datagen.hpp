#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynaflow/dynamics.hpp"
#include "dynaflow/io.hpp"
#include "dynaflow/metrics.hpp"
#include "dynaflow/rng.hpp"

namespace dynaflow {

enum class Provenance { kExpert, kKinematic };

inline std::string provenance_name(Provenance p) {
  return p == Provenance::kExpert ? "expert" : "kinematic";
}
inline Provenance parse_provenance(const std::string& s) {
  if (s == "expert") return Provenance::kExpert;
  if (s == "kinematic") return Provenance::kKinematic;
  throw ValidationError("unknown provenance: " + s);
}

struct Episode {
  Tensor x0;                     // {d_x}
  Tensor states;                 // {L, d_x} covering x_1..x_L
  std::optional<Tensor> actions; // {L, d_u}, expert data only
  Tensor command;                // {d_cmd}

  std::size_t length() const { return states.rows(); }
  // Full sequence accessor: index 0 is x0.
  Tensor state_at(std::size_t i) const {
    return i == 0 ? x0 : reshape(slice(states, 0, i - 1, 1), {x0.numel()});
  }
};

struct Dataset {
  std::string system_name;
  double dt = 0.0;
  Provenance provenance = Provenance::kExpert;
  std::size_t command_dim = 0;
  std::vector<Episode> episodes;
  Normalization norm;

  int tag() const { return provenance == Provenance::kExpert ? 0 : 1; }
  bool has_actions() const { return provenance == Provenance::kExpert; }
};

inline Normalization compute_normalization(const Dataset& ds, std::size_t state_dim,
                                           std::size_t action_dim) {
  Normalization n;
  n.state_mean.assign(state_dim, 0.0);
  n.state_std.assign(state_dim, 0.0);
  std::size_t count = 0;
  for (const Episode& ep : ds.episodes) {
    for (std::size_t d = 0; d < state_dim; ++d) n.state_mean[d] += ep.x0[d];
    for (std::size_t i = 0; i < ep.length(); ++i)
      for (std::size_t d = 0; d < state_dim; ++d) n.state_mean[d] += ep.states.at(i, d);
    count += ep.length() + 1;
  }
  for (double& v : n.state_mean) v /= static_cast<double>(count);
  for (const Episode& ep : ds.episodes) {
    for (std::size_t d = 0; d < state_dim; ++d) {
      const double e0 = ep.x0[d] - n.state_mean[d];
      n.state_std[d] += e0 * e0;
    }
    for (std::size_t i = 0; i < ep.length(); ++i)
      for (std::size_t d = 0; d < state_dim; ++d) {
        const double e = ep.states.at(i, d) - n.state_mean[d];
        n.state_std[d] += e * e;
      }
  }
  for (double& v : n.state_std) v = std::sqrt(v / static_cast<double>(count));

  if (ds.has_actions()) {
    n.action_mean.assign(action_dim, 0.0);
    n.action_std.assign(action_dim, 0.0);
    std::size_t acount = 0;
    for (const Episode& ep : ds.episodes) {
      if (!ep.actions) continue;
      for (std::size_t i = 0; i < ep.actions->rows(); ++i)
        for (std::size_t d = 0; d < action_dim; ++d)
          n.action_mean[d] += ep.actions->at(i, d);
      acount += ep.actions->rows();
    }
    for (double& v : n.action_mean) v /= static_cast<double>(acount);
    for (const Episode& ep : ds.episodes) {
      if (!ep.actions) continue;
      for (std::size_t i = 0; i < ep.actions->rows(); ++i)
        for (std::size_t d = 0; d < action_dim; ++d) {
          const double e = ep.actions->at(i, d) - n.action_mean[d];
          n.action_std[d] += e * e;
        }
    }
    for (double& v : n.action_std) v = std::sqrt(v / static_cast<double>(acount));
  }
  return n;
}

// Mean per-transition SAE of the whole dataset, with the residual expressed
// in per-dimension standard deviations. This is the "intrinsic SAE" the
// comparative analysis is anchored on; the metrics module itself reports raw
// units.
struct DatasetSae {
  double mean_raw = 0.0;
  double mean_normalized = 0.0;
  double max_raw = 0.0;
  std::size_t transitions = 0;
};

inline DatasetSae dataset_sae(const SystemSpec& spec, const Dataset& ds,
                              const IdSolverConfig& cfg, std::size_t n_threads = 1) {
  struct Item { const Episode* ep; std::size_t i; };
  std::vector<Item> items;
  for (const Episode& ep : ds.episodes)
    for (std::size_t i = 0; i < ep.length(); ++i) items.push_back({&ep, i});

  std::vector<double> raw(items.size()), normed(items.size());
  parallel_for(items.size(), n_threads, [&](std::size_t k) {
    const Episode& ep = *items[k].ep;
    const std::size_t i = items[k].i;
    Tensor x = ep.state_at(i);
    Tensor x_next = ep.state_at(i + 1);
    IdResult r = inverse_dynamics(spec, x, x_next, cfg);
    raw[k] = r.residual;
    Tensor reached = step(spec, x, r.action);
    Tensor target = detail::wrap_target(spec, x, x_next);
    double acc = 0.0;
    for (std::size_t d = 0; d < spec.state_dim; ++d) {
      const double e = (target[d] - reached[d]) / safe_std(ds.norm.state_std[d]);
      acc += e * e;
    }
    normed[k] = std::sqrt(acc);
  });

  DatasetSae out;
  out.transitions = items.size();
  for (std::size_t k = 0; k < items.size(); ++k) {
    out.mean_raw += raw[k];
    out.mean_normalized += normed[k];
    out.max_raw = std::max(out.max_raw, raw[k]);
  }
  if (!items.empty()) {
    out.mean_raw /= static_cast<double>(items.size());
    out.mean_normalized /= static_cast<double>(items.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expert data: analytic controllers rolled through the true dynamics, so
// every stored transition is feasible by construction (actions are recorded
// after clamping).

enum class ExpertController { kPdRegulator, kEnergySwingup };

struct ExpertGenConfig {
  std::size_t n_episodes = 200;
  std::size_t episode_len = 100;
  double action_noise = 0.05;  // exploration dither, clamped with the action
  std::uint64_t seed = 0;
};

// PD on velocity toward the commanded target (double integrator).
inline Tensor pd_regulator_action(const SystemSpec& spec, const Tensor& x,
                                  const Tensor& v_cmd) {
  const double kv = 2.0;
  Tensor u = Tensor::zeros({spec.action_dim});
  for (std::size_t d = 0; d < 2; ++d) u[d] = kv * (v_cmd[d] - x[2 + d]);
  return reshape(clamp_action(spec, u), {spec.action_dim});
}

// Energy-shaping swing-up with a PD capture basin near upright (pendulum).
inline Tensor energy_swingup_action(const SystemSpec& spec, const Tensor& x) {
  const double theta = x[0], omega = x[1];
  const double m = spec.mass, l = spec.length, g = spec.gravity;
  const double e_up = m * g * l;
  const double energy = 0.5 * m * l * l * omega * omega + m * g * l * std::cos(theta);
  const double theta_err = wrap_angle(theta);
  double u;
  if (std::abs(theta_err) < 0.35 && std::abs(omega) < 2.5) {
    u = -14.0 * theta_err - 4.0 * omega;  // capture PD, saturates at the bound
  } else {
    const double pump = 1.2 * omega * (e_up - energy);
    u = pump + spec.damping * omega;
    // kick out of the hanging rest point where omega = 0 gives no gradient
    if (std::abs(omega) < 1e-3 && std::abs(theta_err) > 3.0) u = 2.0;
  }
  Tensor ut = Tensor::vec({u});
  return reshape(clamp_action(spec, ut), {spec.action_dim});
}

inline Dataset generate_expert(const SystemSpec& spec, ExpertController controller,
                               const ExpertGenConfig& cfg) {
  if (spec.kind == SystemKind::kDoubleIntegrator &&
      controller != ExpertController::kPdRegulator)
    throw ValidationError("generate_expert: double_integrator pairs with pd_regulator");
  if (spec.kind == SystemKind::kPendulum && controller != ExpertController::kEnergySwingup)
    throw ValidationError("generate_expert: pendulum pairs with energy_swingup");
  if (cfg.n_episodes < 1 || cfg.episode_len < 1)
    throw ValidationError("generate_expert: empty dataset requested");

  Dataset ds;
  ds.system_name = spec.name;
  ds.dt = spec.dt;
  ds.provenance = Provenance::kExpert;
  ds.command_dim = spec.kind == SystemKind::kDoubleIntegrator ? 2 : 1;

  for (std::size_t e = 0; e < cfg.n_episodes; ++e) {
    Rng rng(mix_seed(cfg.seed, e));
    Episode ep;
    if (spec.kind == SystemKind::kDoubleIntegrator) {
      ep.x0 = Tensor::vec({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                           rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)});
      ep.command = Tensor::vec({rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    } else {
      ep.x0 = Tensor::vec({kPi + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
      ep.command = Tensor::vec({0.0});  // upright goal angle
    }

    Tensor states = Tensor::zeros({cfg.episode_len, spec.state_dim});
    Tensor actions = Tensor::zeros({cfg.episode_len, spec.action_dim});
    Tensor x = ep.x0;
    for (std::size_t i = 0; i < cfg.episode_len; ++i) {
      Tensor u = spec.kind == SystemKind::kDoubleIntegrator
                     ? pd_regulator_action(spec, x, ep.command)
                     : energy_swingup_action(spec, x);
      if (cfg.action_noise > 0.0)
        for (std::size_t d = 0; d < spec.action_dim; ++d)
          u[d] += cfg.action_noise * rng.normal();
      u = reshape(clamp_action(spec, u), {spec.action_dim});
      x = step(spec, x, u);
      for (std::size_t d = 0; d < spec.state_dim; ++d) states.at(i, d) = x[d];
      for (std::size_t d = 0; d < spec.action_dim; ++d) actions.at(i, d) = u[d];
    }
    ep.states = std::move(states);
    ep.actions = std::move(actions);
    ds.episodes.push_back(std::move(ep));
  }
  ds.norm = compute_normalization(ds, spec.state_dim, spec.action_dim);
  return ds;
}

// ---------------------------------------------------------------------------
// Kinematic data: state-only demonstrations laid out geometrically with
// velocities from backward differences, deliberately demanding more than the
// actuators can deliver. Carries no actions.

enum class KinematicStyle { kInstantSwingup, kOvershootDash };

inline std::string style_name(KinematicStyle s) {
  return s == KinematicStyle::kInstantSwingup ? "instant_swingup" : "overshoot_dash";
}
inline KinematicStyle parse_style(const std::string& s) {
  if (s == "instant_swingup") return KinematicStyle::kInstantSwingup;
  if (s == "overshoot_dash") return KinematicStyle::kOvershootDash;
  throw ValidationError("unknown kinematic style: " + s);
}

struct KinematicGenConfig {
  KinematicStyle style = KinematicStyle::kInstantSwingup;
  std::size_t n_episodes = 20;
  std::size_t episode_len = 30;
  std::uint64_t seed = 0;
  double sae_floor = 0.01;  // required dataset-mean SAE in normalized units

  // instant_swingup: swing completed over this many steps (0.4 s default at
  // dt = 0.05 -- far beyond what the 2 N*m torque bound permits)
  std::size_t swing_steps = 8;
  std::size_t max_start_delay = 3;

  // overshoot_dash: half-cosine position ramp with a superimposed
  // high-frequency ripple. The base dash is feasible; the ripple demands
  // accelerations severalfold over the force bound, so the admissibility
  // error is large per transition while the unavoidable trajectory gap of
  // the best feasible follower stays small (the ripple is brief and
  // zero-mean, unlike a sustained over-limit dash).
  double dash_distance_lo = 0.5, dash_distance_hi = 0.7;
  std::size_t dash_steps_lo = 20, dash_steps_hi = 20;
  double dash_heading_jitter = 0.2;   // radians around +x
  double dash_ripple_amp = 0.02;      // meters along the heading
  double dash_ripple_cycles = 4.0;    // full cycles over the dash
};

inline Dataset generate_kinematic(const SystemSpec& spec, const KinematicGenConfig& cfg,
                                  const IdSolverConfig& id_cfg = IdSolverConfig{},
                                  std::size_t n_threads = 1) {
  if (cfg.style == KinematicStyle::kInstantSwingup && spec.kind != SystemKind::kPendulum)
    throw ValidationError("instant_swingup is a pendulum style");
  if (cfg.style == KinematicStyle::kOvershootDash &&
      spec.kind != SystemKind::kDoubleIntegrator)
    throw ValidationError("overshoot_dash is a double_integrator style");
  if (cfg.n_episodes < 1 || cfg.episode_len < 2)
    throw ValidationError("generate_kinematic: episode too short");

  Dataset ds;
  ds.system_name = spec.name;
  ds.dt = spec.dt;
  ds.provenance = Provenance::kKinematic;
  ds.command_dim = spec.kind == SystemKind::kDoubleIntegrator ? 2 : 1;

  for (std::size_t e = 0; e < cfg.n_episodes; ++e) {
    Rng rng(mix_seed(cfg.seed ^ 0x6b696e31ULL, e));
    Episode ep;
    const std::size_t n_total = cfg.episode_len + 1;  // includes x0

    if (cfg.style == KinematicStyle::kInstantSwingup) {
      const double theta0 = kPi + rng.uniform(-0.05, 0.05);
      const std::size_t delay =
          cfg.max_start_delay == 0
              ? 0
              : static_cast<std::size_t>(rng.uniform_index(cfg.max_start_delay + 1));
      std::vector<double> theta(n_total, theta0);
      for (std::size_t i = 0; i < n_total; ++i) {
        if (i <= delay) {
          theta[i] = theta0;
        } else if (i < delay + cfg.swing_steps) {
          const double s =
              static_cast<double>(i - delay) / static_cast<double>(cfg.swing_steps);
          theta[i] = theta0 * 0.5 * (1.0 + std::cos(kPi * s));
        } else {
          theta[i] = 0.0;
        }
      }
      Tensor states = Tensor::zeros({cfg.episode_len, spec.state_dim});
      for (std::size_t i = 1; i < n_total; ++i) {
        states.at(i - 1, 0) = theta[i];
        states.at(i - 1, 1) = (theta[i] - theta[i - 1]) / spec.dt;  // backward diff
      }
      ep.x0 = Tensor::vec({theta0, 0.0});
      ep.states = std::move(states);
      ep.command = Tensor::vec({0.0});
    } else {
      const double dist = rng.uniform(cfg.dash_distance_lo, cfg.dash_distance_hi);
      const std::size_t steps =
          cfg.dash_steps_lo +
          rng.uniform_index(cfg.dash_steps_hi - cfg.dash_steps_lo + 1);
      const double heading = rng.uniform(-cfg.dash_heading_jitter, cfg.dash_heading_jitter);
      const double dir_x = std::cos(heading), dir_y = std::sin(heading);
      std::vector<double> arc(n_total, 0.0);
      for (std::size_t i = 0; i < n_total; ++i) {
        if (i < steps) {
          const double s = static_cast<double>(i) / static_cast<double>(steps);
          arc[i] = dist * 0.5 * (1.0 - std::cos(kPi * s)) +
                   cfg.dash_ripple_amp * std::sin(kTwoPi * cfg.dash_ripple_cycles * s);
        } else {
          arc[i] = dist;
        }
      }
      Tensor states = Tensor::zeros({cfg.episode_len, spec.state_dim});
      for (std::size_t i = 1; i < n_total; ++i) {
        const double v = (arc[i] - arc[i - 1]) / spec.dt;
        states.at(i - 1, 0) = dir_x * arc[i];
        states.at(i - 1, 1) = dir_y * arc[i];
        states.at(i - 1, 2) = dir_x * v;
        states.at(i - 1, 3) = dir_y * v;
      }
      ep.x0 = Tensor::vec({0.0, 0.0, 0.0, 0.0});
      ep.states = std::move(states);
      ep.command = Tensor::vec({0.0, 0.0});
    }
    ds.episodes.push_back(std::move(ep));
  }

  ds.norm = compute_normalization(ds, spec.state_dim, spec.action_dim);

  DatasetSae intrinsic = dataset_sae(spec, ds, id_cfg, n_threads);
  if (intrinsic.mean_normalized <= cfg.sae_floor)
    throw NumericError(
        "kinematic dataset accidentally feasible: mean normalized SAE " +
        std::to_string(intrinsic.mean_normalized) + " <= floor " +
        std::to_string(cfg.sae_floor) +
        " (style window too gentle; shorten the ramp or raise its amplitude)");
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset container ("DYND" version 1).

inline constexpr char kDatasetMagic[4] = {'D', 'Y', 'N', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  json header;
  header["system"] = ds.system_name;
  header["dt"] = ds.dt;
  header["provenance"] = provenance_name(ds.provenance);
  header["command_dim"] = ds.command_dim;
  header["n_episodes"] = ds.episodes.size();
  header["has_actions"] = ds.has_actions();
  header["norm"] = {{"state_mean", ds.norm.state_mean},
                    {"state_std", ds.norm.state_std},
                    {"action_mean", ds.norm.action_mean},
                    {"action_std", ds.norm.action_std}};

  std::vector<NamedTensor> tensors;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const Episode& ep = ds.episodes[e];
    const std::string base = "ep" + std::to_string(e);
    tensors.push_back({base + ".x0", ep.x0});
    tensors.push_back({base + ".states", ep.states});
    tensors.push_back({base + ".command", ep.command});
    if (ep.actions) tensors.push_back({base + ".actions", *ep.actions});
  }
  write_container(path, kDatasetMagic, kDatasetVersion, header, tensors);
}

inline Dataset read_dataset(const std::filesystem::path& path,
                            std::optional<Provenance> expected = std::nullopt) {
  Container c = read_container(path, kDatasetMagic, kDatasetVersion);
  Dataset ds;
  ds.system_name = c.header.at("system").get<std::string>();
  ds.dt = c.header.at("dt").get<double>();
  ds.provenance = parse_provenance(c.header.at("provenance").get<std::string>());
  ds.command_dim = c.header.at("command_dim").get<std::size_t>();
  if (expected && *expected != ds.provenance)
    throw ValidationError("dataset provenance is " + provenance_name(ds.provenance) +
                          ", expected " + provenance_name(*expected));
  const auto& jn = c.header.at("norm");
  ds.norm.state_mean = jn.at("state_mean").get<std::vector<double>>();
  ds.norm.state_std = jn.at("state_std").get<std::vector<double>>();
  ds.norm.action_mean = jn.at("action_mean").get<std::vector<double>>();
  ds.norm.action_std = jn.at("action_std").get<std::vector<double>>();
  const bool has_actions = c.header.at("has_actions").get<bool>();
  const std::size_t n = c.header.at("n_episodes").get<std::size_t>();
  for (std::size_t e = 0; e < n; ++e) {
    const std::string base = "ep" + std::to_string(e);
    Episode ep;
    ep.x0 = c.find(base + ".x0");
    ep.states = c.find(base + ".states");
    ep.command = c.find(base + ".command");
    if (has_actions) ep.actions = c.find(base + ".actions");
    require_finite(ep.states, "dataset episode states");
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace dynaflow
