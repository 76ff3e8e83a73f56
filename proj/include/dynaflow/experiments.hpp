#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dynaflow/baselines.hpp"
#include "dynaflow/datagen.hpp"
#include "dynaflow/io.hpp"
#include "dynaflow/metrics.hpp"
#include "dynaflow/trainer.hpp"

namespace dynaflow {

// Shared implementation of the experiment protocols; the CLI and the
// acceptance suite both drive these, so results in files and results under
// test are the same code path.

struct ExperimentContext {
  std::filesystem::path out_dir;
  std::size_t n_threads = 1;
  json config_echo;  // effective config + input hashes, embedded in outputs
};

inline void echo_input_hash(ExperimentContext& ctx, const std::string& label,
                            const std::filesystem::path& path) {
  ctx.config_echo["inputs"][label] = {{"path", path.string()},
                                      {"sha256", sha256_file(path)}};
}

inline json box_stats_json(const BoxStats& s) {
  return json{{"mean", s.mean}, {"median", s.median}, {"q25", s.q25},
              {"q75", s.q75},   {"min", s.min},       {"max", s.max},
              {"count", s.count}};
}

// ---------------------------------------------------------------------------
// Evaluation items

enum class AnchorMode { kUniformWindows, kEpisodeStarts };

inline std::vector<EvalItem> make_eval_items(const Dataset& ds, std::size_t horizon,
                                             std::size_t n_eval, std::uint64_t seed,
                                             AnchorMode mode) {
  if (ds.episodes.empty()) throw ValidationError("make_eval_items: empty dataset");
  for (const Episode& ep : ds.episodes)
    if (ep.length() < horizon)
      throw ValidationError("make_eval_items: episode shorter than horizon");

  Rng rng(mix_seed(seed, 0xe7a1));
  std::vector<EvalItem> items;
  items.reserve(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i) {
    const Episode& ep = ds.episodes[rng.uniform_index(ds.episodes.size())];
    const std::size_t anchor = mode == AnchorMode::kEpisodeStarts
                                   ? 0
                                   : rng.uniform_index(ep.length() - horizon + 1);
    EvalItem it;
    it.reference.x0 = ep.state_at(anchor);
    it.reference.states = slice(ep.states, 0, anchor, horizon);
    it.command = ep.command;
    it.tag = ds.tag();
    // one noise seed per item, independent of the method consuming it
    it.noise_seed = mix_seed(seed, 0x105e + i);
    items.push_back(std::move(it));
  }
  return items;
}

// ---------------------------------------------------------------------------
// Method samplers

enum class SampleOutput { kDefault, kSaState, kSaRollout };

inline MethodSampler model_sampler(const ModelSpec& m, const Parameters& params,
                                   std::size_t flow_steps,
                                   SampleOutput output = SampleOutput::kDefault) {
  return [&m, &params, flow_steps, output](const EvalItem& item) {
    SamplerConfig cfg{flow_steps, item.noise_seed};
    SampleResult res = sample(m, params, item.reference.x0,
                              Conditioning{item.reference.x0, item.command, item.tag}, cfg);
    switch (output) {
      case SampleOutput::kSaRollout:
        if (!res.has_actions)
          throw ValidationError("sa_rollout output requested from an action-free method");
        return res.rollout;
      case SampleOutput::kSaState:
        return res.trajectory;
      case SampleOutput::kDefault:
        break;
    }
    return res.trajectory;
  };
}

// Tracker-based method: plans come from an inner sampler and are executed by
// the inverse-dynamics tracker; the evaluated trajectory is the execution.
inline MethodSampler tracker_sampler(const SystemSpec& spec, MethodSampler plans,
                                     IdSolverConfig id_cfg) {
  return [&spec, plans = std::move(plans), id_cfg](const EvalItem& item) {
    StateTrajectory plan = plans(item);
    return tracker_rollout(spec, plan, item.reference.x0, id_cfg).executed;
  };
}

// The dataset itself as a "method": reproduces intrinsic SAE with TRE = 0.
inline MethodSampler reference_sampler() {
  return [](const EvalItem& item) { return item.reference; };
}

// ---------------------------------------------------------------------------
// Experiment: quantitative comparison (physical consistency + fidelity)

struct CompareMethodSpec {
  std::string label;
  MethodSampler sampler;
};

inline std::vector<EvalReport> quantitative_compare(
    const SystemSpec& spec, const std::string& dataset_label,
    const std::vector<EvalItem>& items, const std::vector<CompareMethodSpec>& methods,
    const IdSolverConfig& id_cfg, std::uint64_t seed, std::size_t n_threads) {
  std::vector<EvalReport> reports;
  for (const CompareMethodSpec& ms : methods) {
    EvalReport rep = evaluate_method(ms.sampler, items, spec, id_cfg, n_threads);
    rep.method = ms.label;
    rep.dataset = dataset_label;
    rep.seed = seed;
    reports.push_back(std::move(rep));
  }
  return reports;
}

inline void write_eval_report_json(const ExperimentContext& ctx, const EvalReport& rep,
                                   const std::string& filename) {
  json j;
  j["experiment"] = "quantitative_compare";
  j["method"] = rep.method;
  j["dataset"] = rep.dataset;
  j["seed"] = rep.seed;
  j["config"] = ctx.config_echo;
  j["sae"] = {{"stats", box_stats_json(rep.sae_stats)}, {"per_item", rep.sae_per_item}};
  j["tre"] = {{"stats", box_stats_json(rep.tre_stats)}, {"per_item", rep.tre_per_item}};
  write_text_file(ctx.out_dir / filename, j.dump(2) + "\n");
}

inline void write_compare_outputs(const ExperimentContext& ctx,
                                  const std::vector<EvalReport>& reports) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ostringstream summary;
  summary << "method,dataset,metric,mean,median,q25,q75,min,max,count\n";
  std::ostringstream raw;
  raw << "method,dataset,item,transition,sae\n";
  std::ostringstream tre_rows;
  tre_rows << "method,dataset,item,tre\n";

  for (const EvalReport& rep : reports) {
    auto line = [&](const char* metric, const BoxStats& s) {
      summary << rep.method << ',' << rep.dataset << ',' << metric << ','
              << fmt_double(s.mean) << ',' << fmt_double(s.median) << ','
              << fmt_double(s.q25) << ',' << fmt_double(s.q75) << ','
              << fmt_double(s.min) << ',' << fmt_double(s.max) << ',' << s.count << '\n';
    };
    line("sae", rep.sae_stats);
    line("tre", rep.tre_stats);
    for (std::size_t i = 0; i < rep.sae_per_item.size(); ++i)
      for (std::size_t k = 0; k < rep.sae_per_item[i].size(); ++k)
        raw << rep.method << ',' << rep.dataset << ',' << i << ',' << k << ','
            << fmt_double(rep.sae_per_item[i][k]) << '\n';
    for (std::size_t i = 0; i < rep.tre_per_item.size(); ++i)
      tre_rows << rep.method << ',' << rep.dataset << ',' << i << ','
               << fmt_double(rep.tre_per_item[i]) << '\n';
    write_eval_report_json(ctx, rep, "report_" + rep.method + "_" + rep.dataset + ".json");
  }
  write_text_file(ctx.out_dir / "compare_summary.csv", summary.str());
  write_text_file(ctx.out_dir / "compare_sae_raw.csv", raw.str());
  write_text_file(ctx.out_dir / "compare_tre_raw.csv", tre_rows.str());
}

// ---------------------------------------------------------------------------
// Experiment: trackability (execute each method's plans with the ID tracker)

struct TrackingOutcome {
  std::string method;
  std::size_t item = 0;
  bool success = true;       // failure predicate never fired
  int failure_step = -1;
  double terminal_error = 0.0;
  bool trackable = true;     // success && terminal_error <= threshold
};

struct TrackingAnalysis {
  std::vector<TrackingOutcome> outcomes;
  std::map<std::string, double> trackable_rate;
  // per (method, item): executed and planned trajectories for the time series
  std::vector<std::pair<TrackingOutcome, std::pair<StateTrajectory, StateTrajectory>>> traces;
};

inline TrackingAnalysis tracking_analysis(const SystemSpec& spec,
                                          const std::vector<EvalItem>& items,
                                          const std::vector<CompareMethodSpec>& methods,
                                          const IdSolverConfig& id_cfg,
                                          double terminal_error_threshold,
                                          std::size_t n_threads) {
  TrackingAnalysis out;
  for (const CompareMethodSpec& ms : methods) {
    std::vector<TrackingOutcome> rows(items.size());
    std::vector<std::pair<StateTrajectory, StateTrajectory>> traces(items.size());
    parallel_for(items.size(), n_threads, [&](std::size_t i) {
      StateTrajectory plan = ms.sampler(items[i]);
      TrackResult tr = tracker_rollout(spec, plan, items[i].reference.x0, id_cfg);
      TrackingOutcome o;
      o.method = ms.label;
      o.item = i;
      o.success = tr.success;
      o.failure_step = tr.failure_step;
      o.terminal_error = tr.terminal_error;
      o.trackable = tr.success && tr.terminal_error <= terminal_error_threshold;
      rows[i] = std::move(o);
      traces[i] = {tr.executed, plan};
    });
    double ok = 0.0;
    for (const auto& o : rows) ok += o.trackable ? 1.0 : 0.0;
    out.trackable_rate[ms.label] = items.empty() ? 0.0 : ok / static_cast<double>(items.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.traces.push_back({rows[i], traces[i]});
    out.outcomes.insert(out.outcomes.end(), rows.begin(), rows.end());
  }
  return out;
}

inline void write_tracking_outputs(const ExperimentContext& ctx, const SystemSpec& spec,
                                   const TrackingAnalysis& ta) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ostringstream rows;
  rows << "method,item,success,failure_step,terminal_error,trackable\n";
  for (const TrackingOutcome& o : ta.outcomes)
    rows << o.method << ',' << o.item << ',' << (o.success ? 1 : 0) << ','
         << o.failure_step << ',' << fmt_double(o.terminal_error) << ','
         << (o.trackable ? 1 : 0) << '\n';
  write_text_file(ctx.out_dir / "tracking_outcomes.csv", rows.str());

  std::ostringstream series;
  series << "method,item,step";
  for (std::size_t d = 0; d < spec.state_dim; ++d) series << ",exec_" << d;
  for (std::size_t d = 0; d < spec.state_dim; ++d) series << ",plan_" << d;
  series << ",failed\n";
  for (const auto& [o, pair] : ta.traces) {
    const auto& [exec, plan] = pair;
    for (std::size_t i = 0; i < exec.horizon(); ++i) {
      series << o.method << ',' << o.item << ',' << i;
      for (std::size_t d = 0; d < spec.state_dim; ++d)
        series << ',' << fmt_double(exec.states.at(i, d));
      for (std::size_t d = 0; d < spec.state_dim; ++d)
        series << ',' << fmt_double(plan.states.at(i, d));
      const bool failed = o.failure_step >= 0 && i >= static_cast<std::size_t>(o.failure_step);
      series << ',' << (failed ? 1 : 0) << '\n';
    }
  }
  write_text_file(ctx.out_dir / "tracking_timeseries.csv", series.str());

  json j;
  j["experiment"] = "tracking_analysis";
  j["config"] = ctx.config_echo;
  for (const auto& [label, rate] : ta.trackable_rate) j["trackable_rate"][label] = rate;
  write_text_file(ctx.out_dir / "tracking_summary.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Experiment: open-loop chaining (final state of one segment seeds the next)

struct ChainResult {
  StateTrajectory trajectory;   // full chained rollout from the initial state
  ActionTrajectory actions;     // concatenated action sequence
  double mean_command_error = 0.0;  // task-space error against the command
  double max_sae = 0.0;
  std::size_t n_segments = 0;
};

inline ChainResult open_loop_chain(const ModelSpec& m, const Parameters& params,
                                   const Tensor& x0, const Tensor& command, int tag,
                                   std::size_t n_segments, std::size_t flow_steps,
                                   std::uint64_t seed, const IdSolverConfig& id_cfg,
                                   std::size_t n_threads = 1) {
  if (n_segments < 1) throw ValidationError("open_loop_chain: n_segments >= 1 required");
  const std::size_t horizon = m.horizon();
  Tensor all_u = Tensor::zeros({n_segments * horizon, m.system.action_dim});
  Tensor x = x0;
  for (std::size_t s = 0; s < n_segments; ++s) {
    SamplerConfig cfg{flow_steps, mix_seed(seed, 0xc4a1 + s)};
    SampleResult res = sample(m, params, x, Conditioning{x, command, tag}, cfg);
    if (!res.has_actions)
      throw ValidationError("open_loop_chain: method produces no actions");
    for (std::size_t i = 0; i < horizon; ++i)
      for (std::size_t d = 0; d < m.system.action_dim; ++d)
        all_u.at(s * horizon + i, d) = res.actions.actions.at(i, d);
    x = reshape(res.rollout.state(horizon - 1), {m.system.state_dim});
  }

  ChainResult out;
  out.n_segments = n_segments;
  out.actions.actions = all_u;
  out.trajectory = rollout(m.system, x0, out.actions);

  double err_acc = 0.0;
  const std::size_t total = out.trajectory.horizon();
  for (std::size_t i = 0; i < total; ++i) {
    if (m.system.kind == SystemKind::kDoubleIntegrator) {
      const double ex = out.trajectory.states.at(i, 2) - command[0];
      const double ey = out.trajectory.states.at(i, 3) - command[1];
      err_acc += std::sqrt(ex * ex + ey * ey);
    } else {
      err_acc += std::abs(wrap_angle(out.trajectory.states.at(i, 0) - command[0]));
    }
  }
  out.mean_command_error = err_acc / static_cast<double>(total);

  std::vector<double> sae_vals(total);
  {
    // per-transition solves are independent; fan out
    std::vector<Tensor> states(total + 1);
    states[0] = x0;
    for (std::size_t i = 0; i < total; ++i)
      states[i + 1] = reshape(out.trajectory.state(i), {m.system.state_dim});
    parallel_for(total, n_threads, [&](std::size_t i) {
      sae_vals[i] = inverse_dynamics(m.system, states[i], states[i + 1], id_cfg).residual;
    });
  }
  for (double v : sae_vals) out.max_sae = std::max(out.max_sae, v);
  return out;
}

inline void write_chain_outputs(const ExperimentContext& ctx, const SystemSpec& spec,
                                const Tensor& command, const ChainResult& cr) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ostringstream rows;
  rows << "step";
  for (std::size_t d = 0; d < spec.state_dim; ++d) rows << ",x_" << d;
  for (std::size_t d = 0; d < spec.action_dim; ++d) rows << ",u_" << d;
  rows << '\n';
  for (std::size_t i = 0; i < cr.trajectory.horizon(); ++i) {
    rows << i;
    for (std::size_t d = 0; d < spec.state_dim; ++d)
      rows << ',' << fmt_double(cr.trajectory.states.at(i, d));
    for (std::size_t d = 0; d < spec.action_dim; ++d)
      rows << ',' << fmt_double(cr.actions.actions.at(i, d));
    rows << '\n';
  }
  write_text_file(ctx.out_dir / "chain_trajectory.csv", rows.str());

  json j;
  j["experiment"] = "open_loop_chain";
  j["config"] = ctx.config_echo;
  j["n_segments"] = cr.n_segments;
  j["total_steps"] = cr.trajectory.horizon();
  j["command"] = command.data();
  j["mean_command_error"] = cr.mean_command_error;
  j["max_sae"] = cr.max_sae;
  write_text_file(ctx.out_dir / "chain_summary.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Experiment: robustness to external disturbances (receding-horizon loop)

struct DisturbMethod {
  std::string label;
  const ModelSpec* model = nullptr;
  const Parameters* params = nullptr;
};

struct DisturbConfig {
  std::vector<std::size_t> windows{5, 10};     // replan every w steps, execute w actions
  std::vector<std::size_t> flow_steps{1, 2, 5};
  // per-trial force magnitude is drawn uniformly in [0, cell magnitude], with
  // a random direction; the cell value is the "up to" bound
  std::vector<double> magnitudes{0.0, 3.0, 6.0, 9.0};
  std::size_t n_trials = 100;
  std::size_t episode_steps = 60;
  std::size_t disturb_begin = 15, disturb_end = 35;  // [begin, end)
  Tensor command;  // task command shared by every trial
  int tag = 0;
  std::uint64_t seed = 0;
};

struct DisturbCell {
  std::string method;
  std::size_t window = 0;
  std::size_t flow_steps = 0;
  double magnitude = 0.0;
  std::size_t trials = 0;
  double survival_rate = 0.0;
};

// All trials of a cell advance in lockstep so network evaluations batch
// across trials. Noise seeds depend only on (sweep seed, trial, step), so
// every method replans from identical draws.
inline std::vector<DisturbCell> disturbance_sweep(const std::vector<DisturbMethod>& methods,
                                                  const DisturbConfig& cfg) {
  for (const DisturbMethod& dm : methods) {
    if (!dm.model || !dm.params) throw ValidationError("disturbance_sweep: null method");
    if (dm.model->method == Method::kVanillaState)
      throw ValidationError("disturbance_sweep: method must produce actions");
  }

  std::vector<DisturbCell> cells;
  for (std::size_t window : cfg.windows) {
    if (window < 1) throw ValidationError("disturbance_sweep: window >= 1 required");
    for (std::size_t nf : cfg.flow_steps) {
      for (double mag : cfg.magnitudes) {
        for (const DisturbMethod& dm : methods) {
          const ModelSpec& m = *dm.model;
          const SystemSpec& spec = m.system;
          const std::size_t B = cfg.n_trials;

          // per-trial initial states and disturbance draws; the RNG stream
          // depends only on (sweep seed, trial), so trials pair up across
          // methods and across cells
          Tensor x = Tensor::zeros({B, spec.state_dim});
          Tensor dist_force = Tensor::zeros({B, spec.action_dim});
          for (std::size_t b = 0; b < B; ++b) {
            Rng rng(mix_seed(cfg.seed, 0xd157 + b));
            double dir_x = 1.0, dir_y = 0.0;
            if (spec.kind == SystemKind::kDoubleIntegrator) {
              x.at(b, 0) = rng.uniform(-0.2, 0.2);
              x.at(b, 1) = rng.uniform(-0.2, 0.2);
              x.at(b, 2) = cfg.command[0] + rng.uniform(-0.1, 0.1);
              x.at(b, 3) = cfg.command[1] + rng.uniform(-0.1, 0.1);
              const double ang = rng.uniform(0.0, kTwoPi);
              dir_x = std::cos(ang);
              dir_y = std::sin(ang);
            } else {
              x.at(b, 0) = wrap_angle(cfg.command[0] + rng.uniform(-0.2, 0.2));
              x.at(b, 1) = rng.uniform(-0.2, 0.2);
              dir_x = rng.uniform() < 0.5 ? -1.0 : 1.0;
            }
            const double strength = mag * rng.uniform();  // "up to" the bound
            dist_force.at(b, 0) = strength * dir_x;
            if (spec.action_dim > 1) dist_force.at(b, 1) = strength * dir_y;
          }

          Tensor cond_rows = Tensor::zeros({B, m.net.cond_dim});
          std::vector<bool> alive(B, true);
          Tensor plan = Tensor::zeros({B, m.horizon() * spec.action_dim});

          for (std::size_t k = 0; k < cfg.episode_steps; ++k) {
            if (k % window == 0) {
              for (std::size_t b = 0; b < B; ++b) {
                Conditioning c{reshape(slice(x, 0, b, 1), {spec.state_dim}), cfg.command,
                               cfg.tag};
                Tensor cv = conditioning_vector(c, m.norm);
                for (std::size_t j = 0; j < cv.numel(); ++j) cond_rows.at(b, j) = cv[j];
              }
              std::vector<std::uint64_t> seeds(B);
              for (std::size_t b = 0; b < B; ++b)
                seeds[b] = mix_seed(cfg.seed, (0xf10 + k) * 131071ULL + b);
              SampleRows sr = sample_rows(m, *dm.params, x, cond_rows, nf, seeds);
              plan = sr.actions;  // both qualifying methods produce actions
            }
            const std::size_t offset = (k % window) * spec.action_dim;
            Tensor u = slice(plan, 1, offset, spec.action_dim);
            Tensor d = Tensor::zeros({B, spec.action_dim});
            if (k >= cfg.disturb_begin && k < cfg.disturb_end && mag > 0.0)
              d = dist_force;
            x = step_rows_disturbed(spec, x, u, d);
            for (std::size_t b = 0; b < B; ++b) {
              if (!alive[b]) continue;
              Tensor xb = reshape(slice(x, 0, b, 1), {spec.state_dim});
              if (failure_predicate(spec, xb)) alive[b] = false;
            }
          }

          DisturbCell cell;
          cell.method = dm.label;
          cell.window = window;
          cell.flow_steps = nf;
          cell.magnitude = mag;
          cell.trials = B;
          double ok = 0.0;
          for (bool a : alive) ok += a ? 1.0 : 0.0;
          cell.survival_rate = ok / static_cast<double>(B);
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

inline void write_disturb_outputs(const ExperimentContext& ctx,
                                  const std::vector<DisturbCell>& cells) {
  std::filesystem::create_directories(ctx.out_dir);
  std::ostringstream rows;
  rows << "method,window,flow_steps,magnitude,trials,survival_rate\n";
  for (const DisturbCell& c : cells)
    rows << c.method << ',' << c.window << ',' << c.flow_steps << ','
         << fmt_double(c.magnitude) << ',' << c.trials << ','
         << fmt_double(c.survival_rate) << '\n';
  write_text_file(ctx.out_dir / "survival.csv", rows.str());

  json j;
  j["experiment"] = "disturbance_sweep";
  j["config"] = ctx.config_echo;
  j["cells"] = json::array();
  for (const DisturbCell& c : cells)
    j["cells"].push_back({{"method", c.method},
                          {"window", c.window},
                          {"flow_steps", c.flow_steps},
                          {"magnitude", c.magnitude},
                          {"trials", c.trials},
                          {"survival_rate", c.survival_rate}});
  write_text_file(ctx.out_dir / "disturb_summary.json", j.dump(2) + "\n");
}

}  // namespace dynaflow
