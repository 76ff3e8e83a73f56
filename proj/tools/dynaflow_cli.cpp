// Command-line harness: dataset generation, training, and the four
// experiment protocols, emitting CSV/JSON results for external plotting.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynaflow/experiments.hpp"

namespace fs = std::filesystem;
using namespace dynaflow;

namespace {

fs::path default_out_dir() {
  if (const char* env = std::getenv("DYNAFLOW_OUT_DIR")) return fs::path(env);
  return fs::path("out");
}

NetworkConfig net_config_for(const SystemSpec& spec, const Dataset& ds,
                             std::size_t width, std::size_t layers, std::size_t horizon) {
  NetworkConfig nc;
  nc.hidden_width = width;
  nc.n_hidden_layers = layers;
  nc.horizon = horizon;
  nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
  return nc;
}

Checkpoint load_checked(const fs::path& path, const Dataset* ds = nullptr) {
  Checkpoint ck = load_checkpoint(path);
  if (ds) check_checkpoint_compatible(ck, *ds);
  return ck;
}

json dataset_summary_json(const SystemSpec& spec, const Dataset& ds,
                          const DatasetSae& s) {
  json j;
  j["system"] = ds.system_name;
  j["provenance"] = provenance_name(ds.provenance);
  j["episodes"] = ds.episodes.size();
  j["episode_len"] = ds.episodes.empty() ? 0 : ds.episodes[0].length();
  j["transitions"] = s.transitions;
  j["mean_sae_raw"] = s.mean_raw;
  j["mean_sae_normalized"] = s.mean_normalized;
  j["max_sae_raw"] = s.max_raw;
  (void)spec;
  return j;
}

struct CommonOpts {
  std::size_t threads = 4;
  std::uint64_t seed = 0;
  fs::path out = default_out_dir();
};

int run(int argc, char** argv) {
  CLI::App app{"dynamics-embedded flow matching experiment harness"};
  app.set_config("--config", "", "read defaults from a TOML/INI config file");
  app.require_subcommand(1);

  // ---- gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "generate a dataset file");
  std::string g_system = "double_integrator", g_regime = "expert",
              g_style = "instant_swingup";
  std::size_t g_episodes = 0, g_steps = 0;
  double g_noise = 0.05, g_floor = 0.01;
  CommonOpts g_c;
  fs::path g_out_file;
  gen->add_option("--system", g_system, "double_integrator|pendulum");
  gen->add_option("--regime", g_regime, "expert|kinematic");
  gen->add_option("--style", g_style, "instant_swingup|overshoot_dash (kinematic)");
  gen->add_option("--episodes", g_episodes, "episode count (0 = regime default)");
  gen->add_option("--steps", g_steps, "episode length (0 = regime default)");
  gen->add_option("--action-noise", g_noise, "expert exploration noise");
  gen->add_option("--sae-floor", g_floor, "kinematic normalized SAE floor");
  gen->add_option("--seed", g_c.seed, "rng seed");
  gen->add_option("--threads", g_c.threads, "worker threads");
  gen->add_option("--out", g_out_file, "output dataset path")->required();

  // ---- train --------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  std::string t_method = "dynaflow";
  fs::path t_dataset, t_ckpt, t_log;
  TrainConfig t_cfg;
  std::size_t t_width = 256, t_layers = 3, t_horizon = 16, t_log_every = 50;
  tr->add_option("--method", t_method, "dynaflow|vanilla|sa_flow");
  tr->add_option("--dataset", t_dataset, "dataset file")->required();
  tr->add_option("--out", t_ckpt, "checkpoint output path")->required();
  tr->add_option("--log", t_log, "loss CSV path (default <out>.loss.csv)");
  tr->add_option("--steps", t_cfg.n_steps, "gradient steps");
  tr->add_option("--lr", t_cfg.learning_rate, "learning rate");
  tr->add_option("--batch", t_cfg.batch_size, "batch size");
  tr->add_option("--ema", t_cfg.ema_decay, "EMA decay");
  tr->add_option("--clip", t_cfg.grad_clip_norm, "gradient clip norm (<=0 off)");
  tr->add_option("--velocity-weight", t_cfg.velocity_weight, "loss weight on velocity dims");
  tr->add_option("--seed", t_cfg.seed, "rng seed");
  tr->add_option("--width", t_width, "hidden width");
  tr->add_option("--layers", t_layers, "hidden layers");
  tr->add_option("--horizon", t_horizon, "prediction horizon H");
  tr->add_option("--log-every", t_log_every, "log cadence in steps");

  // ---- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "run an evaluation experiment");
  std::string e_experiment = "quantitative_compare";
  fs::path e_dataset;
  fs::path e_ck_dynaflow, e_ck_vanilla, e_ck_sa;
  bool e_with_tracker = false, e_with_reference = false;
  std::size_t e_n_eval = 64, e_flow_steps = 5;
  double e_terminal_threshold = 0.5;
  std::string e_anchor = "uniform";
  CommonOpts e_c;
  ev->add_option("--experiment", e_experiment, "quantitative_compare|tracking_analysis");
  ev->add_option("--dataset", e_dataset, "dataset file")->required();
  ev->add_option("--ckpt-dynaflow", e_ck_dynaflow, "dynaflow checkpoint");
  ev->add_option("--ckpt-vanilla", e_ck_vanilla, "vanilla checkpoint");
  ev->add_option("--ckpt-sa", e_ck_sa, "sa_flow checkpoint");
  ev->add_flag("--with-tracker", e_with_tracker, "add tracker-on-vanilla method");
  ev->add_flag("--with-reference", e_with_reference, "evaluate the dataset itself");
  ev->add_option("--n-eval", e_n_eval, "evaluation items");
  ev->add_option("--flow-steps", e_flow_steps, "sampler Euler steps");
  ev->add_option("--terminal-threshold", e_terminal_threshold,
                 "tracking terminal-error threshold");
  ev->add_option("--anchor", e_anchor, "uniform|episode_start window anchors");
  ev->add_option("--seed", e_c.seed, "rng seed");
  ev->add_option("--threads", e_c.threads, "worker threads");
  ev->add_option("--out", e_c.out, "output directory");

  // ---- chain --------------------------------------------------------------
  auto* ch = app.add_subcommand("chain", "open-loop segment chaining");
  fs::path c_ckpt;
  std::size_t c_segments = 28, c_flow_steps = 1;
  std::vector<double> c_command{0.5, 0.0};
  std::vector<double> c_x0;
  CommonOpts c_c;
  ch->add_option("--ckpt", c_ckpt, "checkpoint (action-producing method)")->required();
  ch->add_option("--segments", c_segments, "number of chained segments");
  ch->add_option("--flow-steps", c_flow_steps, "sampler Euler steps");
  ch->add_option("--command", c_command, "task command vector");
  ch->add_option("--x0", c_x0, "initial state (default rest)");
  ch->add_option("--seed", c_c.seed, "rng seed");
  ch->add_option("--threads", c_c.threads, "worker threads");
  ch->add_option("--out", c_c.out, "output directory");

  // ---- disturb ------------------------------------------------------------
  auto* di = app.add_subcommand("disturb", "disturbance-robustness sweep");
  fs::path d_ck_dynaflow, d_ck_sa;
  DisturbConfig d_cfg;
  std::vector<double> d_command{0.5, 0.0};
  CommonOpts d_c;
  di->add_option("--ckpt-dynaflow", d_ck_dynaflow, "dynaflow checkpoint")->required();
  di->add_option("--ckpt-sa", d_ck_sa, "sa_flow checkpoint");
  di->add_option("--windows", d_cfg.windows, "replanning windows");
  di->add_option("--flow-steps", d_cfg.flow_steps, "sampler Euler steps set");
  di->add_option("--magnitudes", d_cfg.magnitudes, "disturbance magnitudes");
  di->add_option("--trials", d_cfg.n_trials, "trials per cell");
  di->add_option("--episode-steps", d_cfg.episode_steps, "steps per trial");
  di->add_option("--disturb-begin", d_cfg.disturb_begin, "first disturbed step");
  di->add_option("--disturb-end", d_cfg.disturb_end, "one past last disturbed step");
  di->add_option("--command", d_command, "task command vector");
  di->add_option("--seed", d_cfg.seed, "rng seed");
  di->add_option("--out", d_c.out, "output directory");

  CLI11_PARSE(app, argc, argv);

  IdSolverConfig id_cfg;

  if (gen->parsed()) {
    SystemSpec spec = make_system(g_system);
    Dataset ds;
    if (g_regime == "expert") {
      ExpertGenConfig cfg;
      if (g_episodes) cfg.n_episodes = g_episodes;
      if (g_steps) cfg.episode_len = g_steps;
      cfg.action_noise = g_noise;
      cfg.seed = g_c.seed;
      ds = generate_expert(spec,
                           spec.kind == SystemKind::kDoubleIntegrator
                               ? ExpertController::kPdRegulator
                               : ExpertController::kEnergySwingup,
                           cfg);
    } else if (g_regime == "kinematic") {
      KinematicGenConfig cfg;
      cfg.style = parse_style(g_style);
      if (g_episodes) cfg.n_episodes = g_episodes;
      if (g_steps) cfg.episode_len = g_steps;
      else cfg.episode_len = cfg.style == KinematicStyle::kInstantSwingup ? 30 : 40;
      cfg.seed = g_c.seed;
      cfg.sae_floor = g_floor;
      ds = generate_kinematic(spec, cfg, id_cfg, g_c.threads);
    } else {
      throw ValidationError("unknown regime: " + g_regime);
    }
    if (g_out_file.has_parent_path())
      fs::create_directories(g_out_file.parent_path());
    write_dataset(ds, g_out_file);
    DatasetSae s = dataset_sae(spec, ds, id_cfg, g_c.threads);
    json summary = dataset_summary_json(spec, ds, s);
    summary["file"] = g_out_file.string();
    summary["sha256"] = sha256_file(g_out_file);
    std::cout << summary.dump(2) << "\n";
    return 0;
  }

  if (tr->parsed()) {
    Method method = parse_method(t_method);
    Dataset ds = read_dataset(t_dataset);
    if (method == Method::kSaFlow && !ds.has_actions())
      throw ValidationError("dataset lacks actions");
    SystemSpec spec = make_system(ds.system_name);
    NetworkConfig nc = net_config_for(spec, ds, t_width, t_layers, t_horizon);
    ModelSpec m = make_model_spec(method, spec, nc, ds.norm);

    std::ostringstream log;
    log << "step,loss,grad_norm\n";
    std::vector<TrainLogRow> rows;
    TrainState st = train(m, ds, t_cfg, &rows);
    for (const TrainLogRow& r : rows)
      if (r.step == 1 || r.step % t_log_every == 0 || r.step == t_cfg.n_steps)
        log << r.step << ',' << fmt_double(r.loss) << ',' << fmt_double(r.grad_norm)
            << '\n';

    if (t_ckpt.has_parent_path()) fs::create_directories(t_ckpt.parent_path());
    save_checkpoint(Checkpoint{m, t_cfg, st}, t_ckpt);
    fs::path log_path = t_log.empty() ? fs::path(t_ckpt.string() + ".loss.csv") : t_log;
    write_text_file(log_path, log.str());

    json summary;
    summary["method"] = method_name(method);
    summary["dataset"] = t_dataset.string();
    summary["dataset_sha256"] = sha256_file(t_dataset);
    summary["steps"] = st.step;
    summary["final_loss"] = rows.empty() ? 0.0 : rows.back().loss;
    summary["checkpoint"] = t_ckpt.string();
    summary["checkpoint_sha256"] = sha256_file(t_ckpt);
    std::cout << summary.dump(2) << "\n";
    return 0;
  }

  if (ev->parsed()) {
    Dataset ds = read_dataset(e_dataset);
    SystemSpec spec = make_system(ds.system_name);

    ExperimentContext ctx;
    ctx.out_dir = e_c.out;
    ctx.n_threads = e_c.threads;
    ctx.config_echo = {{"experiment", e_experiment}, {"dataset", e_dataset.string()},
                       {"n_eval", e_n_eval},         {"flow_steps", e_flow_steps},
                       {"seed", e_c.seed},           {"anchor", e_anchor}};
    echo_input_hash(ctx, "dataset", e_dataset);

    std::vector<Checkpoint> holder;
    holder.reserve(3);
    std::vector<CompareMethodSpec> methods;
    std::size_t horizon = 16;

    auto add_model = [&](const fs::path& path, const std::string& label,
                         SampleOutput output) {
      if (path.empty()) return;
      holder.push_back(load_checked(path, &ds));
      const Checkpoint& ck = holder.back();
      horizon = ck.model.horizon();
      echo_input_hash(ctx, label, path);
      methods.push_back({label, model_sampler(ck.model, ck.state.ema, e_flow_steps, output)});
    };
    add_model(e_ck_dynaflow, "dynaflow", SampleOutput::kDefault);
    add_model(e_ck_vanilla, "vanilla", SampleOutput::kDefault);
    if (!e_ck_sa.empty()) {
      holder.push_back(load_checked(e_ck_sa, &ds));
      const Checkpoint& ck = holder.back();
      horizon = ck.model.horizon();
      echo_input_hash(ctx, "sa_flow", e_ck_sa);
      methods.push_back(
          {"sa_state", model_sampler(ck.model, ck.state.ema, e_flow_steps, SampleOutput::kSaState)});
      methods.push_back({"sa_rollout",
                         model_sampler(ck.model, ck.state.ema, e_flow_steps, SampleOutput::kSaRollout)});
    }
    if (methods.empty() && !e_with_reference)
      throw ValidationError("eval: no checkpoints given");
    if (e_with_tracker) {
      if (e_ck_vanilla.empty())
        throw ValidationError("--with-tracker needs --ckpt-vanilla plans");
      const Checkpoint* vck = nullptr;
      for (std::size_t i = 0; i < holder.size(); ++i)
        if (holder[i].model.method == Method::kVanillaState) vck = &holder[i];
      methods.push_back({"tracker", tracker_sampler(spec,
                                                    model_sampler(vck->model, vck->state.ema,
                                                                  e_flow_steps),
                                                    id_cfg)});
    }
    if (e_with_reference) methods.push_back({"reference", reference_sampler()});

    AnchorMode anchor = e_anchor == "episode_start" ? AnchorMode::kEpisodeStarts
                                                    : AnchorMode::kUniformWindows;
    std::vector<EvalItem> items = make_eval_items(ds, horizon, e_n_eval, e_c.seed, anchor);

    if (e_experiment == "quantitative_compare") {
      auto reports = quantitative_compare(spec, provenance_name(ds.provenance), items,
                                          methods, id_cfg, e_c.seed, e_c.threads);
      write_compare_outputs(ctx, reports);
      for (const EvalReport& r : reports)
        std::cout << r.method << ": sae_mean=" << fmt_double(r.sae_stats.mean)
                  << " tre_mean=" << fmt_double(r.tre_stats.mean) << "\n";
    } else if (e_experiment == "tracking_analysis") {
      TrackingAnalysis ta = tracking_analysis(spec, items, methods, id_cfg,
                                              e_terminal_threshold, e_c.threads);
      write_tracking_outputs(ctx, spec, ta);
      for (const auto& [label, rate] : ta.trackable_rate)
        std::cout << label << ": trackable_rate=" << fmt_double(rate) << "\n";
    } else {
      throw ValidationError("unknown experiment: " + e_experiment);
    }
    return 0;
  }

  if (ch->parsed()) {
    Checkpoint ck = load_checkpoint(c_ckpt);
    const SystemSpec& spec = ck.model.system;
    if (c_command.size() != (spec.kind == SystemKind::kDoubleIntegrator ? 2u : 1u))
      throw ValidationError("chain: command width mismatch for system " + spec.name);
    Tensor x0;
    if (c_x0.empty()) {
      x0 = spec.kind == SystemKind::kDoubleIntegrator
               ? Tensor::vec({0.0, 0.0, 0.0, 0.0})
               : Tensor::vec({kPi, 0.0});
    } else {
      if (c_x0.size() != spec.state_dim) throw ValidationError("chain: x0 dim mismatch");
      x0 = Tensor::vec(c_x0);
    }

    ExperimentContext ctx;
    ctx.out_dir = c_c.out;
    ctx.n_threads = c_c.threads;
    ctx.config_echo = {{"experiment", "open_loop_chain"},
                       {"segments", c_segments},
                       {"flow_steps", c_flow_steps},
                       {"seed", c_c.seed},
                       {"command", c_command}};
    echo_input_hash(ctx, "checkpoint", c_ckpt);

    ChainResult cr = open_loop_chain(ck.model, ck.state.ema, x0, Tensor::vec(c_command),
                                     0, c_segments, c_flow_steps, c_c.seed, id_cfg,
                                     c_c.threads);
    write_chain_outputs(ctx, spec, Tensor::vec(c_command), cr);
    std::cout << "chain: steps=" << cr.trajectory.horizon()
              << " mean_command_error=" << fmt_double(cr.mean_command_error)
              << " max_sae=" << fmt_double(cr.max_sae) << "\n";
    return 0;
  }

  if (di->parsed()) {
    Checkpoint ck_df = load_checkpoint(d_ck_dynaflow);
    std::optional<Checkpoint> ck_sa;
    if (!d_ck_sa.empty()) ck_sa = load_checkpoint(d_ck_sa);

    d_cfg.command = Tensor::vec(d_command);
    std::vector<DisturbMethod> methods;
    methods.push_back({"dynaflow", &ck_df.model, &ck_df.state.ema});
    if (ck_sa) methods.push_back({"sa_rollout", &ck_sa->model, &ck_sa->state.ema});

    ExperimentContext ctx;
    ctx.out_dir = d_c.out;
    ctx.config_echo = {{"experiment", "disturbance_sweep"},
                       {"trials", d_cfg.n_trials},
                       {"episode_steps", d_cfg.episode_steps},
                       {"seed", d_cfg.seed},
                       {"command", d_command}};
    echo_input_hash(ctx, "ckpt_dynaflow", d_ck_dynaflow);
    if (ck_sa) echo_input_hash(ctx, "ckpt_sa", d_ck_sa);

    auto cells = disturbance_sweep(methods, d_cfg);
    write_disturb_outputs(ctx, cells);
    for (const DisturbCell& c : cells)
      std::cout << c.method << " w=" << c.window << " n=" << c.flow_steps
                << " mag=" << c.magnitude << " survival=" << fmt_double(c.survival_rate)
                << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CLI::Error&) {
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
