#include "dynaflow/baselines.hpp"

#include <gtest/gtest.h>

#include "dynaflow/datagen.hpp"

namespace dynaflow {
namespace {

Dataset make_expert_di(std::size_t episodes = 4, std::size_t len = 30) {
  ExpertGenConfig cfg;
  cfg.n_episodes = episodes;
  cfg.episode_len = len;
  cfg.seed = 8;
  return generate_expert(make_double_integrator(), ExpertController::kPdRegulator, cfg);
}

NetworkConfig small_net(const SystemSpec& spec, const Dataset& ds) {
  NetworkConfig nc;
  nc.hidden_width = 24;
  nc.n_hidden_layers = 2;
  nc.horizon = 6;
  nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
  return nc;
}

TEST(Vanilla, SamplesHaveStateShapeAndNoActions) {
  SystemSpec spec = make_double_integrator();
  Dataset ds = make_expert_di();
  ModelSpec m = make_vanilla_spec(spec, small_net(spec, ds), ds.norm);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.n_steps = 5;
  TrainState st = train_vanilla(m, ds, cfg);
  Tensor x0 = ds.episodes[0].x0;
  SampleResult res =
      sample(m, st.ema, x0, Conditioning{x0, ds.episodes[0].command, 0}, SamplerConfig{2, 3});
  EXPECT_EQ(res.trajectory.states.rows(), 6u);
  EXPECT_EQ(res.trajectory.states.cols(), 4u);
  EXPECT_FALSE(res.has_actions);
}

TEST(Vanilla, WrongMethodSpecIsRejected) {
  SystemSpec spec = make_double_integrator();
  Dataset ds = make_expert_di(1, 10);
  ModelSpec m = make_model_spec(Method::kDynaFlow, spec, small_net(spec, ds), ds.norm);
  EXPECT_THROW(train_vanilla(m, ds, TrainConfig{}), ValidationError);
}

TEST(SaFlow, RefusesDatasetsWithoutActions) {
  SystemSpec spec = make_pendulum();
  KinematicGenConfig kcfg;
  kcfg.n_episodes = 2;
  kcfg.episode_len = 24;
  Dataset kin = generate_kinematic(spec, kcfg, IdSolverConfig{}, 4);
  NetworkConfig nc;
  nc.hidden_width = 16;
  nc.n_hidden_layers = 1;
  nc.horizon = 6;
  nc.cond_dim = cond_width(spec.state_dim, kin.command_dim);
  // the dataset carries no action statistics at all
  EXPECT_THROW(make_sa_spec(spec, nc, kin.norm), ValidationError);

  // and even with borrowed statistics, training refuses actionless data
  Normalization norm = kin.norm;
  norm.action_mean = {0.0};
  norm.action_std = {1.0};
  ModelSpec m = make_sa_spec(spec, nc, norm);
  EXPECT_THROW(train_sa_flow(m, kin, TrainConfig{}), ValidationError);
}

TEST(SaFlow, RolloutVariantIsFeasible) {
  SystemSpec spec = make_double_integrator();
  Dataset ds = make_expert_di();
  ModelSpec m = make_sa_spec(spec, small_net(spec, ds), ds.norm);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.n_steps = 10;
  TrainState st = train_sa_flow(m, ds, cfg);
  IdSolverConfig id_cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x0 = ds.episodes[seed % ds.episodes.size()].x0;
    SampleResult res = sample(m, st.ema, x0,
                              Conditioning{x0, ds.episodes[0].command, 0},
                              SamplerConfig{2, seed});
    ASSERT_TRUE(res.has_actions);
    for (double r : sae(spec, res.rollout, id_cfg)) EXPECT_LT(r, 1e-8);
  }
}

TEST(Tracker, ReproducesItsOwnRollout) {
  SystemSpec spec = make_pendulum();
  Rng rng(13);
  Tensor u = Tensor::zeros({12, 1});
  for (double& v : u.data()) v = rng.uniform(-1.5, 1.5);
  Tensor x0 = Tensor::vec({2.0, -0.5});
  StateTrajectory plan = rollout(spec, x0, ActionTrajectory{u});
  TrackResult tr = tracker_rollout(spec, plan, x0, IdSolverConfig{});
  EXPECT_TRUE(tr.success);
  for (std::size_t i = 0; i < plan.horizon(); ++i)
    for (std::size_t d = 0; d < spec.state_dim; ++d)
      EXPECT_NEAR(tr.executed.states.at(i, d), plan.states.at(i, d), 1e-6);
  EXPECT_LT(tr.terminal_error, 1e-6);
}

TEST(Tracker, ConstantPlanAtEquilibriumNeedsZeroAction) {
  SystemSpec spec = make_pendulum();
  Tensor x0 = Tensor::vec({kPi, 0.0});
  StateTrajectory plan;
  plan.x0 = x0;
  plan.states = Tensor::zeros({8, 2});
  for (std::size_t i = 0; i < 8; ++i) plan.states.at(i, 0) = kPi;
  TrackResult tr = tracker_rollout(spec, plan, x0, IdSolverConfig{});
  EXPECT_TRUE(tr.success);
  EXPECT_LT(tr.terminal_error, 1e-8);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_LT(std::abs(tr.actions.actions.at(i, 0)), 1e-7);
}

TEST(Tracker, InstantSwingupPlanIsUntrackable) {
  SystemSpec spec = make_pendulum();
  KinematicGenConfig cfg;
  cfg.n_episodes = 1;
  cfg.episode_len = 16;
  cfg.max_start_delay = 0;
  cfg.seed = 3;
  Dataset ds = generate_kinematic(spec, cfg, IdSolverConfig{}, 4);
  StateTrajectory plan;
  plan.x0 = ds.episodes[0].x0;
  plan.states = slice(ds.episodes[0].states, 0, 0, 16);
  TrackResult tr = tracker_rollout(spec, plan, plan.x0, IdSolverConfig{});
  // torque-limited execution cannot match the demanded swing: either the
  // failure predicate fires or the terminal error is large
  EXPECT_TRUE(!tr.success || tr.terminal_error > 0.5);
}

TEST(Tracker, DeterministicGivenPlanAndConfig) {
  SystemSpec spec = make_double_integrator();
  Rng rng(15);
  Tensor u = Tensor::zeros({8, 2});
  for (double& v : u.data()) v = rng.uniform(-1, 1);
  Tensor x0 = rng.normal_tensor({4});
  StateTrajectory plan = rollout(spec, x0, ActionTrajectory{u});
  TrackResult a = tracker_rollout(spec, plan, x0, IdSolverConfig{});
  TrackResult b = tracker_rollout(spec, plan, x0, IdSolverConfig{});
  EXPECT_TRUE(equal_bits(a.executed.states, b.executed.states));
  EXPECT_TRUE(equal_bits(a.actions.actions, b.actions.actions));
}

}  // namespace
}  // namespace dynaflow
