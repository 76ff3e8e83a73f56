#include "dynaflow/flow.hpp"

#include <gtest/gtest.h>

#include "dynaflow/datagen.hpp"
#include "dynaflow/metrics.hpp"
#include "dynaflow/trainer.hpp"

namespace dynaflow {
namespace {

struct Fixture {
  SystemSpec spec;
  Dataset ds;
  ModelSpec model;

  explicit Fixture(Method method = Method::kDynaFlow, std::size_t horizon = 8,
                   std::size_t width = 32) {
    spec = make_pendulum();
    ExpertGenConfig gen;
    gen.n_episodes = 4;
    gen.episode_len = 40;
    gen.seed = 11;
    ds = generate_expert(spec, ExpertController::kEnergySwingup, gen);
    NetworkConfig nc;
    nc.hidden_width = width;
    nc.n_hidden_layers = 2;
    nc.horizon = horizon;
    nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
    model = make_model_spec(method, spec, nc, ds.norm);
  }
};

TEST(Interpolate, ScheduleEndpointsAndMidpoint) {
  Rng rng(1);
  Tensor x0 = rng.normal_tensor({4, 2});
  Tensor x1 = rng.normal_tensor({4, 2});
  EXPECT_TRUE(equal_bits(interpolate(x0, x1, 0.0), x0));
  EXPECT_TRUE(equal_bits(interpolate(x0, x1, 1.0), x1));
  Tensor mid = interpolate(Tensor::scalar(0.0), Tensor::scalar(2.0), 0.5);
  EXPECT_DOUBLE_EQ(mid[0], 1.0);
  EXPECT_THROW(interpolate(x0, rng.normal_tensor({2, 2}), 0.5), ValidationError);
  EXPECT_THROW(interpolate(x0, x1, 1.5), ValidationError);
}

TEST(Schedule, OtEndpoints) {
  EXPECT_EQ(FlowSchedule::alpha(0.0), 0.0);
  EXPECT_EQ(FlowSchedule::alpha(1.0), 1.0);
  EXPECT_EQ(FlowSchedule::sigma(0.0), 1.0);
  EXPECT_EQ(FlowSchedule::sigma(1.0), 0.0);
}

TEST(PosteriorMean, ZeroInitNetworkGivesPassiveRollout) {
  Fixture f;
  Parameters p = init_params(f.model.net, 0);
  Rng rng(2);
  Tensor xt = rng.normal_tensor({f.model.horizon(), f.model.flow_dim()});
  Tensor x0 = Tensor::vec({2.8, 0.4});
  Conditioning cond{x0, f.ds.episodes[0].command, 0};
  StateTrajectory xhat = posterior_mean(f.model, p, xt, cond, 0.3, x0);
  StateTrajectory passive = rollout(
      f.spec, x0, ActionTrajectory{Tensor::zeros({f.model.horizon(), 1})});
  for (std::size_t k = 0; k < xhat.states.numel(); ++k)
    EXPECT_NEAR(xhat.states[k], passive.states[k], 1e-12);
}

TEST(PosteriorMean, EquilibriumStaysConstant) {
  Fixture f;
  Parameters p = init_params(f.model.net, 0);
  Tensor x0 = Tensor::vec({kPi, 0.0});
  Rng rng(3);
  Tensor xt = rng.normal_tensor({f.model.horizon(), f.model.flow_dim()});
  StateTrajectory xhat =
      posterior_mean(f.model, p, xt, Conditioning{x0, Tensor::vec({0.0}), 0}, 0.1, x0);
  for (std::size_t i = 0; i < xhat.horizon(); ++i) {
    EXPECT_NEAR(xhat.states.at(i, 0), kPi, 1e-12);
    EXPECT_NEAR(xhat.states.at(i, 1), 0.0, 1e-12);
  }
}

TEST(PosteriorMean, FeasibleByConstructionEvenUntrained) {
  Fixture f;
  Parameters p = init_params(f.model.net, 7);
  Rng rng(4);
  // random parameters, not just the zero init
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.2 * rng.normal();
  Tensor x0 = Tensor::vec({rng.uniform(-3, 3), rng.uniform(-2, 2)});
  Tensor xt = rng.normal_tensor({f.model.horizon(), f.model.flow_dim()});
  StateTrajectory xhat =
      posterior_mean(f.model, p, xt, Conditioning{x0, Tensor::vec({0.0}), 0}, 0.6, x0);
  IdSolverConfig id_cfg;
  for (double r : sae(f.spec, xhat, id_cfg)) EXPECT_LT(r, 1e-8);
}

TEST(Velocity, OtIdentities) {
  FlowSchedule sched;
  Rng rng(5);
  Tensor xt = rng.normal_tensor({3, 2});
  Tensor xhat = rng.normal_tensor({3, 2});
  // t = 0: u = xhat - x0
  EXPECT_TRUE(equal_bits(velocity(sched, xt, xhat, 0.0), sub(xhat, xt)));
  // fixed point: xhat == xt gives zero velocity
  Tensor v0 = velocity(sched, xt, xt, 0.4);
  for (double v : v0.data()) EXPECT_EQ(v, 0.0);
  // arithmetic case: (2 - 1) / (1 - 0.5) = 2
  Tensor v = velocity(sched, Tensor::scalar(1.0), Tensor::scalar(2.0), 0.5);
  EXPECT_DOUBLE_EQ(v[0], 2.0);
  EXPECT_THROW(velocity(sched, xt, xhat, 0.9999), ValidationError);
}

TEST(Sample, OneStepIsExactlyPosteriorMeanRollout) {
  Fixture f;
  Rng rng(6);
  Parameters p = init_params(f.model.net, 13);
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.1 * rng.normal();

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor x0 = Tensor::vec({rng.uniform(-3, 3), rng.uniform(-1, 1)});
    Conditioning cond{x0, Tensor::vec({0.0}), 0};
    SampleResult res = sample(f.model, p, x0, cond, SamplerConfig{1, seed});

    // reconstruct by hand: U = D(X0, c, t=0), trajectory = Phi(x0, U)
    Tensor noise = draw_noise(f.model, seed);
    Tensor u = predict_actions(f.model.net, p, noise,
                               conditioning_vector(cond, f.model.norm), 0.0);
    StateTrajectory phi = rollout(f.spec, x0, ActionTrajectory{u});
    EXPECT_TRUE(equal_bits(res.trajectory.states, phi.states));
    EXPECT_TRUE(equal_bits(res.actions.actions, u));
  }
}

TEST(Sample, DeterministicGivenSeed) {
  Fixture f;
  Parameters p = init_params(f.model.net, 3);
  Rng prng(30);
  // nonzero output layer so the sample actually depends on the noise draw
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.2 * prng.normal();
  Tensor x0 = Tensor::vec({3.0, 0.0});
  Conditioning cond{x0, Tensor::vec({0.0}), 0};
  SampleResult a = sample(f.model, p, x0, cond, SamplerConfig{5, 99});
  SampleResult b = sample(f.model, p, x0, cond, SamplerConfig{5, 99});
  EXPECT_TRUE(equal_bits(a.trajectory.states, b.trajectory.states));
  EXPECT_TRUE(equal_bits(a.actions.actions, b.actions.actions));
  SampleResult c = sample(f.model, p, x0, cond, SamplerConfig{5, 100});
  EXPECT_FALSE(equal_bits(a.trajectory.states, c.trajectory.states));
}

TEST(Sample, FeasibleForAnyStepCountAndFinalStateConsistent) {
  Fixture f;
  Rng rng(8);
  Parameters p = init_params(f.model.net, 77);
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.15 * rng.normal();
  IdSolverConfig id_cfg;
  for (std::size_t n_steps : {1u, 2u, 5u}) {
    Tensor x0 = Tensor::vec({rng.uniform(-3, 3), rng.uniform(-1, 1)});
    SampleResult res = sample(f.model, p, x0, Conditioning{x0, Tensor::vec({0.0}), 0},
                              SamplerConfig{n_steps, 7 + n_steps});
    for (double r : sae(f.spec, res.trajectory, id_cfg)) EXPECT_LT(r, 1e-8);
    // returned trajectory equals the rollout of the returned actions exactly
    StateTrajectory re = rollout(f.spec, x0, res.actions);
    EXPECT_TRUE(equal_bits(re.states, res.trajectory.states));
  }
}

TEST(CmLoss, PerfectPredictionAndNullMask) {
  Fixture f;
  Parameters p = init_params(f.model.net, 0);  // predicts the passive rollout
  std::vector<FlowBatchItem> items;
  Rng rng(9);
  for (int b = 0; b < 3; ++b) {
    FlowBatchItem it;
    it.x0 = Tensor::vec({rng.uniform(-3, 3), rng.uniform(-1, 1)});
    it.x1 = rollout(f.spec, it.x0,
                    ActionTrajectory{Tensor::zeros({f.model.horizon(), 1})})
                .states;
    it.x0_noise = rng.normal_tensor({f.model.horizon(), f.model.flow_dim()});
    it.t = rng.uniform();
    it.cond = Conditioning{it.x0, Tensor::vec({0.0}), 0};
    items.push_back(std::move(it));
  }
  const double loss = cm_loss(f.model, p, items, weight_row(f.model, 1.0));
  EXPECT_LT(loss, 1e-20);

  // W = 0 nulls any batch
  Rng rng2(10);
  for (auto& it : items)
    for (double& v : it.x1.data()) v += rng2.normal();
  Tensor w0 = Tensor::zeros({std::size_t{1}, f.model.flow_width()});
  EXPECT_EQ(cm_loss(f.model, p, items, w0), 0.0);
  EXPECT_THROW(cm_loss(f.model, p, items,
                       Tensor::full({std::size_t{1}, f.model.flow_width()}, -1.0)),
               ValidationError);
}

TEST(CmLoss, GradientOnSmallConfig) {
  // H = 4, width = 16 per the stated small-config gradient contract
  SystemSpec spec = make_pendulum();
  ExpertGenConfig gen;
  gen.n_episodes = 2;
  gen.episode_len = 10;
  gen.seed = 3;
  Dataset ds = generate_expert(spec, ExpertController::kEnergySwingup, gen);
  NetworkConfig nc;
  nc.hidden_width = 16;
  nc.n_hidden_layers = 2;
  nc.time_embed_dim = 8;
  nc.horizon = 4;
  nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
  ModelSpec m = make_model_spec(Method::kDynaFlow, spec, nc, ds.norm);

  Rng rng(12);
  Parameters p = init_params(m.net, 5);
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.2 * rng.normal();
  TrainConfig tc;
  Rng batch_rng(4);
  auto items = sample_batch(m, ds, 3, batch_rng);
  BatchRows rows = to_rows(m, items);
  Tensor w_row = weight_row(m, 0.5);

  double err = check_gradient(ScalarFn([&](Tape&, const std::vector<Var>& pv) {
                                return cm_loss_rows<Var>(m, pv, rows, w_row, pv[0]);
                              }),
                              p.values(), 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(SaFlow, JointSampleShapesAndRolloutFeasibility) {
  SystemSpec spec = make_double_integrator();
  ExpertGenConfig gen;
  gen.n_episodes = 3;
  gen.episode_len = 30;
  gen.seed = 21;
  Dataset ds = generate_expert(spec, ExpertController::kPdRegulator, gen);
  NetworkConfig nc;
  nc.hidden_width = 24;
  nc.n_hidden_layers = 2;
  nc.horizon = 6;
  nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
  ModelSpec m = make_model_spec(Method::kSaFlow, spec, nc, ds.norm);
  EXPECT_EQ(m.flow_dim(), 6u);

  Rng rng(22);
  Parameters p = init_params(m.net, 8);
  for (auto& [name, t] : p.named)
    for (double& v : t.data()) v += 0.2 * rng.normal();
  Tensor x0 = Tensor::vec({0, 0, 0.1, -0.1});
  SampleResult res =
      sample(m, p, x0, Conditioning{x0, Tensor::vec({0.5, 0.0}), 0}, SamplerConfig{2, 5});
  EXPECT_EQ(res.trajectory.states.rows(), 6u);
  EXPECT_EQ(res.trajectory.states.cols(), 4u);
  EXPECT_EQ(res.actions.actions.rows(), 6u);
  EXPECT_EQ(res.actions.actions.cols(), 2u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t d = 0; d < 2; ++d) {
      EXPECT_GE(res.actions.actions.at(i, d), -1.0);
      EXPECT_LE(res.actions.actions.at(i, d), 1.0);
    }
  IdSolverConfig id_cfg;
  for (double r : sae(spec, res.rollout, id_cfg)) EXPECT_LT(r, 1e-8);
}

// The state-channel noise must coincide across methods sharing a seed.
TEST(Noise, StateChannelsSharedBetweenJointAndStateOnlyModels) {
  SystemSpec spec = make_double_integrator();
  ExpertGenConfig gen;
  gen.n_episodes = 2;
  gen.episode_len = 20;
  gen.seed = 31;
  Dataset ds = generate_expert(spec, ExpertController::kPdRegulator, gen);
  NetworkConfig nc;
  nc.hidden_width = 16;
  nc.n_hidden_layers = 1;
  nc.horizon = 5;
  nc.cond_dim = cond_width(spec.state_dim, ds.command_dim);
  ModelSpec m_state = make_model_spec(Method::kDynaFlow, spec, nc, ds.norm);
  ModelSpec m_joint = make_model_spec(Method::kSaFlow, spec, nc, ds.norm);
  Tensor n_state = draw_noise(m_state, 123);
  Tensor n_joint = draw_noise(m_joint, 123);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t d = 0; d < 4; ++d)
      EXPECT_EQ(n_state.at(i, d), n_joint.at(i, d));
}

TEST(ModelSpec, SaRequiresActionStatistics) {
  Fixture f;
  Normalization no_actions = f.ds.norm;
  no_actions.action_mean.clear();
  no_actions.action_std.clear();
  EXPECT_THROW(make_model_spec(Method::kSaFlow, f.spec, f.model.net, no_actions),
               ValidationError);
}

}  // namespace
}  // namespace dynaflow
