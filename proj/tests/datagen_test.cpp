#include "dynaflow/datagen.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace dynaflow {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const char* name) {
  fs::path dir = fs::temp_directory_path() / "dynaflow_datagen_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(ExpertGen, PdRegulatorReachesCommandedVelocity) {
  SystemSpec spec = make_double_integrator();
  ExpertGenConfig cfg;
  cfg.n_episodes = 1;
  cfg.episode_len = 100;
  cfg.action_noise = 0.0;
  cfg.seed = 3;
  Dataset ds = generate_expert(spec, ExpertController::kPdRegulator, cfg);
  const Episode& ep = ds.episodes[0];
  const double vx = ep.states.at(99, 2), vy = ep.states.at(99, 3);
  const double ex = vx - ep.command[0], ey = vy - ep.command[1];
  EXPECT_LT(std::sqrt(ex * ex + ey * ey), 0.05);
}

TEST(ExpertGen, ZeroCommandFromOriginStaysAtOrigin) {
  SystemSpec spec = make_double_integrator();
  Tensor x = Tensor::vec({0, 0, 0, 0});
  Tensor cmd = Tensor::vec({0.0, 0.0});
  for (int i = 0; i < 50; ++i) {
    Tensor u = pd_regulator_action(spec, x, cmd);
    for (double v : u.data()) EXPECT_EQ(v, 0.0);
    x = step(spec, x, u);
  }
  for (double v : x.data()) EXPECT_EQ(v, 0.0);
}

TEST(ExpertGen, EnergySwingupCapturesUpright) {
  SystemSpec spec = make_pendulum();
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::vec({kPi + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    for (int i = 0; i < 200; ++i) x = step(spec, x, energy_swingup_action(spec, x));
    EXPECT_LT(std::abs(wrap_angle(x[0])), 0.1);
    EXPECT_LT(std::abs(x[1]), 0.5);
  }
}

TEST(ExpertGen, AllTransitionsPassFeasibilityOracle) {
  IdSolverConfig id_cfg;
  for (const char* name : {"double_integrator", "pendulum"}) {
    SystemSpec spec = make_system(name);
    ExpertGenConfig cfg;
    cfg.n_episodes = 3;
    cfg.episode_len = 40;
    cfg.seed = 5;
    Dataset ds = generate_expert(spec,
                                 spec.kind == SystemKind::kDoubleIntegrator
                                     ? ExpertController::kPdRegulator
                                     : ExpertController::kEnergySwingup,
                                 cfg);
    DatasetSae s = dataset_sae(spec, ds, id_cfg, 4);
    EXPECT_LT(s.max_raw, 1e-8) << name;
    EXPECT_TRUE(ds.has_actions());
  }
}

TEST(ExpertGen, ControllerSystemMismatchIsRejected) {
  SystemSpec di = make_double_integrator();
  EXPECT_THROW(generate_expert(di, ExpertController::kEnergySwingup, ExpertGenConfig{}),
               ValidationError);
}

TEST(KinematicGen, InstantSwingupDemandsMoreTorqueThanTheBound) {
  SystemSpec spec = make_pendulum();
  KinematicGenConfig cfg;
  cfg.style = KinematicStyle::kInstantSwingup;
  cfg.n_episodes = 4;
  cfg.episode_len = 30;
  cfg.seed = 7;
  Dataset ds = generate_kinematic(spec, cfg, IdSolverConfig{}, 4);

  // the swing segment demands |u| > bound: verify directly on one episode
  const Episode& ep = ds.episodes[0];
  double max_torque = 0.0;
  for (std::size_t i = 0; i + 1 < ep.length(); ++i) {
    const double om = ep.states.at(i, 1), om_next = ep.states.at(i + 1, 1);
    const double th = ep.states.at(i, 0);
    // exact inversion of the one-step update for the demanded transition
    const double u_req = (om_next - om) / spec.dt - spec.gravity * std::sin(th) +
                         spec.damping * om;
    max_torque = std::max(max_torque, std::abs(u_req));
  }
  EXPECT_GT(max_torque, spec.action_high[0]);

  DatasetSae s = dataset_sae(spec, ds, IdSolverConfig{}, 4);
  EXPECT_GT(s.mean_normalized, cfg.sae_floor);
  EXPECT_GT(s.mean_raw, 0.0);
}

TEST(KinematicGen, NoActionFieldsOnKinematicData) {
  SystemSpec spec = make_pendulum();
  KinematicGenConfig cfg;
  cfg.n_episodes = 2;
  cfg.episode_len = 24;
  Dataset ds = generate_kinematic(spec, cfg, IdSolverConfig{}, 4);
  EXPECT_FALSE(ds.has_actions());
  for (const Episode& ep : ds.episodes) EXPECT_FALSE(ep.actions.has_value());
}

TEST(KinematicGen, GentleWindowTriggersAccidentalFeasibilityGuard) {
  SystemSpec spec = make_double_integrator();
  KinematicGenConfig cfg;
  cfg.style = KinematicStyle::kOvershootDash;
  cfg.n_episodes = 2;
  cfg.episode_len = 40;
  // a 0.4 m dash over 3.5 s with no ripple needs far less than the 1 N bound
  cfg.dash_distance_lo = 0.3;
  cfg.dash_distance_hi = 0.4;
  cfg.dash_steps_lo = 35;
  cfg.dash_steps_hi = 35;
  cfg.dash_ripple_amp = 0.0;
  EXPECT_THROW(generate_kinematic(spec, cfg, IdSolverConfig{}, 4), NumericError);
}

TEST(KinematicGen, OvershootDashClearsTheFloor) {
  SystemSpec spec = make_double_integrator();
  KinematicGenConfig cfg;
  cfg.style = KinematicStyle::kOvershootDash;
  cfg.n_episodes = 4;
  cfg.episode_len = 40;
  cfg.seed = 11;
  Dataset ds = generate_kinematic(spec, cfg, IdSolverConfig{}, 4);
  DatasetSae s = dataset_sae(spec, ds, IdSolverConfig{}, 4);
  EXPECT_GT(s.mean_normalized, cfg.sae_floor);
}

TEST(DatasetIo, RoundTripIsExact) {
  SystemSpec spec = make_double_integrator();
  ExpertGenConfig cfg;
  cfg.n_episodes = 3;
  cfg.episode_len = 15;
  cfg.seed = 9;
  Dataset ds = generate_expert(spec, ExpertController::kPdRegulator, cfg);
  fs::path path = temp_file("roundtrip.dynd");
  write_dataset(ds, path);
  Dataset back = read_dataset(path);
  EXPECT_EQ(back.system_name, ds.system_name);
  EXPECT_EQ(back.provenance, ds.provenance);
  EXPECT_EQ(back.episodes.size(), ds.episodes.size());
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    EXPECT_TRUE(equal_bits(back.episodes[e].x0, ds.episodes[e].x0));
    EXPECT_TRUE(equal_bits(back.episodes[e].states, ds.episodes[e].states));
    EXPECT_TRUE(equal_bits(back.episodes[e].command, ds.episodes[e].command));
    EXPECT_TRUE(equal_bits(*back.episodes[e].actions, *ds.episodes[e].actions));
  }
  EXPECT_EQ(back.norm.state_mean, ds.norm.state_mean);
  EXPECT_EQ(back.norm.action_std, ds.norm.action_std);
}

TEST(DatasetIo, ProvenanceTagIsEnforcedOnRead) {
  SystemSpec spec = make_double_integrator();
  ExpertGenConfig cfg;
  cfg.n_episodes = 1;
  cfg.episode_len = 10;
  Dataset ds = generate_expert(spec, ExpertController::kPdRegulator, cfg);
  fs::path path = temp_file("provenance.dynd");
  write_dataset(ds, path);
  EXPECT_THROW(read_dataset(path, Provenance::kKinematic), ValidationError);
  EXPECT_NO_THROW(read_dataset(path, Provenance::kExpert));
}

TEST(DatasetIo, StoredStatsMatchRecomputation) {
  SystemSpec spec = make_pendulum();
  ExpertGenConfig cfg;
  cfg.n_episodes = 4;
  cfg.episode_len = 25;
  cfg.seed = 31;
  Dataset ds = generate_expert(spec, ExpertController::kEnergySwingup, cfg);
  fs::path path = temp_file("stats.dynd");
  write_dataset(ds, path);
  Dataset back = read_dataset(path);
  Normalization re = compute_normalization(back, spec.state_dim, spec.action_dim);
  for (std::size_t d = 0; d < spec.state_dim; ++d) {
    EXPECT_NEAR(re.state_mean[d], back.norm.state_mean[d], 1e-12);
    EXPECT_NEAR(re.state_std[d], back.norm.state_std[d], 1e-12);
  }
  for (std::size_t d = 0; d < spec.action_dim; ++d) {
    EXPECT_NEAR(re.action_mean[d], back.norm.action_mean[d], 1e-12);
    EXPECT_NEAR(re.action_std[d], back.norm.action_std[d], 1e-12);
  }
}

TEST(DatasetGen, DeterministicUnderFixedSeed) {
  SystemSpec spec = make_pendulum();
  ExpertGenConfig cfg;
  cfg.n_episodes = 2;
  cfg.episode_len = 12;
  cfg.seed = 77;
  Dataset a = generate_expert(spec, ExpertController::kEnergySwingup, cfg);
  Dataset b = generate_expert(spec, ExpertController::kEnergySwingup, cfg);
  for (std::size_t e = 0; e < a.episodes.size(); ++e) {
    EXPECT_TRUE(equal_bits(a.episodes[e].states, b.episodes[e].states));
    EXPECT_TRUE(equal_bits(*a.episodes[e].actions, *b.episodes[e].actions));
  }
}

}  // namespace
}  // namespace dynaflow
