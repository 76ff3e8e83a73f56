#include "dynaflow/autodiff.hpp"

#include <gtest/gtest.h>

#include "dynaflow/dynamics.hpp"
#include "dynaflow/net.hpp"
#include "dynaflow/rng.hpp"

namespace dynaflow {
namespace {

TEST(Record, TracedEqualsUntracedEvaluation) {
  Recording rec = record(ScalarFn([](Tape&, const std::vector<Var>& in) {
                           return in[0] * in[0];
                         }),
                         {Tensor::scalar(3.0)});
  EXPECT_EQ(rec.outputs[0][0], 9.0);
}

TEST(Record, IdentityLeavesInputUntouched) {
  Tensor t({2, 2}, {1, 2, 3, 4});
  Recording rec = record(
      TracedFn([](Tape&, const std::vector<Var>& in) { return std::vector<Var>{in[0]}; }),
      {t});
  EXPECT_TRUE(equal_bits(rec.outputs[0], t));
  EXPECT_EQ(rec.tape.num_nodes(), 1u);
}

TEST(Record, EveryPrimitiveMatchesPlainKernelsBitwise) {
  Rng rng(17);
  Tensor a = rng.normal_tensor({3, 4});
  Tensor b = rng.normal_tensor({3, 4});
  Tensor m = rng.normal_tensor({4, 2});
  Recording rec = record(
      TracedFn([&](Tape& tape, const std::vector<Var>& in) {
        Var x = in[0], y = in[1], w = in[2];
        return std::vector<Var>{
            x + y, x - y, x * y, x / y, matmul(x, w), tanh(x), sin(x), cos(x),
            exp(x), clamp(x, -0.5, 0.5), sum(x), mean(x), pow(x, 3.0),
            concat(x, y, 1), slice(x, 1, 1, 2), tape.constant(1.0) + x};
      }),
      {a, b, m});
  EXPECT_TRUE(equal_bits(rec.outputs[0], add(a, b)));
  EXPECT_TRUE(equal_bits(rec.outputs[1], sub(a, b)));
  EXPECT_TRUE(equal_bits(rec.outputs[2], mul(a, b)));
  EXPECT_TRUE(equal_bits(rec.outputs[3], div(a, b)));
  EXPECT_TRUE(equal_bits(rec.outputs[4], matmul(a, m)));
  EXPECT_TRUE(equal_bits(rec.outputs[5], tanh(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[6], sin(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[7], cos(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[8], exp(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[9], clamp(a, -0.5, 0.5)));
  EXPECT_TRUE(equal_bits(rec.outputs[10], sum(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[11], mean(a)));
  EXPECT_TRUE(equal_bits(rec.outputs[12], pow(a, 3.0)));
  EXPECT_TRUE(equal_bits(rec.outputs[13], concat(a, b, 1)));
  EXPECT_TRUE(equal_bits(rec.outputs[14], slice(a, 1, 1, 2)));
}

TEST(Record, PendulumStepTracedEqualsDirectCall) {
  SystemSpec spec = make_pendulum();
  Tensor x = Tensor::row({2.1, -0.7});
  Tensor u = Tensor::row({0.4});
  Recording rec = record(
      TracedFn([&](Tape&, const std::vector<Var>& in) {
        return std::vector<Var>{step_rows(spec, in[0], in[1])};
      }),
      {x, u});
  EXPECT_TRUE(equal_bits(rec.outputs[0], step_rows(spec, x, u)));
}

TEST(Backward, SquareAtThree) {
  Recording rec = record(ScalarFn([](Tape&, const std::vector<Var>& in) {
                           return in[0] * in[0];
                         }),
                         {Tensor::scalar(3.0)});
  std::vector<Tensor> g = rec.tape.backward(Tensor::scalar(1.0));
  EXPECT_DOUBLE_EQ(g[0][0], 6.0);
}

TEST(Backward, ClampHasZeroGradientBeyondBounds) {
  auto grad_at = [](double x) {
    Recording rec = record(ScalarFn([](Tape&, const std::vector<Var>& in) {
                             return sum(clamp(in[0], -1.0, 1.0));
                           }),
                           {Tensor::scalar(x)});
    return rec.tape.backward(Tensor::scalar(1.0))[0][0];
  };
  EXPECT_EQ(grad_at(2.0), 0.0);
  EXPECT_EQ(grad_at(-1.5), 0.0);
  EXPECT_EQ(grad_at(0.3), 1.0);
  // zero at the tie itself (one-sided convention)
  EXPECT_EQ(grad_at(1.0), 0.0);
}

TEST(Backward, SeedShapeMismatchIsAnError) {
  Recording rec = record(
      TracedFn([](Tape&, const std::vector<Var>& in) { return std::vector<Var>{in[0]}; }),
      {Tensor::vec({1, 2, 3})});
  EXPECT_THROW(rec.tape.backward(Tensor::vec({1, 2})), ValidationError);
}

TEST(Backward, UnusedInputsReceiveZeroGradients) {
  Recording rec = record(ScalarFn([](Tape&, const std::vector<Var>& in) {
                           return sum(in[0]);
                         }),
                         {Tensor::vec({1, 2}), Tensor::vec({5, 6, 7})});
  std::vector<Tensor> g = rec.tape.backward(Tensor::scalar(1.0));
  EXPECT_EQ(g[1].numel(), 3u);
  for (double v : g[1].data()) EXPECT_EQ(v, 0.0);
}

// Independent finite-difference oracle: the loss is evaluated through plain
// tensor arithmetic (no tape) at perturbed inputs.
TEST(Backward, TwoLayerTanhNetworkMatchesFiniteDifferences) {
  Rng rng(23);
  Tensor w1 = rng.normal_tensor({3, 8});
  Tensor b1 = rng.normal_tensor({1, 8});
  Tensor w2 = rng.normal_tensor({8, 2});
  Tensor b2 = rng.normal_tensor({1, 2});
  Tensor x = rng.normal_tensor({5, 3});
  Tensor target = rng.normal_tensor({5, 2});

  auto plain_loss = [&](const Tensor& a1, const Tensor& a2, const Tensor& a3,
                        const Tensor& a4) {
    Tensor h = tanh(add(matmul(x, a1), a2));
    Tensor out = add(matmul(h, a3), a4);
    Tensor d = sub(out, target);
    return mean(mul(d, d))[0];
  };

  Recording rec = record(
      ScalarFn([&](Tape& tape, const std::vector<Var>& in) {
        Var xv = tape.constant(x);
        Var tv = tape.constant(target);
        Var h = tanh(matmul(xv, in[0]) + in[1]);
        Var out = matmul(h, in[2]) + in[3];
        Var d = out - tv;
        return mean(d * d);
      }),
      {w1, b1, w2, b2});
  std::vector<Tensor> grads = rec.tape.backward(Tensor::scalar(1.0));

  const double h = 1e-5;
  std::vector<Tensor> params = {w1, b1, w2, b2};
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].numel(); ++k) {
      const double orig = params[p][k];
      params[p][k] = orig + h;
      const double fp = plain_loss(params[0], params[1], params[2], params[3]);
      params[p][k] = orig - h;
      const double fm = plain_loss(params[0], params[1], params[2], params[3]);
      params[p][k] = orig;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(grads[p][k] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Backward, LinearityOfSeeds) {
  Rng rng(31);
  Tensor x = rng.normal_tensor({2, 3});
  Recording rec = record(
      TracedFn([](Tape&, const std::vector<Var>& in) {
        return std::vector<Var>{tanh(in[0] * in[0]) + sin(in[0])};
      }),
      {x});
  Tensor s1 = rng.normal_tensor({2, 3});
  Tensor s2 = rng.normal_tensor({2, 3});
  const double a = 1.7, b = -0.4;
  Tensor combined = add(mul(s1, Tensor::scalar(a)), mul(s2, Tensor::scalar(b)));
  Tensor g_combined = rec.tape.backward(combined)[0];
  Tensor g1 = rec.tape.backward(s1)[0];
  Tensor g2 = rec.tape.backward(s2)[0];
  for (std::size_t k = 0; k < x.numel(); ++k)
    EXPECT_NEAR(g_combined[k], a * g1[k] + b * g2[k], 1e-12);
}

TEST(CheckGradient, QuadraticForm) {
  Rng rng(7);
  Tensor q = rng.normal_tensor({4, 4});
  Tensor x = rng.normal_tensor({1, 4});
  double err = check_gradient(ScalarFn([&](Tape& tape, const std::vector<Var>& in) {
                                Var qv = tape.constant(q);
                                Var y = matmul(in[0], qv);
                                return sum(y * y);
                              }),
                              {x}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(CheckGradient, ConstantFunctionIsExactlyZero) {
  double err = check_gradient(ScalarFn([](Tape& tape, const std::vector<Var>& in) {
                                return tape.constant(5.0) + 0.0 * sum(in[0]);
                              }),
                              {Tensor::vec({1, 2, 3})});
  EXPECT_EQ(err, 0.0);
}

TEST(CheckGradient, SixteenStepRolloutLoss) {
  SystemSpec spec = make_double_integrator();
  Rng rng(41);
  Tensor x0 = rng.normal_tensor({1, 4});
  Tensor u = Tensor::zeros({1, 32});
  for (double& v : u.data()) v = rng.uniform(-0.8, 0.8);
  double err = check_gradient(ScalarFn([&](Tape& tape, const std::vector<Var>& in) {
                                Var x0v = tape.constant(x0);
                                Var traj = rollout_rows(spec, x0v, in[0], 16);
                                return sum(traj * traj);
                              }),
                              {u}, 1e-5);
  EXPECT_LT(err, 1e-4);
}

TEST(CheckGradient, PendulumRolloutWithGradThroughInitialState) {
  SystemSpec spec = make_pendulum();
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x0 = Tensor({1, 2}, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
    Tensor u = Tensor::zeros({1, 8});
    for (double& v : u.data()) v = rng.uniform(-1.0, 1.0);
    double err = check_gradient(ScalarFn([&](Tape&, const std::vector<Var>& in) {
                                  Var traj = rollout_rows(spec, in[0], in[1], 8);
                                  return mean(traj * traj);
                                }),
                                {x0, u}, 1e-5);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(Tape, VarsFromDifferentTapesAreRejected) {
  Tape t1, t2;
  Var a = t1.input(Tensor::scalar(1.0));
  Var b = t2.input(Tensor::scalar(2.0));
  EXPECT_THROW(t1.add(a, b), ValidationError);
}

}  // namespace
}  // namespace dynaflow
