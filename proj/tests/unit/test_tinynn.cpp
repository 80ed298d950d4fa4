#include "oracles.hpp"

#include "vaevar/tinynn.hpp"

#include <gtest/gtest.h>

using namespace vaevar;
using namespace vaevar::nn;
using vaevar::testing::fd_gradient;
using vaevar::testing::fd_jacobian;
using vaevar::testing::random_mlp;
using vaevar::testing::random_vector;
using vaevar::testing::rel_error;

namespace {

MlpParams scalar_chain(Activation act) {
  MlpParams p = MlpParams::zeros({1, 1, 1, 1}, act);
  p.A1(0, 0) = p.A2(0, 0) = p.A3(0, 0) = 1.0;
  return p;
}

// Flattened parameter vector in tensor order, for finite differencing.
Vector flatten(const MlpParams& p) {
  std::vector<double> all;
  for (auto t : p.tensors()) all.insert(all.end(), t.begin(), t.end());
  return Eigen::Map<Vector>(all.data(), static_cast<Eigen::Index>(all.size()));
}

MlpParams unflatten(MlpParams p, const Vector& v) {
  Eigen::Index k = 0;
  for (auto t : p.tensors()) {
    for (double& x : t) x = v[k++];
  }
  return p;
}

}  // namespace

TEST(Activations, SiluAndDerivative) {
  EXPECT_DOUBLE_EQ(silu(0.0), 0.0);
  EXPECT_DOUBLE_EQ(silu_prime(0.0), 0.5);
  for (double x : {-30.0, -3.0, -0.2, 0.7, 4.0, 30.0}) {
    EXPECT_NEAR(silu_prime(x), (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6, 1e-8);
  }
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
  EXPECT_EQ(activation_from_string("silu"), Activation::SiLU);
  EXPECT_THROW(activation_from_string("relu"), FormatError);
}

TEST(MlpForward, ZeroNetIsZero) {
  const MlpParams p = MlpParams::zeros({3, 8, 8, 4});
  EXPECT_EQ(mlp_forward(p, Vector::Constant(3, 2.5)), Vector::Zero(4));
}

TEST(MlpForward, IdentityActivationsCollapseToProduct) {
  Rng rng(1);
  MlpParams p = random_mlp(rng, {3, 5, 4, 2}, 1.0, Activation::Identity);
  p.b1.setZero();
  p.b2.setZero();
  p.b3.setZero();
  const Vector z = random_vector(rng, 3);
  EXPECT_LT(rel_error(mlp_forward(p, z), Vector(p.A3 * p.A2 * p.A1 * z)), 1e-14);
}

TEST(MlpForward, ScalarSiluChain) {
  const double out = mlp_forward(scalar_chain(Activation::SiLU), Vector::Constant(1, 2.0))[0];
  const double s1 = 2.0 / (1.0 + std::exp(-2.0));
  EXPECT_NEAR(s1, 1.76159, 1e-5);
  EXPECT_NEAR(out, s1 / (1.0 + std::exp(-s1)), 1e-15);
  // silu(1.76159) = 1.76159 * 0.853425.
  EXPECT_NEAR(out, 1.50336, 1e-5);
}

TEST(MlpForward, ShapeMismatchThrows) {
  const MlpParams p = MlpParams::zeros({3, 4, 4, 3});
  EXPECT_THROW(mlp_forward(p, Vector::Zero(2)), DimensionError);
  MlpParams bad = p;
  bad.A2 = Matrix::Zero(4, 5);
  EXPECT_THROW(bad.validate(), DimensionError);
}

TEST(MlpForward, Bitwise) {
  Rng rng(2);
  const MlpParams p = random_mlp(rng, {3, 8, 8, 3});
  const Vector z = random_vector(rng, 3);
  EXPECT_EQ(mlp_forward(p, z), mlp_forward(p, z));
  EXPECT_EQ(mlp_trace(p, z).out, mlp_forward(p, z));
}

TEST(MlpJacobian, IdentityActivationsExact) {
  Rng rng(3);
  const MlpParams p = random_mlp(rng, {3, 6, 5, 4}, 1.0, Activation::Identity);
  EXPECT_LT((mlp_input_jacobian(p, random_vector(rng, 3)) - p.A3 * p.A2 * p.A1).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(MlpJacobian, ScalarChainAtZero) {
  EXPECT_DOUBLE_EQ(mlp_input_jacobian(scalar_chain(Activation::SiLU), Vector::Zero(1))(0, 0), 0.25);
}

TEST(MlpJacobian, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 25; ++t) {
    const MlpParams p = random_mlp(rng, {3, 8, 8, 3});
    const Vector z = random_vector(rng, 3);
    const Matrix fd = fd_jacobian([&](const Vector& s) { return mlp_forward(p, s); }, z);
    EXPECT_LT(rel_error(mlp_input_jacobian(p, z), fd), 1e-6);
  }
}

TEST(MlpBackward, ZeroCotangent) {
  Rng rng(5);
  const MlpParams p = random_mlp(rng, {3, 4, 4, 2});
  const MlpBackward b = mlp_backward(p, random_vector(rng, 3), Vector::Zero(2));
  EXPECT_EQ(b.input, Vector::Zero(3));
  for (auto t : b.params.tensors()) {
    for (double v : t) EXPECT_EQ(v, 0.0);
  }
}

TEST(MlpBackward, InputGradientIsJacobianTranspose) {
  Rng rng(6);
  for (int t = 0; t < 25; ++t) {
    const MlpParams p = random_mlp(rng, {4, 7, 6, 5});
    const Vector z = random_vector(rng, 4);
    const Vector g = random_vector(rng, 5);
    const Vector ref = mlp_input_jacobian(p, z).transpose() * g;
    EXPECT_LT((mlp_backward(p, z, g).input - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MlpBackward, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const MlpParams p = random_mlp(rng, {3, 5, 4, 3});
    const Vector z = random_vector(rng, 3);
    const Vector g = random_vector(rng, 3);
    const auto f = [&](const Vector& theta) { return g.dot(mlp_forward(unflatten(p, theta), z)); };
    const Vector fd = fd_gradient(f, flatten(p));
    EXPECT_LT(rel_error(flatten(mlp_backward(p, z, g).params), fd), 1e-6);
  }
}

TEST(MlpParams, TensorOrderAndInit) {
  EXPECT_EQ(MlpParams::tensor_names(), (std::vector<std::string>{"A1", "b1", "A2", "b2", "A3", "b3"}));
  Rng rng(8);
  const MlpParams p = MlpParams::init_uniform({4, 9, 16, 2}, rng);
  EXPECT_LE(p.A1.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(4.0));
  EXPECT_LE(p.A2.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(9.0));
  EXPECT_LE(p.b3.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
  EXPECT_GT(p.A1.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Accumulate, ScalesAndAdds) {
  Rng rng(9);
  const MlpParams a = random_mlp(rng, {2, 3, 3, 2});
  MlpParams acc = MlpParams::zeros(a.shape());
  accumulate(acc, a, 2.0);
  accumulate(acc, a, -1.0);
  EXPECT_EQ(flatten(acc), flatten(a));
}

TEST(AdamW, ZeroGradientNoDecayIsNoOp) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  std::vector<double> w{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  opt.step({std::span<double>(w)}, {std::span<const double>(g)});
  EXPECT_EQ(w, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(AdamW, ZeroGradientDecayScales) {
  AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  AdamW opt(cfg);
  std::vector<double> w{1.0, -2.0};
  const std::vector<double> g(2, 0.0);
  opt.step({std::span<double>(w)}, {std::span<const double>(g)});
  EXPECT_DOUBLE_EQ(w[0], 1.0 * (1 - 0.05));
  EXPECT_DOUBLE_EQ(w[1], -2.0 * (1 - 0.05));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(cfg);
  std::vector<double> w{0.5, 0.0};
  const std::vector<double> g(2, 1.0);
  opt.step({std::span<double>(w)}, {std::span<const double>(g)});
  EXPECT_NEAR(w[0], 0.5 - 1e-3, 1e-10);
  EXPECT_NEAR(w[1], -1e-3, 1e-10);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamW, ConfigValidation) {
  AdamWConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(AdamW{cfg}, ConfigError);
  cfg = {};
  cfg.beta2 = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AdamW, MismatchedTensorsThrow) {
  AdamW opt(AdamWConfig{});
  std::vector<double> w(3, 0.0);
  const std::vector<double> g(2, 0.0);
  EXPECT_THROW(opt.step({std::span<double>(w)}, {std::span<const double>(g)}), DimensionError);
}
