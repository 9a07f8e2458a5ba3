#include <gtest/gtest.h>

#include <cmath>

#include "adamatch/autodiff.hpp"
#include "adamatch/kernels.hpp"
#include "adamatch/nn.hpp"
#include "adamatch/rng.hpp"
#include "support/finite_diff.hpp"

using namespace adamatch;

namespace {

template <typename S>
Tensor<S> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<S> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i)
    t[i] = static_cast<S>((rng.u01() * 2.0 - 1.0) * scale);
  return t;
}

TEST(Softmax, SymmetricPair) {
  auto p = softmax(Tensor<float>::from({1, 2}, {0.f, 0.f}));
  EXPECT_FLOAT_EQ(p.at(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(p.at(0, 1), 0.5f);
}

TEST(Softmax, AnalyticLog3) {
  auto p = softmax(Tensor<float>::from({1, 2}, {std::log(3.0f), 0.f}));
  EXPECT_NEAR(p.at(0, 0), 0.75f, 1e-6);
  EXPECT_NEAR(p.at(0, 1), 0.25f, 1e-6);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(7);
  auto z = random_tensor<float>({8, 10}, rng, 5.0);
  auto p = softmax(z);
  for (int i = 0; i < 8; ++i) {
    float s = 0;
    for (int j = 0; j < 10; ++j) {
      s += p.at(i, j);
      EXPECT_GE(p.at(i, j), 0.f);
    }
    EXPECT_NEAR(s, 1.f, 1e-6);
  }
}

TEST(Softmax, RejectsNon2D) {
  EXPECT_THROW(softmax(Tensor<float>({4})), ShapeError);
}

TEST(CrossEntropy, AnalyticLn2) {
  auto p = Tensor<float>::from({1, 2}, {1.f, 0.f});
  auto z = Tensor<float>::from({1, 2}, {0.f, 0.f});
  EXPECT_NEAR(cross_entropy(p, z), std::log(2.0f), 1e-6);
}

TEST(CrossEntropy, MinimumAtMatchingDistribution) {
  Rng rng(3);
  auto z = random_tensor<float>({4, 6}, rng, 2.0);
  auto p = softmax(z);
  // H(p, p) is the entropy of p, the Gibbs-inequality minimum over targets.
  float entropy = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) entropy -= p.at(i, j) * std::log(p.at(i, j));
  entropy /= 4;
  EXPECT_NEAR(cross_entropy(p, z), entropy, 1e-5);
  // any other target distribution is at least as expensive
  auto q = softmax(random_tensor<float>({4, 6}, rng, 2.0));
  EXPECT_GE(cross_entropy(q, z) + 1e-6f, cross_entropy(p, z));
}

TEST(CrossEntropy, MatchesScalarLoopOracle) {
  Rng rng(11);
  auto z = random_tensor<double>({4, 5}, rng, 3.0);
  auto praw = random_tensor<double>({4, 5}, rng, 0.0);
  // build valid target distributions
  Tensor<double> p({4, 5});
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 5; ++j) {
      p.at(i, j) = rng.u01() + 0.01;
      s += p.at(i, j);
    }
    for (int j = 0; j < 5; ++j) p.at(i, j) /= s;
  }
  // independent scalar recomputation
  double expected = 0;
  for (int i = 0; i < 4; ++i) {
    double mx = z.at(i, 0);
    for (int j = 1; j < 5; ++j) mx = std::max(mx, z.at(i, j));
    double denom = 0;
    for (int j = 0; j < 5; ++j) denom += std::exp(z.at(i, j) - mx);
    for (int j = 0; j < 5; ++j)
      expected -= p.at(i, j) * std::log(std::exp(z.at(i, j) - mx) / denom);
  }
  expected /= 4;
  EXPECT_NEAR(cross_entropy(p, z), expected, 1e-6);
  (void)praw;
}

TEST(CrossEntropy, ShapeMismatchThrows) {
  auto p = Tensor<float>({2, 3});
  auto z = Tensor<float>({2, 4});
  EXPECT_THROW(cross_entropy(p, z), ShapeError);
}

TEST(Tape, SumOfParameterGivesOnes) {
  Model<float> m = build_desknet<float>(32, 1, 4, 4, 1);
  Tape<float> tape;
  auto pvars = bind_model(tape, m);
  Var loss = tape.sum(pvars[0]);
  GradMap<float> grads = backward(tape, loss, m, pvars);
  for (long i = 0; i < grads[m.params[0].name].numel(); ++i)
    EXPECT_FLOAT_EQ(grads[m.params[0].name][i], 1.f);
  for (size_t pi = 1; pi < m.params.size(); ++pi) {
    const auto& g = grads[m.params[pi].name];
    for (long i = 0; i < g.numel(); ++i) EXPECT_FLOAT_EQ(g[i], 0.f);
  }
}

TEST(Tape, DetachedLossThrows) {
  Tape<float> tape(false);
  Var x = tape.leaf(Tensor<float>({1}, 2.f));
  EXPECT_THROW(tape.backward(x), ValueError);
  Tape<float> live;
  EXPECT_THROW(live.backward(Var{}), ValueError);
}

TEST(Tape, StopGradientBlocksPath) {
  Tape<float> tape;
  Var x = tape.leaf(Tensor<float>({3}, 2.f));
  Var y = tape.leaf(Tensor<float>({3}, 5.f));
  Var prod = tape.mul(tape.stop_gradient(x), y);
  Var loss = tape.sum(prod);
  tape.backward(loss);
  for (long i = 0; i < 3; ++i) {
    EXPECT_FLOAT_EQ(tape.grad(x)[i], 0.f);   // barrier: no contribution
    EXPECT_FLOAT_EQ(tape.grad(y)[i], 2.f);
  }
}

TEST(Tape, LerpEndpointsAndGradient) {
  Tape<float> tape;
  Var a = tape.leaf(Tensor<float>::from({2, 2}, {1, 2, 3, 4}));
  Var b = tape.leaf(Tensor<float>::from({2, 2}, {5, 6, 7, 8}));
  Var all_a = tape.lerp(a, b, Tensor<float>({2, 2}, 1.f));
  Var all_b = tape.lerp(a, b, Tensor<float>({2, 2}, 0.f));
  for (long i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(tape.value(all_a)[i], tape.value(a)[i]);
    EXPECT_FLOAT_EQ(tape.value(all_b)[i], tape.value(b)[i]);
  }
  Tensor<float> lam({2, 2});
  lam.data = {0.25f, 0.5f, 0.75f, 1.0f};
  Var mix = tape.lerp(a, b, lam);
  Var loss = tape.sum(mix);
  tape.backward(loss);
  for (long i = 0; i < 4; ++i) {
    EXPECT_FLOAT_EQ(tape.grad(a)[i], lam[i]);
    EXPECT_FLOAT_EQ(tape.grad(b)[i], 1.f - lam[i]);
  }
}

// The finite-difference oracle always evaluates the loss at f64 precision
// (on an exact twin of the model under check) so the difference quotient is
// not dominated by forward-pass rounding. The autodiff path being checked
// runs at the precision under test.
template <typename S>
double desknet_gradcheck(uint64_t seed, double fd_step) {
  Model<S> m = build_desknet<S>(32, 1, 2, 4, seed);
  if (m.parameter_count() > 5000)
    throw std::runtime_error("gradcheck model exceeds the mini budget");
  Rng rng(mix_seed(seed, 99));
  Tensor<S> images({2, 32, 32, 1});
  for (long i = 0; i < images.numel(); ++i) images[i] = static_cast<S>(rng.u01());
  Tensor<S> targets({2, 2});
  targets.at(0, 0) = S(1);
  targets.at(1, 1) = S(1);

  Tape<S> tape;
  auto pvars = bind_model(tape, m);
  Var x = tape.constant(images);
  Var logits = model_forward(tape, m, pvars, x, BnMode::TrainFrozen);
  Var loss = tape.cross_entropy_mean(targets, logits);
  GradMap<S> analytic = backward(tape, loss, m, pvars);

  Model<double> twin = cast_model<double>(m);
  Tensor<double> images64(images.shape), targets64(targets.shape);
  for (long i = 0; i < images.numel(); ++i) images64[i] = static_cast<double>(images[i]);
  for (long i = 0; i < targets.numel(); ++i) targets64[i] = static_cast<double>(targets[i]);
  auto loss_value = [&]() -> double {
    Tensor<double> z = model_apply(twin, images64, BnMode::TrainFrozen);
    return cross_entropy(targets64, z);
  };
  GradMap<double> fd = adamatch::testing::finite_diff_grads<double>(twin, loss_value, fd_step);

  GradMap<double> analytic64;
  for (const auto& [name, g] : analytic) {
    Tensor<double> t(g.shape);
    for (long i = 0; i < g.numel(); ++i) t[i] = static_cast<double>(g[i]);
    analytic64[name] = std::move(t);
  }
  return adamatch::testing::max_rel_err(analytic64, fd);
}

TEST(GradCheck, DeskNetMiniF32) {
  double worst = 0;
  for (uint64_t seed = 0; seed < 5; ++seed)
    worst = std::max(worst, desknet_gradcheck<float>(seed, 1e-5));
  EXPECT_LT(worst, 1e-3);
}

TEST(GradCheck, DeskNetMiniF64) {
  double worst = 0;
  for (uint64_t seed = 0; seed < 5; ++seed)
    worst = std::max(worst, desknet_gradcheck<double>(seed, 1e-5));
  EXPECT_LT(worst, 1e-6);
}

TEST(Tape, MaskedCrossEntropyGradientMatchesFiniteDiff) {
  Rng rng(21);
  Model<double> m = build_desknet<double>(32, 1, 3, 4, 5);
  Tensor<double> images({4, 32, 32, 1});
  for (long i = 0; i < images.numel(); ++i) images[i] = rng.u01();
  Tensor<double> targets({4, 3});
  for (int i = 0; i < 4; ++i) targets.at(i, i % 3) = 1.0;
  std::vector<uint8_t> mask = {1, 0, 1, 0};

  auto loss_value = [&]() -> double {
    Tensor<double> logits = model_apply(m, images, BnMode::TrainFrozen);
    Tensor<double> probs = softmax(logits);
    double s = 0;
    for (int i = 0; i < 4; ++i)
      if (mask[static_cast<size_t>(i)])
        s += cross_entropy_row(&targets.at(i, 0), &probs.at(i, 0), 3);
    return s / 4.0;
  };

  Tape<double> tape;
  auto pvars = bind_model(tape, m);
  Var logits = model_forward(tape, m, pvars, tape.constant(images), BnMode::TrainFrozen);
  Var loss = tape.cross_entropy_mean(targets, logits, mask, 4);
  EXPECT_NEAR(tape.value(loss)[0], loss_value(), 1e-12);
  GradMap<double> analytic = backward(tape, loss, m, pvars);
  GradMap<double> fd = adamatch::testing::finite_diff_grads<double>(m, loss_value, 1e-5);
  EXPECT_LT(adamatch::testing::max_rel_err(analytic, fd), 1e-6);
}

}  // namespace
