#include <gtest/gtest.h>

#include "adamatch/nn.hpp"
#include "adamatch/optim.hpp"

using namespace adamatch;

namespace {

Model<float> one_param_model(float init) {
  Model<float> m;
  m.add_param("w", Tensor<float>({3}, init), true);
  return m;
}

TEST(LrAt, Endpoints) {
  Optimizer<float> opt;
  opt.lr0 = 0.03f;
  opt.final_lr_fraction = 0.25f;
  EXPECT_FLOAT_EQ(lr_at(opt, 0, 1000), 0.03f);
  EXPECT_NEAR(lr_at(opt, 1000, 1000), 0.0075f, 1e-9);
  EXPECT_NEAR(lr_at(opt, 500, 1000), 0.03f * (1.f + 0.25f) / 2.f, 1e-9);
}

TEST(LrAt, MonotoneNonincreasing) {
  Optimizer<float> opt;
  float prev = lr_at(opt, 0, 257);
  for (long t = 1; t <= 257; ++t) {
    float cur = lr_at(opt, t, 257);
    EXPECT_LE(cur, prev + 1e-9f);
    prev = cur;
  }
}

TEST(LrAt, ZeroTotalThrows) {
  Optimizer<float> opt;
  EXPECT_THROW(lr_at(opt, 0, 0), ValueError);
}

TEST(SgdStep, VanillaDecreasesByLrTimesGrad) {
  Model<float> m = one_param_model(1.f);
  Optimizer<float> opt;
  opt.momentum = 0.f;
  opt.weight_decay = 0.f;
  GradMap<float> g;
  g["w"] = Tensor<float>({3}, 0.5f);
  sgd_step(m, g, opt, 0.1f);
  for (long i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(m.params[0].value[i], 1.f - 0.1f * 0.5f);
}

TEST(SgdStep, PureDecayShrinksByFactor) {
  Model<float> m = one_param_model(2.f);
  Optimizer<float> opt;
  opt.momentum = 0.f;
  opt.weight_decay = 0.01f;
  GradMap<float> g;
  g["w"] = Tensor<float>({3}, 0.f);
  sgd_step(m, g, opt, 0.1f);
  for (long i = 0; i < 3; ++i)
    EXPECT_NEAR(m.params[0].value[i], 2.f * (1.f - 0.1f * 0.01f), 1e-7);
}

TEST(SgdStep, MomentumMatchesHandUnroll) {
  Model<float> m = one_param_model(1.f);
  Optimizer<float> opt;
  opt.momentum = 0.9f;
  opt.weight_decay = 0.f;
  const float lr = 0.05f, g1 = 0.3f, g2 = -0.2f;
  GradMap<float> g;
  g["w"] = Tensor<float>({3}, g1);
  sgd_step(m, g, opt, lr);
  g["w"] = Tensor<float>({3}, g2);
  sgd_step(m, g, opt, lr);
  // v1 = g1; p1 = 1 - lr*v1; v2 = 0.9*v1 + g2; p2 = p1 - lr*v2
  const float v1 = g1;
  const float p1 = 1.f - lr * v1;
  const float v2 = 0.9f * v1 + g2;
  const float p2 = p1 - lr * v2;
  for (long i = 0; i < 3; ++i) EXPECT_NEAR(m.params[0].value[i], p2, 1e-7);
}

TEST(SgdStep, BnAffineExcludedFromDecay) {
  Model<float> m;
  m.add_param("conv.w", Tensor<float>({2}, 1.f), true);
  m.add_param("bn.gamma", Tensor<float>({2}, 1.f), false);
  Optimizer<float> opt;
  opt.momentum = 0.f;
  opt.weight_decay = 0.5f;
  GradMap<float> g;
  g["conv.w"] = Tensor<float>({2}, 0.f);
  g["bn.gamma"] = Tensor<float>({2}, 0.f);
  sgd_step(m, g, opt, 0.1f);
  EXPECT_LT(m.params[0].value[0], 1.f);       // decayed
  EXPECT_FLOAT_EQ(m.params[1].value[0], 1.f); // untouched
}

TEST(SgdStep, MissingGradientThrows) {
  Model<float> m = one_param_model(1.f);
  Optimizer<float> opt;
  GradMap<float> empty;
  EXPECT_THROW(sgd_step(m, empty, opt, 0.1f), ValueError);
}

}  // namespace
