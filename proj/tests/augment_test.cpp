#include <gtest/gtest.h>

#include "adamatch/augment.hpp"
#include "adamatch/synth.hpp"

using namespace adamatch;

namespace {

Tensor<float> random_batch(int n, int side, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, side, side, 1});
  for (auto& v : t.data) v = static_cast<float>(rng.u01());
  return t;
}

TEST(WeakAugment, NoShiftNoMirrorIsIdentity) {
  AugmentPolicy p;
  p.shift_fraction = 0.f;
  p.mirror_x = false;
  auto batch = random_batch(4, 16, 1);
  Rng rng(2);
  EXPECT_EQ(weak_augment(batch, p, rng).data, batch.data);
}

TEST(WeakAugment, MirrorTwiceWithSameDrawsIsIdentity) {
  AugmentPolicy p;
  p.shift_fraction = 0.f;
  p.mirror_x = true;
  auto batch = random_batch(4, 16, 3);
  // same seed -> same coin flips; flipping twice restores the input
  Rng r1(77), r2(77);
  auto once = weak_augment(batch, p, r1);
  auto twice = weak_augment(once, p, r2);
  EXPECT_EQ(twice.data, batch.data);
  // make sure at least one image actually flipped
  bool flipped = false;
  for (long i = 0; i < batch.numel(); ++i) flipped = flipped || once[i] != batch[i];
  EXPECT_TRUE(flipped);
}

TEST(WeakAugment, SinglePixelProbeFollowsDraws) {
  AugmentPolicy p;
  p.shift_fraction = 0.125f;  // 2px on a 16px side
  const int side = 16;
  Tensor<float> batch({1, side, side, 1});
  const int y0 = 8, x0 = 8;
  batch.at(0, y0, x0, 0) = 1.f;

  for (uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(seed);
    Rng replica = rng;  // value copy predicts the draws
    const int dx = replica.uniform_int(-2, 2);
    const int dy = replica.uniform_int(-2, 2);
    auto out = weak_augment(batch, p, rng);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        const float want = (y == y0 + dy && x == x0 + dx) ? 1.f : 0.f;
        EXPECT_FLOAT_EQ(out.at(0, y, x, 0), want) << "seed " << seed;
      }
  }
}

TEST(StrongAugment, CutoutZeroesExactClippedArea) {
  AugmentPolicy p;
  p.shift_fraction = 0.f;  // weak part consumes no draws
  p.cutout_fraction = 0.5f;
  const int side = 32;
  Tensor<float> ones({1, side, side, 1}, 1.f);

  for (uint64_t seed = 0; seed < 16; ++seed) {
    Rng rng(seed);
    Rng replica = rng;
    const int cy = replica.uniform_int(0, side - 1);
    const int cx = replica.uniform_int(0, side - 1);
    const int box = 16;
    const int y0 = std::max(0, cy - box / 2), y1 = std::min(side, cy - box / 2 + box);
    const int x0 = std::max(0, cx - box / 2), x1 = std::min(side, cx - box / 2 + box);
    auto out = strong_augment(ones, p, rng);
    long zeros = 0;
    for (long i = 0; i < out.numel(); ++i) zeros += out[i] == 0.f;
    EXPECT_EQ(zeros, static_cast<long>(y1 - y0) * (x1 - x0)) << "seed " << seed;
  }
}

TEST(StrongAugment, MinimalCutoutTouchesAtMostOnePixel) {
  AugmentPolicy p;
  p.shift_fraction = 0.f;
  p.cutout_fraction = 1.f / 32.f;  // one pixel on a 32px side
  Tensor<float> ones({1, 32, 32, 1}, 1.f);
  Rng rng(5);
  auto out = strong_augment(ones, p, rng);
  long changed = 0;
  for (long i = 0; i < out.numel(); ++i) changed += out[i] != 1.f;
  EXPECT_LE(changed, 1);
}

TEST(StrongAugment, DeterministicGivenSeed) {
  AugmentPolicy p;
  auto batch = random_batch(3, 32, 9);
  Rng r1(123), r2(123);
  EXPECT_EQ(strong_augment(batch, p, r1).data, strong_augment(batch, p, r2).data);
}

TEST(StrongAugment, OutsideCutoutMatchesWeakUnderSameStream) {
  AugmentPolicy p;
  auto batch = random_batch(2, 32, 11);
  Rng r1(321), r2(321);
  auto strong = strong_augment(batch, p, r1);
  auto weak = weak_augment(batch, p, r2);
  // differences are confined to one square of the cutout size per image
  for (int img = 0; img < 2; ++img) {
    int ymin = 32, ymax = -1, xmin = 32, xmax = -1;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (strong.at(img, y, x, 0) != weak.at(img, y, x, 0)) {
          ymin = std::min(ymin, y);
          ymax = std::max(ymax, y);
          xmin = std::min(xmin, x);
          xmax = std::max(xmax, x);
        }
    if (ymax >= 0) {
      EXPECT_LE(ymax - ymin + 1, 16);
      EXPECT_LE(xmax - xmin + 1, 16);
    }
  }
}

TEST(AugmentPair, ShapesLabelsAndReplay) {
  AugmentPolicy p;
  auto batch = random_batch(5, 28, 13);
  Rng r1(42);
  auto pair = augment_pair(batch, p, r1);
  EXPECT_EQ(pair.weak.shape, batch.shape);
  EXPECT_EQ(pair.strong.shape, batch.shape);
  EXPECT_NE(pair.weak.data, pair.strong.data);  // cutout area > 0

  Rng r2(42);
  auto replay = augment_pair(batch, p, r2);
  EXPECT_EQ(pair.weak.data, replay.weak.data);
  EXPECT_EQ(pair.strong.data, replay.strong.data);
}

TEST(AugmentPair, PixelRangePreserved) {
  AugmentPolicy p;
  p.mirror_x = true;
  Dataset ds = make_synth_digits("r", synmnist_style(), 40, 21);
  Rng rng(77);
  auto pair = augment_pair(ds.images, p, rng);
  for (float v : pair.weak.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  for (float v : pair.strong.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(AugmentPolicy, Validation) {
  AugmentPolicy p;
  p.shift_fraction = 0.3f;
  Rng rng(1);
  auto batch = random_batch(1, 16, 1);
  EXPECT_THROW(weak_augment(batch, p, rng), ValueError);
  p.shift_fraction = 0.1f;
  p.cutout_fraction = 0.f;
  EXPECT_THROW(strong_augment(batch, p, rng), ValueError);
}

}  // namespace
