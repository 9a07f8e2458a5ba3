#pragma once

#include <algorithm>

#include "adamatch/rng.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

/// Weak augmentation is shift (+ optional left-right mirror); strong adds a
/// cutout square. Mirror defaults off: digit semantics do not survive it.
struct AugmentPolicy {
  float shift_fraction = 0.125f;
  bool mirror_x = false;
  float cutout_fraction = 0.5f;
  float pad_fill = 0.f;

  void validate() const {
    if (shift_fraction < 0.f || shift_fraction > 0.25f)
      throw ValueError("augment: shift_fraction must be in [0, 0.25]");
    if (cutout_fraction <= 0.f || cutout_fraction > 1.f)
      throw ValueError("augment: cutout_fraction must be in (0, 1]");
  }
};

struct AugmentedPair {
  Tensor<float> weak;
  Tensor<float> strong;
};

/// Per image: integer translation drawn uniformly in +-floor(shift_fraction *
/// side) per axis (zero fill), then a left-right mirror with probability 1/2
/// when enabled.
inline Tensor<float> weak_augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                                  Rng& rng) {
  policy.validate();
  require_rank(batch, 4, "weak_augment");
  const int n = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  const int side = std::min(h, w);
  const int smax = static_cast<int>(policy.shift_fraction * side);
  Tensor<float> out(batch.shape);
  for (int i = 0; i < n; ++i) {
    const int dx = smax > 0 ? rng.uniform_int(-smax, smax) : 0;
    const int dy = smax > 0 ? rng.uniform_int(-smax, smax) : 0;
    const bool flip = policy.mirror_x && rng.coin();
    for (int y = 0; y < h; ++y) {
      const int sy = y - dy;
      if (sy < 0 || sy >= h) continue;  // zero fill rows stay zero
      for (int x = 0; x < w; ++x) {
        const int sx0 = x - dx;
        if (sx0 < 0 || sx0 >= w) continue;
        const int sx = flip ? (w - 1 - sx0) : sx0;
        for (int ch = 0; ch < c; ++ch) out.at(i, y, x, ch) = batch.at(i, sy, sx, ch);
      }
    }
  }
  return out;
}

/// Weak augmentation plus one axis-aligned square of side
/// floor(cutout_fraction * side) at a uniformly random center, clipped to the
/// image and filled with pad_fill.
inline Tensor<float> strong_augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                                    Rng& rng) {
  Tensor<float> out = weak_augment(batch, policy, rng);
  const int n = out.dim(0), h = out.dim(1), w = out.dim(2), c = out.dim(3);
  const int side = std::min(h, w);
  const int box = std::max(1, static_cast<int>(policy.cutout_fraction * side));
  const float fill = std::clamp(policy.pad_fill, 0.f, 1.f);
  for (int i = 0; i < n; ++i) {
    const int cy = rng.uniform_int(0, h - 1);
    const int cx = rng.uniform_int(0, w - 1);
    const int y0 = std::max(0, cy - box / 2), y1 = std::min(h, cy - box / 2 + box);
    const int x0 = std::max(0, cx - box / 2), x1 = std::min(w, cx - box / 2 + box);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        for (int ch = 0; ch < c; ++ch) out.at(i, y, x, ch) = fill;
  }
  return out;
}

/// The weak/strong pair fed into every step; the two members draw from
/// independent child streams of `rng`.
inline AugmentedPair augment_pair(const Tensor<float>& batch, const AugmentPolicy& policy,
                                  Rng& rng) {
  Rng weak_rng = rng.fork();
  Rng strong_rng = rng.fork();
  AugmentedPair pair;
  pair.weak = weak_augment(batch, policy, weak_rng);
  pair.strong = strong_augment(batch, policy, strong_rng);
  return pair;
}

}  // namespace adamatch
