#pragma once

// Procedural handwritten-digit stand-ins. Two domains with deliberately
// different stroke styles provide a desk-scale source/target pair when the
// real IDX files are not on disk. Generation is fully deterministic.

#include <array>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "adamatch/data.hpp"
#include "adamatch/rng.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

struct SynthStyle {
  int side = 28;
  double scale_lo = 0.62, scale_hi = 0.80;   // glyph size as fraction of side
  double rot_deg = 12.0;                     // rotation jitter
  double shear = 0.18;                       // horizontal shear jitter
  double thick_lo = 0.060, thick_hi = 0.095; // stroke half-width / side
  double jitter = 0.05;                      // center jitter as fraction of side
  double intensity_lo = 0.85, intensity_hi = 1.0;
  double noise_sigma = 0.02;
  int blur_passes = 0;                       // 3x3 box blur applications
};

inline SynthStyle synmnist_style() { return SynthStyle{}; }

inline SynthStyle synusps_style() {
  SynthStyle s;
  s.side = 16;
  s.scale_lo = 0.55;
  s.scale_hi = 0.78;
  s.rot_deg = 16.0;
  s.shear = 0.30;
  s.thick_lo = 0.040;
  s.thick_hi = 0.065;
  s.jitter = 0.06;
  s.intensity_lo = 0.65;
  s.intensity_hi = 1.0;
  s.noise_sigma = 0.03;
  s.blur_passes = 1;
  return s;
}

namespace detail {

using Poly = std::vector<std::pair<float, float>>;  // glyph-space polyline

inline const std::vector<std::vector<Poly>>& digit_glyphs() {
  static const std::vector<std::vector<Poly>> glyphs = [] {
    std::vector<std::vector<Poly>> g(10);
    auto ring = [](float cx, float cy, float rx, float ry, int npts) {
      Poly p;
      for (int i = 0; i <= npts; ++i) {
        const float a = 6.2831853f * i / npts;
        p.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
      }
      return p;
    };
    g[0] = {ring(0.50f, 0.50f, 0.24f, 0.36f, 12)};
    g[1] = {{{0.36f, 0.26f}, {0.54f, 0.13f}, {0.54f, 0.87f}}};
    g[2] = {{{0.28f, 0.30f}, {0.33f, 0.17f}, {0.50f, 0.12f}, {0.67f, 0.18f}, {0.71f, 0.32f},
             {0.63f, 0.47f}, {0.42f, 0.62f}, {0.27f, 0.76f}, {0.25f, 0.87f}},
            {{0.25f, 0.87f}, {0.74f, 0.87f}}};
    g[3] = {{{0.28f, 0.19f}, {0.45f, 0.12f}, {0.64f, 0.17f}, {0.70f, 0.29f}, {0.62f, 0.42f},
             {0.47f, 0.47f}},
            {{0.47f, 0.47f}, {0.66f, 0.53f}, {0.72f, 0.67f}, {0.64f, 0.82f}, {0.45f, 0.88f},
             {0.28f, 0.81f}}};
    g[4] = {{{0.62f, 0.12f}, {0.26f, 0.60f}, {0.76f, 0.60f}}, {{0.62f, 0.34f}, {0.62f, 0.88f}}};
    g[5] = {{{0.70f, 0.13f}, {0.32f, 0.13f}, {0.29f, 0.44f}, {0.47f, 0.39f}, {0.64f, 0.44f},
             {0.71f, 0.58f}, {0.66f, 0.76f}, {0.48f, 0.87f}, {0.29f, 0.81f}}};
    g[6] = {{{0.63f, 0.13f}, {0.45f, 0.21f}, {0.33f, 0.39f}, {0.28f, 0.60f}, {0.34f, 0.78f},
             {0.50f, 0.87f}, {0.65f, 0.79f}, {0.69f, 0.63f}, {0.60f, 0.52f}, {0.44f, 0.51f},
             {0.31f, 0.60f}}};
    g[7] = {{{0.26f, 0.13f}, {0.74f, 0.13f}, {0.44f, 0.88f}}};
    g[8] = {ring(0.50f, 0.30f, 0.18f, 0.17f, 10), ring(0.50f, 0.67f, 0.22f, 0.21f, 10)};
    g[9] = {{{0.37f, 0.87f}, {0.55f, 0.79f}, {0.67f, 0.61f}, {0.72f, 0.40f}, {0.66f, 0.22f},
             {0.50f, 0.13f}, {0.35f, 0.21f}, {0.31f, 0.37f}, {0.40f, 0.48f}, {0.56f, 0.49f},
             {0.69f, 0.40f}}};
    return g;
  }();
  return glyphs;
}

inline float segment_distance(float px, float py, float ax, float ay, float bx, float by) {
  const float vx = bx - ax, vy = by - ay;
  const float wx = px - ax, wy = py - ay;
  const float vv = vx * vx + vy * vy;
  float t = vv > 0 ? (wx * vx + wy * vy) / vv : 0.f;
  t = std::clamp(t, 0.f, 1.f);
  const float dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

inline void render_digit(float* out, int side, int digit, Rng& rng, const SynthStyle& st) {
  const auto& glyph = digit_glyphs()[static_cast<size_t>(digit)];

  const double scale = st.scale_lo + rng.u01() * (st.scale_hi - st.scale_lo);
  const double theta = (rng.u01() * 2.0 - 1.0) * st.rot_deg * 3.14159265358979 / 180.0;
  const double shear = (rng.u01() * 2.0 - 1.0) * st.shear;
  const double cx = side * (0.5 + (rng.u01() * 2.0 - 1.0) * st.jitter);
  const double cy = side * (0.5 + (rng.u01() * 2.0 - 1.0) * st.jitter);
  const double thick = side * (st.thick_lo + rng.u01() * (st.thick_hi - st.thick_lo));
  const float peak = static_cast<float>(st.intensity_lo +
                                        rng.u01() * (st.intensity_hi - st.intensity_lo));
  const double ct = std::cos(theta), sn = std::sin(theta);
  const double sz = side * scale;

  // glyph space -> pixel space
  auto map = [&](float gx, float gy) {
    const double x0 = (gx - 0.5 + shear * (0.5 - gy)) * sz;
    const double y0 = (gy - 0.5) * sz;
    return std::pair<float, float>{static_cast<float>(cx + ct * x0 - sn * y0),
                                   static_cast<float>(cy + sn * x0 + ct * y0)};
  };

  std::vector<std::array<float, 4>> segs;
  for (const Poly& poly : glyph)
    for (size_t i = 0; i + 1 < poly.size(); ++i) {
      auto [x0, y0] = map(poly[i].first, poly[i].second);
      auto [x1, y1] = map(poly[i + 1].first, poly[i + 1].second);
      segs.push_back({x0, y0, x1, y1});
    }

  const float aa = 0.7f;  // soft edge width in pixels
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      float best = 1e9f;
      for (const auto& s : segs)
        best = std::min(best, segment_distance(x + 0.5f, y + 0.5f, s[0], s[1], s[2], s[3]));
      const float v = std::clamp((static_cast<float>(thick) + aa - best) / (2.f * aa), 0.f, 1.f);
      out[y * side + x] = peak * v;
    }

  for (int pass = 0; pass < st.blur_passes; ++pass) {
    std::vector<float> tmp(out, out + side * side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        float acc = 0.f;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
            acc += tmp[static_cast<size_t>(yy * side + xx)];
            ++cnt;
          }
        out[y * side + x] = acc / cnt;
      }
  }

  if (st.noise_sigma > 0)
    for (int i = 0; i < side * side; ++i)
      out[i] = std::clamp(out[i] + static_cast<float>(rng.normal() * st.noise_sigma), 0.f, 1.f);
}

}  // namespace detail

/// Generates a balanced synthetic digit dataset (labels cycle 0..9).
inline Dataset make_synth_digits(const std::string& name, const SynthStyle& style, int n,
                                 uint64_t seed) {
  Dataset ds;
  ds.name = name;
  ds.k = 10;
  ds.images = Tensor<float>({n, style.side, style.side, 1});
  ds.labels.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int digit = i % 10;
    ds.labels[static_cast<size_t>(i)] = digit;
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    detail::render_digit(ds.images.ptr() + static_cast<long>(i) * style.side * style.side,
                         style.side, digit, rng, style);
  }
  ds.validate();
  return ds;
}

/// Canonical synthetic splits, memoized per process (generation is pure).
inline const Dataset& synth_split(const std::string& domain, bool train) {
  static std::mutex mu;
  static std::map<std::string, Dataset> cache;
  std::lock_guard<std::mutex> lk(mu);
  const std::string key = domain + (train ? "/train" : "/test");
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  SynthStyle style;
  uint64_t base;
  int n;
  if (domain == "synmnist") {
    style = synmnist_style();
    base = 0x534d4e49535401ULL;
    n = train ? 20000 : 4000;
  } else if (domain == "synusps") {
    style = synusps_style();
    base = 0x5355535053ULL;
    n = train ? 7000 : 2000;
  } else {
    throw DataError(DataError::Kind::Other, "unknown synthetic domain " + domain);
  }
  Dataset ds = make_synth_digits(domain, style, n, mix_seed(base, train ? 1 : 2));
  return cache.emplace(key, std::move(ds)).first->second;
}

}  // namespace adamatch
