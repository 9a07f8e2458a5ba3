#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "adamatch/parallel.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

// Activations are (n, h, w, c); conv weights (kh, kw, cin, cout); dense
// weights (in, out). All 3x3 convolutions use padding 1.
//
// Reductions that feed the bit-exact pipeline oracle (softmax rows,
// cross-entropy rows, batch means) run serially in row-major order,
// left to right. Heavy kernels parallelize only over disjoint outputs or
// fixed-size chunks reduced in chunk order, so results do not depend on
// the thread count.

constexpr int kMaxChannels = 512;
constexpr long kImageGrain = 8;    // images per parallel chunk
constexpr long kGradChunk = 16;    // images per weight-gradient partial buffer

// ---------------------------------------------------------------------------
// conv 3x3

template <typename S>
Tensor<S> conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                         int stride) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d.weight");
  const int n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  if (w.dim(2) != ci)
    throw ShapeError("conv2d: input has " + std::to_string(ci) + " channels, weight expects " +
                     std::to_string(w.dim(2)));
  if (co > kMaxChannels) throw ShapeError("conv2d: channel count too large");
  const int pad = 1;
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<S> y = Tensor<S>::uninit({n, oh, ow, co});

  parallel_for(n, kImageGrain, [&](long n0, long n1) {
    S acc[kMaxChannels];
    for (long img = n0; img < n1; ++img) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          for (int c = 0; c < co; ++c) acc[c] = b[c];
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= wd) continue;
              const S* xp = &x.at(static_cast<int>(img), iy, ix, 0);
              for (int c = 0; c < ci; ++c) {
                const S v = xp[c];
                const S* wp = &w.at(ky, kx, c, 0);
                for (int o = 0; o < co; ++o) acc[o] = std::fma(v, wp[o], acc[o]);
              }
            }
          }
          std::memcpy(&y.at(static_cast<int>(img), oy, ox, 0), acc, sizeof(S) * co);
        }
      }
    }
  });
  return y;
}

template <typename S>
struct ConvGrads {
  Tensor<S> gx, gw, gb;
};

template <typename S>
ConvGrads<S> conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy,
                             int stride, bool need_gx) {
  const int n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  const int oh = gy.dim(1), ow = gy.dim(2);
  const int pad = 1;

  ConvGrads<S> g;
  g.gx = Tensor<S>(x.shape);
  g.gw = Tensor<S>(w.shape);
  g.gb = Tensor<S>({co});

  if (need_gx) {
    // weights transposed to (kh, kw, cout, cin) so the inner accumulation
    // runs element-wise over contiguous cin (dot-product reductions do not
    // vectorize without reassociation)
    Tensor<S> wt({kh, kw, co, ci});
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx)
        for (int c = 0; c < ci; ++c)
          for (int o = 0; o < co; ++o) wt.at(ky, kx, o, c) = w.at(ky, kx, c, o);
    parallel_for(n, kImageGrain, [&](long n0, long n1) {
      S acc[kMaxChannels];
      for (long img = n0; img < n1; ++img) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const S* gp = &gy.at(static_cast<int>(img), oy, ox, 0);
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ox * stride + kx - pad;
                if (ix < 0 || ix >= wd) continue;
                for (int c = 0; c < ci; ++c) acc[c] = S(0);
                for (int o = 0; o < co; ++o) {
                  const S v = gp[o];
                  const S* wp = &wt.at(ky, kx, o, 0);
                  for (int c = 0; c < ci; ++c) acc[c] = std::fma(v, wp[c], acc[c]);
                }
                S* xp = &g.gx.at(static_cast<int>(img), iy, ix, 0);
                for (int c = 0; c < ci; ++c) xp[c] += acc[c];
              }
            }
          }
        }
      }
    });
  }

  // Weight/bias grads: per-chunk partial buffers, reduced in chunk order.
  // Accumulators stay in registers across the output positions of one image;
  // the valid position range per kernel offset is hoisted out of the loop.
  const long nchunks = (n + kGradChunk - 1) / kGradChunk;
  std::vector<Tensor<S>> pw(static_cast<size_t>(nchunks));
  std::vector<Tensor<S>> pb(static_cast<size_t>(nchunks));
  parallel_for(nchunks, 1, [&](long c0, long c1) {
    S acc[kMaxChannels];
    for (long ch = c0; ch < c1; ++ch) {
      Tensor<S>& lw = pw[static_cast<size_t>(ch)];
      Tensor<S>& lb = pb[static_cast<size_t>(ch)];
      lw = Tensor<S>(w.shape);
      lb = Tensor<S>({co});
      const long i0 = ch * kGradChunk;
      const long i1 = std::min<long>(i0 + kGradChunk, n);
      for (long img = i0; img < i1; ++img) {
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            const S* gp = &gy.at(static_cast<int>(img), oy, ox, 0);
            for (int o = 0; o < co; ++o) lb[o] += gp[o];
          }
        for (int ky = 0; ky < kh; ++ky) {
          const int oy0 = std::max(0, (pad - ky + stride - 1) / stride);
          const int oy1 = std::min(oh, (h - 1 - ky + pad) / stride + 1);
          for (int kx = 0; kx < kw; ++kx) {
            const int ox0 = std::max(0, (pad - kx + stride - 1) / stride);
            const int ox1 = std::min(ow, (wd - 1 - kx + pad) / stride + 1);
            for (int c = 0; c < ci; ++c) {
              for (int o = 0; o < co; ++o) acc[o] = S(0);
              for (int oy = oy0; oy < oy1; ++oy) {
                const int iy = oy * stride + ky - pad;
                for (int ox = ox0; ox < ox1; ++ox) {
                  const int ix = ox * stride + kx - pad;
                  const S v = x.at(static_cast<int>(img), iy, ix, c);
                  const S* gp = &gy.at(static_cast<int>(img), oy, ox, 0);
                  for (int o = 0; o < co; ++o) acc[o] = std::fma(v, gp[o], acc[o]);
                }
              }
              S* wp = &lw.at(ky, kx, c, 0);
              for (int o = 0; o < co; ++o) wp[o] += acc[o];
            }
          }
        }
      }
    }
  });
  for (long ch = 0; ch < nchunks; ++ch) {
    const Tensor<S>& lw = pw[static_cast<size_t>(ch)];
    const Tensor<S>& lb = pb[static_cast<size_t>(ch)];
    for (long i = 0; i < g.gw.numel(); ++i) g.gw[i] += lw[i];
    for (int o = 0; o < co; ++o) g.gb[o] += lb[o];
  }
  return g;
}

// ---------------------------------------------------------------------------
// batch normalization (per channel over n*h*w)

template <typename S>
struct BnBatchStats {
  std::vector<S> mean, inv_std;  // inv_std = 1/sqrt(var + eps)
  std::vector<S> var;            // biased batch variance
};

template <typename S>
BnBatchStats<S> bn_compute_stats(const Tensor<S>& x, S eps) {
  const int c = x.dim(x.rank() - 1);
  const long rows = x.numel() / c;
  BnBatchStats<S> st;
  st.mean.assign(static_cast<size_t>(c), S(0));
  st.var.assign(static_cast<size_t>(c), S(0));
  st.inv_std.assign(static_cast<size_t>(c), S(0));
  const S* p = x.ptr();
  const long chunk = 4096;
  const long nchunks = (rows + chunk - 1) / chunk;
  std::vector<std::vector<S>> psum(static_cast<size_t>(nchunks)),
      pvar(static_cast<size_t>(nchunks));
  parallel_for(nchunks, 1, [&](long c0, long c1) {
    for (long ch = c0; ch < c1; ++ch) {
      auto& acc = psum[static_cast<size_t>(ch)];
      acc.assign(static_cast<size_t>(c), S(0));
      const long r1 = std::min(rows, (ch + 1) * chunk);
      for (long r = ch * chunk; r < r1; ++r)
        for (int j = 0; j < c; ++j) acc[static_cast<size_t>(j)] += p[r * c + j];
    }
  });
  for (long ch = 0; ch < nchunks; ++ch)
    for (int j = 0; j < c; ++j) st.mean[static_cast<size_t>(j)] += psum[static_cast<size_t>(ch)][static_cast<size_t>(j)];
  for (int j = 0; j < c; ++j) st.mean[static_cast<size_t>(j)] /= static_cast<S>(rows);
  parallel_for(nchunks, 1, [&](long c0, long c1) {
    for (long ch = c0; ch < c1; ++ch) {
      auto& acc = pvar[static_cast<size_t>(ch)];
      acc.assign(static_cast<size_t>(c), S(0));
      const long r1 = std::min(rows, (ch + 1) * chunk);
      for (long r = ch * chunk; r < r1; ++r)
        for (int j = 0; j < c; ++j) {
          const S d = p[r * c + j] - st.mean[static_cast<size_t>(j)];
          acc[static_cast<size_t>(j)] += d * d;
        }
    }
  });
  for (long ch = 0; ch < nchunks; ++ch)
    for (int j = 0; j < c; ++j) st.var[static_cast<size_t>(j)] += pvar[static_cast<size_t>(ch)][static_cast<size_t>(j)];
  for (int j = 0; j < c; ++j) {
    st.var[static_cast<size_t>(j)] /= static_cast<S>(rows);
    st.inv_std[static_cast<size_t>(j)] =
        S(1) / std::sqrt(st.var[static_cast<size_t>(j)] + eps);
  }
  return st;
}

/// y = gamma * xhat + beta. Writes xhat for the backward pass.
template <typename S>
Tensor<S> bn_normalize(const Tensor<S>& x, const std::vector<S>& mean,
                       const std::vector<S>& inv_std, const Tensor<S>& gamma,
                       const Tensor<S>& beta, Tensor<S>* xhat_out) {
  const int c = x.dim(x.rank() - 1);
  const long rows = x.numel() / c;
  Tensor<S> y = Tensor<S>::uninit(x.shape);
  if (xhat_out) *xhat_out = Tensor<S>::uninit(x.shape);
  const S* p = x.ptr();
  S* yp = y.ptr();
  S* hp = xhat_out ? xhat_out->ptr() : nullptr;
  parallel_for(rows, 1024, [&](long r0, long r1) {
    if (hp) {
      for (long r = r0; r < r1; ++r)
        for (int j = 0; j < c; ++j) {
          const S xh = (p[r * c + j] - mean[static_cast<size_t>(j)]) *
                       inv_std[static_cast<size_t>(j)];
          hp[r * c + j] = xh;
          yp[r * c + j] = gamma[j] * xh + beta[j];
        }
    } else {
      for (long r = r0; r < r1; ++r)
        for (int j = 0; j < c; ++j)
          yp[r * c + j] = gamma[j] * (p[r * c + j] - mean[static_cast<size_t>(j)]) *
                              inv_std[static_cast<size_t>(j)] +
                          beta[j];
    }
  });
  return y;
}

/// sum(gy) and sum(gy*xhat) per channel; fixed chunking, ordered reduce.
template <typename S>
void bn_reduce_sums(const S* hp, const S* gp, long rows, int c, Tensor<S>& ggamma,
                    Tensor<S>& gbeta) {
  const long chunk = 4096;
  const long nchunks = (rows + chunk - 1) / chunk;
  std::vector<std::vector<S>> pg(static_cast<size_t>(nchunks)),
      pb(static_cast<size_t>(nchunks));
  parallel_for(nchunks, 1, [&](long c0, long c1) {
    for (long ch = c0; ch < c1; ++ch) {
      auto& ag = pg[static_cast<size_t>(ch)];
      auto& ab = pb[static_cast<size_t>(ch)];
      ag.assign(static_cast<size_t>(c), S(0));
      ab.assign(static_cast<size_t>(c), S(0));
      const long r1 = std::min(rows, (ch + 1) * chunk);
      for (long r = ch * chunk; r < r1; ++r)
        for (int j = 0; j < c; ++j) {
          ab[static_cast<size_t>(j)] += gp[r * c + j];
          ag[static_cast<size_t>(j)] += gp[r * c + j] * hp[r * c + j];
        }
    }
  });
  for (long ch = 0; ch < nchunks; ++ch)
    for (int j = 0; j < c; ++j) {
      ggamma[j] += pg[static_cast<size_t>(ch)][static_cast<size_t>(j)];
      gbeta[j] += pb[static_cast<size_t>(ch)][static_cast<size_t>(j)];
    }
}

template <typename S>
struct BnGrads {
  Tensor<S> gx, ggamma, gbeta;
};

/// Backward through batch statistics (TrainUpdate / TrainFrozen modes).
template <typename S>
BnGrads<S> bn_backward_batch(const Tensor<S>& xhat, const std::vector<S>& inv_std,
                             const Tensor<S>& gamma, const Tensor<S>& gy) {
  const int c = xhat.dim(xhat.rank() - 1);
  const long rows = xhat.numel() / c;
  BnGrads<S> g;
  g.gx = Tensor<S>::uninit(xhat.shape);
  g.ggamma = Tensor<S>({c});
  g.gbeta = Tensor<S>({c});
  const S* hp = xhat.ptr();
  const S* gp = gy.ptr();
  bn_reduce_sums(hp, gp, rows, c, g.ggamma, g.gbeta);
  std::vector<S> mean_gy(static_cast<size_t>(c)), mean_gyxh(static_cast<size_t>(c));
  for (int j = 0; j < c; ++j) {
    mean_gy[static_cast<size_t>(j)] = g.gbeta[j] / static_cast<S>(rows);
    mean_gyxh[static_cast<size_t>(j)] = g.ggamma[j] / static_cast<S>(rows);
  }
  S* xp = g.gx.ptr();
  parallel_for(rows, 1024, [&](long r0, long r1) {
    for (long r = r0; r < r1; ++r)
      for (int j = 0; j < c; ++j) {
        const S t = gp[r * c + j] - mean_gy[static_cast<size_t>(j)] -
                    hp[r * c + j] * mean_gyxh[static_cast<size_t>(j)];
        xp[r * c + j] = gamma[j] * inv_std[static_cast<size_t>(j)] * t;
      }
  });
  return g;
}

/// Backward when normalization used fixed (running) statistics.
template <typename S>
BnGrads<S> bn_backward_fixed(const Tensor<S>& xhat, const std::vector<S>& inv_std,
                             const Tensor<S>& gamma, const Tensor<S>& gy) {
  const int c = xhat.dim(xhat.rank() - 1);
  const long rows = xhat.numel() / c;
  BnGrads<S> g;
  g.gx = Tensor<S>::uninit(xhat.shape);
  g.ggamma = Tensor<S>({c});
  g.gbeta = Tensor<S>({c});
  const S* hp = xhat.ptr();
  const S* gp = gy.ptr();
  bn_reduce_sums(hp, gp, rows, c, g.ggamma, g.gbeta);
  S* xp = g.gx.ptr();
  parallel_for(rows, 1024, [&](long r0, long r1) {
    for (long r = r0; r < r1; ++r)
      for (int j = 0; j < c; ++j)
        xp[r * c + j] = gp[r * c + j] * gamma[j] * inv_std[static_cast<size_t>(j)];
  });
  return g;
}

// ---------------------------------------------------------------------------
// relu / global average pool / dense

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& x) {
  Tensor<S> y = Tensor<S>::uninit(x.shape);
  parallel_for(x.numel(), 1 << 16, [&](long i0, long i1) {
    for (long i = i0; i < i1; ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
  });
  return y;
}

template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& gy) {
  Tensor<S> gx = Tensor<S>::uninit(x.shape);
  parallel_for(x.numel(), 1 << 16, [&](long i0, long i1) {
    for (long i = i0; i < i1; ++i) gx[i] = x[i] > S(0) ? gy[i] : S(0);
  });
  return gx;
}

template <typename S>
Tensor<S> gap_forward(const Tensor<S>& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor<S> y({n, c});
  const S inv = S(1) / static_cast<S>(h * w);
  for (int img = 0; img < n; ++img) {
    S* yp = &y.at(img, 0);
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const S* xp = &x.at(img, iy, ix, 0);
        for (int j = 0; j < c; ++j) yp[j] += xp[j];
      }
    for (int j = 0; j < c; ++j) yp[j] *= inv;
  }
  return y;
}

template <typename S>
Tensor<S> gap_backward(const std::vector<int>& xshape, const Tensor<S>& gy) {
  const int n = xshape[0], h = xshape[1], w = xshape[2], c = xshape[3];
  Tensor<S> gx(xshape);
  const S inv = S(1) / static_cast<S>(h * w);
  for (int img = 0; img < n; ++img)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        S* xp = &gx.at(img, iy, ix, 0);
        const S* gp = &gy.at(img, 0);
        for (int j = 0; j < c; ++j) xp[j] = gp[j] * inv;
      }
  return gx;
}

template <typename S>
Tensor<S> dense_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require_rank(x, 2, "dense");
  const int n = x.dim(0), in = x.dim(1), out = w.dim(1);
  if (w.dim(0) != in) throw ShapeError("dense: weight/input mismatch");
  Tensor<S> y({n, out});
  for (int i = 0; i < n; ++i) {
    S* yp = &y.at(i, 0);
    for (int o = 0; o < out; ++o) yp[o] = b[o];
    for (int j = 0; j < in; ++j) {
      const S v = x.at(i, j);
      const S* wp = &w.at(j, 0);
      for (int o = 0; o < out; ++o) yp[o] = std::fma(v, wp[o], yp[o]);
    }
  }
  return y;
}

template <typename S>
struct DenseGrads {
  Tensor<S> gx, gw, gb;
};

template <typename S>
DenseGrads<S> dense_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy) {
  const int n = x.dim(0), in = x.dim(1), out = w.dim(1);
  DenseGrads<S> g;
  g.gx = Tensor<S>({n, in});
  g.gw = Tensor<S>(w.shape);
  g.gb = Tensor<S>({out});
  for (int i = 0; i < n; ++i) {
    const S* gp = &gy.at(i, 0);
    for (int o = 0; o < out; ++o) g.gb[o] += gp[o];
    for (int j = 0; j < in; ++j) {
      const S* wp = &w.at(j, 0);
      S acc = S(0);
      for (int o = 0; o < out; ++o) acc = std::fma(gp[o], wp[o], acc);
      g.gx.at(i, j) = acc;
      S* gwp = &g.gw.at(j, 0);
      const S v = x.at(i, j);
      for (int o = 0; o < out; ++o) gwp[o] = std::fma(v, gp[o], gwp[o]);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy rows (canonical order: per row, left to right)

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  require_rank(logits, 2, "softmax");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<S> p(logits.shape);
  for (int i = 0; i < n; ++i) {
    const S* z = &logits.at(i, 0);
    S* q = &p.at(i, 0);
    S m = z[0];
    for (int j = 1; j < k; ++j)
      if (z[j] > m) m = z[j];
    S sum = S(0);
    for (int j = 0; j < k; ++j) {
      q[j] = std::exp(z[j] - m);
      sum += q[j];
    }
    for (int j = 0; j < k; ++j) q[j] /= sum;
  }
  return p;
}

/// H(p, q) = -sum_j p_j log q_j over one row; exact-zero p entries contribute
/// nothing (0 log 0 := 0).
template <typename S>
S cross_entropy_row(const S* p, const S* q, int k) {
  S acc = S(0);
  for (int j = 0; j < k; ++j)
    if (p[j] != S(0)) acc += p[j] * std::log(q[j]);
  return -acc;
}

/// Mean over rows of H(target_row, softmax(logit_row)).
template <typename S>
S cross_entropy(const Tensor<S>& targets, const Tensor<S>& logits) {
  require_rank(targets, 2, "cross_entropy");
  require_same_shape(targets, logits, "cross_entropy");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor<S> q = softmax(logits);
  S sum = S(0);
  for (int i = 0; i < n; ++i) sum += cross_entropy_row(&targets.at(i, 0), &q.at(i, 0), k);
  return sum / static_cast<S>(n);
}

template <typename S>
int argmax_row(const S* row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;  // ties keep the lowest index
  return best;
}

template <typename S>
S max_row(const S* row, int k) {
  S m = row[0];
  for (int j = 1; j < k; ++j)
    if (row[j] > m) m = row[j];
  return m;
}

}  // namespace adamatch
