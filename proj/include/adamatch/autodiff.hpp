#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "adamatch/kernels.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

/// Handle into a Tape. Default-constructed handles are detached.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over tensor operations. Each op records a closure that
/// pulls the output gradient into its parents. A non-recording tape computes
/// values only; calling backward on it is the "detached loss" error.
template <typename S>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Tensor<S> v) { return push(std::move(v), false, {}); }

  /// Differentiable leaf (a model parameter).
  Var leaf(Tensor<S> v) { return push(std::move(v), record_, {}); }

  const Tensor<S>& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() target w.r.t. `v` (zeros if the loss
  /// does not depend on it).
  const Tensor<S>& grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0) {
      zero_grad_scratch_ = Tensor<S>(n.value.shape);
      return zero_grad_scratch_;
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (!record_) throw ValueError("backward: loss is detached (tape not recording)");
    Node& l = node(loss);
    if (l.value.numel() != 1) throw ShapeError("backward: loss must be a scalar");
    l.grad = Tensor<S>({1});
    l.grad[0] = S(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.numel() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  // ---- ops ----------------------------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor<S> out(value(a).shape);
    for (long i = 0; i < out.numel(); ++i) out[i] = value(a)[i] + value(b)[i];
    return unary_binary(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<S>& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  /// a + c*b (used for the total loss).
  Var add_scaled(Var a, Var b, S c) {
    Tensor<S> out(value(a).shape);
    for (long i = 0; i < out.numel(); ++i) out[i] = value(a)[i] + c * value(b)[i];
    return unary_binary(std::move(out), {a, b}, [a, b, c](Tape& t, const Tensor<S>& g) {
      t.accumulate(a, g);
      Tensor<S> gb(g.shape);
      for (long i = 0; i < g.numel(); ++i) gb[i] = c * g[i];
      t.accumulate(b, gb);
    });
  }

  /// lam*a + (1-lam)*b elementwise with a constant lam; gradient flows to
  /// both inputs.
  Var lerp(Var a, Var b, Tensor<S> lam) {
    require_same_shape(value(a), value(b), "lerp");
    require_same_shape(value(a), lam, "lerp.lambda");
    auto lp = std::make_shared<Tensor<S>>(std::move(lam));
    Tensor<S> out(value(a).shape);
    for (long i = 0; i < out.numel(); ++i)
      out[i] = (*lp)[i] * value(a)[i] + (S(1) - (*lp)[i]) * value(b)[i];
    return unary_binary(std::move(out), {a, b}, [a, b, lp](Tape& t, const Tensor<S>& g) {
      Tensor<S> ga(g.shape), gb(g.shape);
      for (long i = 0; i < g.numel(); ++i) {
        ga[i] = (*lp)[i] * g[i];
        gb[i] = (S(1) - (*lp)[i]) * g[i];
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  Var stop_gradient(Var a) {
    Tensor<S> out = value(a);
    return push(std::move(out), false, {});
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::vector<int> shp = value(parts[0]).shape;
    long rows = 0;
    for (Var p : parts) {
      if (value(p).rank() != static_cast<int>(shp.size()))
        throw ShapeError("concat_rows: rank mismatch");
      rows += value(p).dim(0);
    }
    shp[0] = static_cast<int>(rows);
    Tensor<S> out(shp);
    long off = 0;
    const long row_sz = out.numel() / out.dim(0);
    for (Var p : parts) {
      const Tensor<S>& v = value(p);
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off * row_sz);
      off += v.dim(0);
    }
    auto ps = parts;
    return unary_binary(std::move(out), parts, [ps, row_sz](Tape& t, const Tensor<S>& g) {
      long off = 0;
      for (Var p : ps) {
        const long nr = t.value(p).dim(0);
        Tensor<S> gp(t.value(p).shape);
        std::copy(g.data.begin() + off * row_sz, g.data.begin() + (off + nr) * row_sz,
                  gp.data.begin());
        t.accumulate(p, gp);
        off += nr;
      }
    });
  }

  /// Rows [begin, end) of a.
  Var slice_rows(Var a, int begin, int end) {
    const Tensor<S>& v = value(a);
    if (begin < 0 || end > v.dim(0) || begin >= end)
      throw ShapeError("slice_rows: bad range");
    std::vector<int> shp = v.shape;
    shp[0] = end - begin;
    const long row_sz = v.numel() / v.dim(0);
    Tensor<S> out(shp);
    std::copy(v.data.begin() + begin * row_sz, v.data.begin() + end * row_sz,
              out.data.begin());
    return unary_binary(std::move(out), {a}, [a, begin, row_sz](Tape& t, const Tensor<S>& g) {
      Tensor<S> ga(t.value(a).shape);
      std::copy(g.data.begin(), g.data.end(), ga.data.begin() + begin * row_sz);
      t.accumulate(a, ga);
    });
  }

  Var relu(Var a) {
    Tensor<S> out = relu_forward(value(a));
    return unary_binary(std::move(out), {a}, [a](Tape& t, const Tensor<S>& g) {
      t.accumulate(a, relu_backward(t.value(a), g));
    });
  }

  /// (x + shift) * scale, constants; the input normalization layer.
  Var affine_const(Var a, S scale, S shift) {
    Tensor<S> out(value(a).shape);
    for (long i = 0; i < out.numel(); ++i) out[i] = (value(a)[i] + shift) * scale;
    return unary_binary(std::move(out), {a}, [a, scale](Tape& t, const Tensor<S>& g) {
      Tensor<S> ga(g.shape);
      for (long i = 0; i < g.numel(); ++i) ga[i] = g[i] * scale;
      t.accumulate(a, ga);
    });
  }

  Var conv2d(Var x, Var w, Var b, int stride) {
    Tensor<S> out = conv2d_forward(value(x), value(w), value(b), stride);
    return unary_binary(std::move(out), {x, w, b},
                        [x, w, b, stride](Tape& t, const Tensor<S>& g) {
                          const bool need_gx = t.node(x).needs_grad;
                          ConvGrads<S> cg =
                              conv2d_backward(t.value(x), t.value(w), g, stride, need_gx);
                          if (need_gx) t.accumulate(x, cg.gx);
                          t.accumulate(w, cg.gw);
                          t.accumulate(b, cg.gb);
                        });
  }

  /// Batch normalization with explicit statistics. `batch_stats` selects
  /// normalization by the current batch (TrainUpdate/TrainFrozen) versus the
  /// provided fixed statistics (Eval).
  Var batchnorm(Var x, Var gamma, Var beta, bool batch_stats,
                const std::vector<S>& fixed_mean, const std::vector<S>& fixed_inv_std,
                S eps, BnBatchStats<S>* stats_out) {
    auto xhat = std::make_shared<Tensor<S>>();
    auto inv_std = std::make_shared<std::vector<S>>();
    Tensor<S> out;
    if (batch_stats) {
      BnBatchStats<S> st = bn_compute_stats(value(x), eps);
      out = bn_normalize(value(x), st.mean, st.inv_std, value(gamma), value(beta),
                         xhat.get());
      *inv_std = st.inv_std;
      if (stats_out) *stats_out = std::move(st);
    } else {
      out = bn_normalize(value(x), fixed_mean, fixed_inv_std, value(gamma), value(beta),
                         xhat.get());
      *inv_std = fixed_inv_std;
    }
    return unary_binary(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, batch_stats](Tape& t,
                                                                     const Tensor<S>& g) {
                          BnGrads<S> bg =
                              batch_stats
                                  ? bn_backward_batch(*xhat, *inv_std, t.value(gamma), g)
                                  : bn_backward_fixed(*xhat, *inv_std, t.value(gamma), g);
                          t.accumulate(x, bg.gx);
                          t.accumulate(gamma, bg.ggamma);
                          t.accumulate(beta, bg.gbeta);
                        });
  }

  Var global_avg_pool(Var x) {
    Tensor<S> out = gap_forward(value(x));
    auto shp = value(x).shape;
    return unary_binary(std::move(out), {x}, [x, shp](Tape& t, const Tensor<S>& g) {
      t.accumulate(x, gap_backward(shp, g));
    });
  }

  Var dense(Var x, Var w, Var b) {
    Tensor<S> out = dense_forward(value(x), value(w), value(b));
    return unary_binary(std::move(out), {x, w, b}, [x, w, b](Tape& t, const Tensor<S>& g) {
      DenseGrads<S> dg = dense_backward(t.value(x), t.value(w), g);
      if (t.node(x).needs_grad) t.accumulate(x, dg.gx);
      t.accumulate(w, dg.gw);
      t.accumulate(b, dg.gb);
    });
  }

  /// Mean cross-entropy of constant target rows against softmax(logits),
  /// optionally masked: sum_{i: weight_i != 0} H_i / denom.
  /// `weights` empty means all rows count; denom <= 0 means the row count.
  Var cross_entropy_mean(Tensor<S> targets, Var logits, std::vector<uint8_t> weights = {},
                         long denom = 0) {
    const Tensor<S>& z = value(logits);
    require_rank(z, 2, "cross_entropy");
    require_same_shape(targets, z, "cross_entropy");
    const int n = z.dim(0), k = z.dim(1);
    if (!weights.empty() && static_cast<int>(weights.size()) != n)
      throw ShapeError("cross_entropy: weight count mismatch");
    if (denom <= 0) denom = n;
    auto probs = std::make_shared<Tensor<S>>(softmax(z));
    auto tg = std::make_shared<Tensor<S>>(std::move(targets));
    auto wt = std::make_shared<std::vector<uint8_t>>(std::move(weights));
    S sum = S(0);
    for (int i = 0; i < n; ++i) {
      if (!wt->empty() && (*wt)[static_cast<size_t>(i)] == 0) continue;
      sum += cross_entropy_row(&tg->at(i, 0), &probs->at(i, 0), k);
    }
    Tensor<S> out({1});
    out[0] = sum / static_cast<S>(denom);
    return unary_binary(std::move(out), {logits},
                        [logits, probs, tg, wt, n, k, denom](Tape& t, const Tensor<S>& g) {
                          const S c = g[0] / static_cast<S>(denom);
                          Tensor<S> gz({n, k});
                          for (int i = 0; i < n; ++i) {
                            if (!wt->empty() && (*wt)[static_cast<size_t>(i)] == 0) continue;
                            for (int j = 0; j < k; ++j)
                              gz.at(i, j) = c * (probs->at(i, j) - tg->at(i, j));
                          }
                          t.accumulate(logits, gz);
                        });
  }

  /// Sum of all entries (test utility).
  Var sum(Var a) {
    S s = S(0);
    for (long i = 0; i < value(a).numel(); ++i) s += value(a)[i];
    Tensor<S> out({1});
    out[0] = s;
    return unary_binary(std::move(out), {a}, [a](Tape& t, const Tensor<S>& g) {
      Tensor<S> ga(t.value(a).shape, g[0]);
      t.accumulate(a, ga);
    });
  }

  Var mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor<S> out(value(a).shape);
    for (long i = 0; i < out.numel(); ++i) out[i] = value(a)[i] * value(b)[i];
    return unary_binary(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<S>& g) {
      Tensor<S> ga(g.shape), gb(g.shape);
      for (long i = 0; i < g.numel(); ++i) {
        ga[i] = g[i] * t.value(b)[i];
        gb[i] = g[i] * t.value(a)[i];
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  // -------------------------------------------------------------------------

  void accumulate(Var v, const Tensor<S>& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (n.grad.numel() == 0) n.grad = Tensor<S>(n.value.shape);
    require_same_shape(n.grad, g, "grad accumulate");
    for (long i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }

  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Tensor<S>&)> backward;
  };

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ValueError("tape: dangling variable");
    return nodes_[static_cast<size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ValueError("tape: dangling variable");
    return nodes_[static_cast<size_t>(v.id)];
  }

 private:
  Var push(Tensor<S> value, bool needs_grad,
           std::function<void(Tape&, const Tensor<S>&)> bw) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var unary_binary(Tensor<S> out, const std::vector<Var>& parents,
                   std::function<void(Tape&, const Tensor<S>&)> bw) {
    bool ng = false;
    if (record_)
      for (Var p : parents) ng = ng || node(p).needs_grad;
    return push(std::move(out), ng, ng ? std::move(bw) : nullptr);
  }

  std::vector<Node> nodes_;
  bool record_;
  mutable Tensor<S> zero_grad_scratch_;
};

}  // namespace adamatch
