#pragma once

#include <map>
#include <string>
#include <vector>

#include "adamatch/autodiff.hpp"
#include "adamatch/rng.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

/// Batch-norm statistics handling for a forward pass.
///  TrainUpdate — normalize by current-batch stats and advance running stats.
///  TrainFrozen — normalize by current-batch stats, running stats untouched.
///  Eval        — normalize by running stats, running stats untouched.
enum class BnMode { TrainUpdate, TrainFrozen, Eval };

template <typename S>
struct Model {
  struct Param {
    std::string name;
    Tensor<S> value;
    bool decay = true;  // participates in L2 weight decay
  };
  struct RunningStat {
    std::string name;
    std::vector<S> mean, var;
  };
  enum class LayerKind { Conv, Bn, Relu, Gap, Dense };
  struct Layer {
    LayerKind kind;
    int stride = 1;
    int w = -1, b = -1;                      // Conv / Dense
    int gamma = -1, beta = -1, stats = -1;   // Bn
  };

  std::vector<Param> params;
  std::vector<RunningStat> running;
  std::vector<Layer> layers;
  int input_side = 0, input_channels = 0, num_classes = 0;
  S bn_momentum = S(0.99);
  S bn_eps = S(1e-5);
  mutable long forward_calls = 0;  // test probe

  int add_param(const std::string& name, Tensor<S> value, bool decay) {
    for (const Param& p : params)
      if (p.name == name) throw ValueError("model: duplicate parameter name " + name);
    params.push_back(Param{name, std::move(value), decay});
    return static_cast<int>(params.size()) - 1;
  }

  const Param* find(const std::string& name) const {
    for (const Param& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  bool has_bn() const {
    for (const Layer& l : layers)
      if (l.kind == LayerKind::Bn) return true;
    return false;
  }

  long parameter_count() const {
    long n = 0;
    for (const Param& p : params) n += p.value.numel();
    return n;
  }
};

template <typename S>
using GradMap = std::map<std::string, Tensor<S>>;

/// Binds every model parameter as a tape leaf, in parameter order.
template <typename S>
std::vector<Var> bind_model(Tape<S>& tape, const Model<S>& model) {
  std::vector<Var> vars;
  vars.reserve(model.params.size());
  for (const auto& p : model.params) vars.push_back(tape.leaf(p.value));
  return vars;
}

/// Runs the model on already-bound inputs. TrainUpdate advances the model's
/// BN running statistics as a side effect.
template <typename S>
Var model_forward(Tape<S>& tape, Model<S>& model, const std::vector<Var>& pvars, Var x,
                  BnMode mode) {
  ++model.forward_calls;
  // inputs live in [0,1]; normalize to mean 0.5 / std 0.25
  Var v = tape.affine_const(x, S(4), S(-0.5));
  for (const auto& layer : model.layers) {
    switch (layer.kind) {
      case Model<S>::LayerKind::Conv:
        v = tape.conv2d(v, pvars[layer.w], pvars[layer.b], layer.stride);
        break;
      case Model<S>::LayerKind::Bn: {
        auto& rs = model.running[static_cast<size_t>(layer.stats)];
        if (mode == BnMode::Eval) {
          std::vector<S> inv_std(rs.var.size());
          for (size_t i = 0; i < rs.var.size(); ++i)
            inv_std[i] = S(1) / std::sqrt(rs.var[i] + model.bn_eps);
          v = tape.batchnorm(v, pvars[layer.gamma], pvars[layer.beta], false, rs.mean,
                             inv_std, model.bn_eps, nullptr);
        } else {
          BnBatchStats<S> st;
          v = tape.batchnorm(v, pvars[layer.gamma], pvars[layer.beta], true, {}, {},
                             model.bn_eps, &st);
          if (mode == BnMode::TrainUpdate) {
            const S rho = model.bn_momentum;
            for (size_t i = 0; i < rs.mean.size(); ++i) {
              rs.mean[i] = rho * rs.mean[i] + (S(1) - rho) * st.mean[i];
              rs.var[i] = rho * rs.var[i] + (S(1) - rho) * st.var[i];
            }
          }
        }
        break;
      }
      case Model<S>::LayerKind::Relu:
        v = tape.relu(v);
        break;
      case Model<S>::LayerKind::Gap:
        v = tape.global_avg_pool(v);
        break;
      case Model<S>::LayerKind::Dense:
        v = tape.dense(v, pvars[layer.w], pvars[layer.b]);
        break;
    }
  }
  return v;
}

template <typename S>
void validate_input(const Model<S>& model, const Tensor<S>& images) {
  require_rank(images, 4, "model_apply");
  if (images.dim(0) < 1) throw ShapeError("model_apply: empty batch");
  if (images.dim(3) != model.input_channels)
    throw ShapeError("model_apply: channel mismatch, got " + std::to_string(images.dim(3)) +
                     " expected " + std::to_string(model.input_channels));
  if (images.dim(1) != model.input_side || images.dim(2) != model.input_side)
    throw ShapeError("model_apply: spatial size " + shape_str(images.shape) +
                     " does not match configured side " + std::to_string(model.input_side));
}

/// Forward pass without gradient recording; returns logits (n, k).
template <typename S>
Tensor<S> model_apply(Model<S>& model, const Tensor<S>& images, BnMode mode) {
  validate_input(model, images);
  Tape<S> tape(false);
  std::vector<Var> pvars = bind_model(tape, model);
  Var x = tape.constant(images);
  Var out = model_forward(tape, model, pvars, x, mode);
  return tape.value(out);
}

/// Runs reverse-mode accumulation from `loss` and returns one gradient per
/// trainable parameter, keyed by name. Parameters the loss does not touch
/// get zero gradients.
template <typename S>
GradMap<S> backward(Tape<S>& tape, Var loss, const Model<S>& model,
                    const std::vector<Var>& pvars) {
  tape.backward(loss);
  GradMap<S> grads;
  for (size_t i = 0; i < model.params.size(); ++i)
    grads[model.params[i].name] = tape.grad(pvars[i]);
  return grads;
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* what, long step = -1) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite values in ") + what +
                           (step >= 0 ? " at step " + std::to_string(step) : std::string()),
                       step);
}

// ---------------------------------------------------------------------------
// DeskNet: conv(3x3, width, stride 2)-BN-ReLU, twice, then global average
// pool and a dense head. A small stand-in classifier for 28/32-pixel inputs.

template <typename S>
Model<S> build_desknet(int input_side, int channels, int k, int width, uint64_t seed,
                       bool with_batchnorm = true) {
  if (input_side != 28 && input_side != 32)
    throw ValueError("build_desknet: input_side must be 28 or 32");
  if (width < 4) throw ValueError("build_desknet: width must be >= 4");
  if (k < 2) throw ValueError("build_desknet: need at least 2 classes");

  Model<S> m;
  m.input_side = input_side;
  m.input_channels = channels;
  m.num_classes = k;
  Rng rng(seed);

  auto he_normal = [&](std::vector<int> shape, int fan_in) {
    Tensor<S> t(std::move(shape));
    const double std = std::sqrt(2.0 / fan_in);
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * std);
    return t;
  };

  auto add_conv = [&](const std::string& name, int cin, int cout, int stride) {
    typename Model<S>::Layer l;
    l.kind = Model<S>::LayerKind::Conv;
    l.stride = stride;
    l.w = m.add_param(name + ".w", he_normal({3, 3, cin, cout}, 3 * 3 * cin), true);
    l.b = m.add_param(name + ".b", Tensor<S>({cout}), true);
    m.layers.push_back(l);
  };
  auto add_bn = [&](const std::string& name, int c) {
    if (!with_batchnorm) return;
    typename Model<S>::Layer l;
    l.kind = Model<S>::LayerKind::Bn;
    l.gamma = m.add_param(name + ".gamma", Tensor<S>({c}, S(1)), false);
    l.beta = m.add_param(name + ".beta", Tensor<S>({c}), false);
    typename Model<S>::RunningStat rs;
    rs.name = name;
    rs.mean.assign(static_cast<size_t>(c), S(0));
    rs.var.assign(static_cast<size_t>(c), S(1));
    l.stats = static_cast<int>(m.running.size());
    m.running.push_back(std::move(rs));
    m.layers.push_back(l);
  };
  auto add_relu = [&] {
    m.layers.push_back({Model<S>::LayerKind::Relu});
  };

  add_conv("conv1", channels, width, 2);
  add_bn("bn1", width);
  add_relu();
  add_conv("conv2", width, width, 2);
  add_bn("bn2", width);
  add_relu();
  m.layers.push_back({Model<S>::LayerKind::Gap});
  {
    typename Model<S>::Layer l;
    l.kind = Model<S>::LayerKind::Dense;
    l.w = m.add_param("dense.w", he_normal({width, k}, width), true);
    l.b = m.add_param("dense.b", Tensor<S>({k}), true);
    m.layers.push_back(l);
  }
  return m;
}

/// Deep copy (Model is a value type; this exists for symmetry in call sites
/// that want to be explicit about snapshots).
template <typename S>
Model<S> clone_model(const Model<S>& m) {
  return m;
}

/// Precision conversion, e.g. an f64 twin of an f32 model for the
/// verification builds. Structure is preserved; values are cast.
template <typename T, typename S>
Model<T> cast_model(const Model<S>& m) {
  Model<T> out;
  out.input_side = m.input_side;
  out.input_channels = m.input_channels;
  out.num_classes = m.num_classes;
  out.bn_momentum = static_cast<T>(m.bn_momentum);
  out.bn_eps = static_cast<T>(m.bn_eps);
  for (const auto& p : m.params) {
    Tensor<T> v(p.value.shape);
    for (long i = 0; i < v.numel(); ++i) v[i] = static_cast<T>(p.value[i]);
    out.params.push_back({p.name, std::move(v), p.decay});
  }
  for (const auto& rs : m.running) {
    typename Model<T>::RunningStat r;
    r.name = rs.name;
    r.mean.reserve(rs.mean.size());
    r.var.reserve(rs.var.size());
    for (S v : rs.mean) r.mean.push_back(static_cast<T>(v));
    for (S v : rs.var) r.var.push_back(static_cast<T>(v));
    out.running.push_back(std::move(r));
  }
  for (const auto& l : m.layers) {
    typename Model<T>::Layer nl;
    nl.kind = static_cast<typename Model<T>::LayerKind>(static_cast<int>(l.kind));
    nl.stride = l.stride;
    nl.w = l.w;
    nl.b = l.b;
    nl.gamma = l.gamma;
    nl.beta = l.beta;
    nl.stats = l.stats;
    out.layers.push_back(nl);
  }
  return out;
}

}  // namespace adamatch
