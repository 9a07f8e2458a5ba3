#pragma once

#include <cmath>
#include <map>
#include <string>

#include "adamatch/nn.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

/// SGD with momentum, coupled L2 weight decay, and half-cosine learning-rate
/// decay from lr0 down to final_lr_fraction * lr0.
template <typename S>
struct Optimizer {
  S lr0 = S(0.03);
  S momentum = S(0.9);
  S weight_decay = S(0.0005);
  S final_lr_fraction = S(0.25);
  std::map<std::string, Tensor<S>> velocity;
};

/// lr(t) = lr0 * ((1+f)/2 + (1-f)/2 * cos(pi t / T)); lr(0) = lr0,
/// lr(T) = f * lr0, monotone nonincreasing in between.
template <typename S>
S lr_at(const Optimizer<S>& opt, long t, long total) {
  if (total <= 0) throw ValueError("lr_at: total steps must be positive");
  if (t < 0 || t > total) throw ValueError("lr_at: step out of range");
  const double f = static_cast<double>(opt.final_lr_fraction);
  const double phase = std::cos(3.141592653589793 * static_cast<double>(t) /
                                static_cast<double>(total));
  return static_cast<S>(static_cast<double>(opt.lr0) *
                        ((1.0 + f) / 2.0 + (1.0 - f) / 2.0 * phase));
}

/// v <- momentum*v + (grad + wd*param); param <- param - lr*v.
/// BN scale/offset carry decay=false and are excluded from weight decay.
template <typename S>
void sgd_step(Model<S>& model, const GradMap<S>& grads, Optimizer<S>& opt, S lr) {
  for (auto& p : model.params) {
    auto it = grads.find(p.name);
    if (it == grads.end())
      throw ValueError("sgd_step: missing gradient for parameter " + p.name);
    const Tensor<S>& g = it->second;
    require_same_shape(g, p.value, "sgd_step");
    Tensor<S>& v = opt.velocity[p.name];
    if (v.numel() == 0) v = Tensor<S>(p.value.shape);
    require_same_shape(v, p.value, "sgd_step.velocity");
    const S wd = p.decay ? opt.weight_decay : S(0);
    for (long i = 0; i < p.value.numel(); ++i) {
      v[i] = opt.momentum * v[i] + (g[i] + wd * p.value[i]);
      p.value[i] -= lr * v[i];
    }
  }
}

}  // namespace adamatch
