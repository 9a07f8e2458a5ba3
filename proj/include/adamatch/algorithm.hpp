#pragma once

#include <deque>
#include <optional>

#include "adamatch/augment.hpp"
#include "adamatch/autodiff.hpp"
#include "adamatch/data.hpp"
#include "adamatch/nn.hpp"
#include "adamatch/optim.hpp"

namespace adamatch {

// Reduction order contract: every reduction over class probabilities in this
// module (softmax, cross-entropy rows, batch means, buffer means, row
// renormalization, top-1 means) runs row-major, left to right. The scalar
// oracle in the test suite reimplements the same order; results must agree
// bit-for-bit.

template <typename S = float>
struct AdaMatchConfig {
  S tau = S(0.9);
  int uratio = 3;
  std::optional<std::vector<S>> target_prior;  // known target label distribution
  int dist_buffer_len = 128;

  void validate() const {
    if (!(tau > S(0)) || tau > S(1)) throw ValueError("adamatch: tau must be in (0,1]");
    if (uratio < 1) throw ValueError("adamatch: uratio must be >= 1");
    if (dist_buffer_len < 1) throw ValueError("adamatch: dist_buffer_len must be >= 1");
    if (target_prior) {
      S sum = S(0);
      for (S v : *target_prior) sum += v;
      if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6)
        throw ValueError("adamatch: target_prior must sum to 1");
    }
  }
};

/// Ring buffers of per-batch mean weak predictions; the operands of the
/// distribution-alignment ratio.
template <typename S = float>
struct PseudoLabelState {
  int cap = 128;
  std::deque<std::vector<S>> src_buffer, tgt_buffer;

  explicit PseudoLabelState(int buffer_len = 128) : cap(buffer_len) {}

  void push_src(std::vector<S> d) { push(src_buffer, std::move(d)); }
  void push_tgt(std::vector<S> d) { push(tgt_buffer, std::move(d)); }

 private:
  void push(std::deque<std::vector<S>>& buf, std::vector<S> d) {
    buf.push_back(std::move(d));
    while (static_cast<int>(buf.size()) > cap) buf.pop_front();
  }
};

template <typename S = float>
struct StepReport {
  S loss_source = S(0);
  S loss_target = S(0);
  S total = S(0);
  S mu = S(0);
  S c_tau = S(0);
  double mask_rate = 0.0;
  Tensor<S> pseudo_labels;    // (n_TU, k) one-hot
  std::vector<uint8_t> mask;  // n_TU
};

// ---------------------------------------------------------------------------
// pipeline primitives

/// mu(t) = 1/2 - cos(min(pi, 2*pi*t/T))/2: raises smoothly from 0 to 1 over
/// the first half of training and stays at 1 afterwards.
inline double warmup_mu(long t, long total) {
  if (total <= 0) throw ValueError("warmup_mu: total steps must be positive");
  if (t < 0 || t > total) throw ValueError("warmup_mu: step out of range");
  const double pi = 3.141592653589793;
  return 0.5 - std::cos(std::min(pi, 2.0 * pi * static_cast<double>(t) /
                                         static_cast<double>(total))) /
                   2.0;
}

template <typename S>
Tensor<S> draw_lambda(int rows, int k, Rng& rng) {
  Tensor<S> lam({rows, k});
  for (long i = 0; i < lam.numel(); ++i) lam[i] = rng.uniform<S>();
  return lam;
}

/// out[i,j] = lam[i,j]*z'[i,j] + (1-lam[i,j])*z''[i,j].
template <typename S>
Tensor<S> interpolate_logits_with(const Tensor<S>& z_prime, const Tensor<S>& z_double,
                                  const Tensor<S>& lambda) {
  require_same_shape(z_prime, z_double, "interpolate_logits");
  require_same_shape(z_prime, lambda, "interpolate_logits.lambda");
  Tensor<S> out(z_prime.shape);
  for (long i = 0; i < out.numel(); ++i)
    out[i] = lambda[i] * z_prime[i] + (S(1) - lambda[i]) * z_double[i];
  return out;
}

/// Each individual logit gets its own fresh U(0,1) factor.
template <typename S>
Tensor<S> interpolate_logits(const Tensor<S>& z_prime, const Tensor<S>& z_double, Rng& rng) {
  require_same_shape(z_prime, z_double, "interpolate_logits");
  require_rank(z_prime, 2, "interpolate_logits");
  return interpolate_logits_with(z_prime, z_double,
                                 draw_lambda<S>(z_prime.dim(0), z_prime.dim(1), rng));
}

/// Mean prediction over the batch, per class.
template <typename S>
std::vector<S> batch_mean_rows(const Tensor<S>& probs) {
  const int n = probs.dim(0), k = probs.dim(1);
  std::vector<S> m(static_cast<size_t>(k), S(0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) m[static_cast<size_t>(j)] += probs.at(i, j);
  for (int j = 0; j < k; ++j) m[static_cast<size_t>(j)] /= static_cast<S>(n);
  return m;
}

/// Arithmetic mean over buffered entries (each renormalized to sum 1),
/// oldest first. Errors if either buffer is empty: callers warm up by pushing
/// the current batch first.
template <typename S>
std::pair<std::vector<S>, std::vector<S>> estimate_expectations(
    const PseudoLabelState<S>& state) {
  auto mean_of = [](const std::deque<std::vector<S>>& buf) {
    if (buf.empty()) throw ValueError("estimate_expectations: empty buffer");
    const size_t k = buf.front().size();
    std::vector<S> acc(k, S(0));
    for (const auto& entry : buf) {
      S sum = S(0);
      for (S v : entry) sum += v;
      for (size_t j = 0; j < k; ++j) acc[j] += entry[j] / sum;
    }
    for (size_t j = 0; j < k; ++j) acc[j] /= static_cast<S>(buf.size());
    return acc;
  };
  return {mean_of(state.src_buffer), mean_of(state.tgt_buffer)};
}

constexpr double kAlignFloor = 1e-6;

/// Eq. 6: rows scaled by ref/tgt_mean then renormalized; ref is the known
/// target prior when provided, the source expectation otherwise. The divisor
/// is floored at 1e-6.
template <typename S>
Tensor<S> distribution_align(const Tensor<S>& y_hat_tu_w, const std::vector<S>& src_mean,
                             const std::vector<S>& tgt_mean,
                             const std::optional<std::vector<S>>& target_prior = {}) {
  require_rank(y_hat_tu_w, 2, "distribution_align");
  const int n = y_hat_tu_w.dim(0), k = y_hat_tu_w.dim(1);
  const std::vector<S>& ref = target_prior ? *target_prior : src_mean;
  if (static_cast<int>(ref.size()) != k || static_cast<int>(tgt_mean.size()) != k)
    throw ShapeError("distribution_align: class count mismatch");
  std::vector<S> ratio(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    S d = tgt_mean[static_cast<size_t>(j)];
    if (!(d > static_cast<S>(kAlignFloor))) d = static_cast<S>(kAlignFloor);
    if (!(d > S(0)))
      throw ValueError("distribution_align: degenerate divisor after flooring");
    ratio[static_cast<size_t>(j)] = ref[static_cast<size_t>(j)] / d;
  }
  Tensor<S> out({n, k});
  for (int i = 0; i < n; ++i) {
    S sum = S(0);
    for (int j = 0; j < k; ++j) {
      out.at(i, j) = y_hat_tu_w.at(i, j) * ratio[static_cast<size_t>(j)];
      sum += out.at(i, j);
    }
    for (int j = 0; j < k; ++j) out.at(i, j) /= sum;
  }
  return out;
}

/// Eq. 7: c_tau = tau * mean top-1 confidence on the weakly augmented source.
template <typename S>
S relative_threshold(const Tensor<S>& y_hat_sl_w, S tau) {
  require_rank(y_hat_sl_w, 2, "relative_threshold");
  const int n = y_hat_sl_w.dim(0), k = y_hat_sl_w.dim(1);
  if (n < 1) throw ValueError("relative_threshold: empty batch");
  if (!(tau > S(0)) || tau > S(1)) throw ValueError("relative_threshold: bad tau");
  S sum = S(0);
  for (int i = 0; i < n; ++i) sum += max_row(&y_hat_sl_w.at(i, 0), k);
  return tau * (sum / static_cast<S>(n));
}

/// Eq. 8: mask[i] = 1 iff the row maximum is >= c_tau (inclusive boundary).
template <typename S>
std::vector<uint8_t> confidence_mask(const Tensor<S>& y_tilde_tu_w, S c_tau) {
  require_rank(y_tilde_tu_w, 2, "confidence_mask");
  const int n = y_tilde_tu_w.dim(0), k = y_tilde_tu_w.dim(1);
  std::vector<uint8_t> mask(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    mask[static_cast<size_t>(i)] = max_row(&y_tilde_tu_w.at(i, 0), k) >= c_tau ? 1 : 0;
  return mask;
}

/// One-hot argmax, ties broken by lowest class index.
template <typename S>
Tensor<S> harden_rows(const Tensor<S>& probs) {
  const int n = probs.dim(0), k = probs.dim(1);
  Tensor<S> out({n, k});
  for (int i = 0; i < n; ++i) out.at(i, argmax_row(&probs.at(i, 0), k)) = S(1);
  return out;
}

// ---------------------------------------------------------------------------
// the Eqs. 4-11 pipeline on recorded logits

/// Which AdaMatch components are active. FixMatch+ is no interpolation and an
/// absolute threshold with distribution alignment retained.
struct StepFlags {
  bool logit_interp = true;
  bool dist_align = true;
  bool relative_threshold = true;
};

enum class AblationVariant { Full, NoLogitInterp, NoDistAlign, NoRelThreshold };

inline StepFlags flags_for(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return {true, true, true};
    case AblationVariant::NoLogitInterp: return {false, true, true};
    case AblationVariant::NoDistAlign: return {true, false, true};
    case AblationVariant::NoRelThreshold: return {true, true, false};
  }
  throw ValueError("ablate: unknown variant");
}

inline const char* variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoLogitInterp: return "no_logit_interp";
    case AblationVariant::NoDistAlign: return "no_dist_align";
    case AblationVariant::NoRelThreshold: return "no_rel_threshold";
  }
  return "?";
}

template <typename S>
struct PipelineResult {
  Tensor<S> y_hat_sl_w, y_hat_tu_w, y_tilde;  // Eq. 5 and Eq. 6 outputs
  Tensor<S> pseudo;                           // hardened one-hot labels
  std::vector<uint8_t> mask;
  S c_tau = S(0);
  S loss_source = S(0), loss_target = S(0), total = S(0);
};

/// Straight-line evaluation of Eqs. 4-11 given the interpolated source logits
/// z_sl (2*n_SL rows: weak then strong), the target logits z_tu (2*n_TU rows)
/// and one-hot source labels. Pushes this batch's means into `state` before
/// estimating expectations. This is the implementation the scalar oracle is
/// compared against, and the single source of the step-report numbers.
template <typename S>
PipelineResult<S> run_label_pipeline(const Tensor<S>& z_sl, const Tensor<S>& z_tu,
                                     const Tensor<S>& y_sl, PseudoLabelState<S>& state,
                                     const AdaMatchConfig<S>& cfg, double mu,
                                     const StepFlags& flags) {
  require_rank(z_sl, 2, "pipeline");
  require_rank(z_tu, 2, "pipeline");
  const int n_sl = y_sl.dim(0), k = y_sl.dim(1);
  const int n_tu = z_tu.dim(0) / 2;
  if (z_sl.dim(0) != 2 * n_sl || z_sl.dim(1) != k || z_tu.dim(0) % 2 != 0)
    throw ShapeError("pipeline: inconsistent row counts");

  PipelineResult<S> r;
  // Eq. 4: split weak/strong; Eq. 5: softmax the weak branches
  Tensor<S> z_sl_w({n_sl, k}), z_sl_s({n_sl, k}), z_tu_w({n_tu, k}), z_tu_s({n_tu, k});
  std::copy_n(z_sl.ptr(), static_cast<long>(n_sl) * k, z_sl_w.ptr());
  std::copy_n(z_sl.ptr() + static_cast<long>(n_sl) * k, static_cast<long>(n_sl) * k,
              z_sl_s.ptr());
  std::copy_n(z_tu.ptr(), static_cast<long>(n_tu) * k, z_tu_w.ptr());
  std::copy_n(z_tu.ptr() + static_cast<long>(n_tu) * k, static_cast<long>(n_tu) * k,
              z_tu_s.ptr());

  r.y_hat_sl_w = softmax(z_sl_w);
  r.y_hat_tu_w = softmax(z_tu_w);

  // Eq. 6
  if (flags.dist_align) {
    state.push_src(batch_mean_rows(r.y_hat_sl_w));
    state.push_tgt(batch_mean_rows(r.y_hat_tu_w));
    auto [src_mean, tgt_mean] = estimate_expectations(state);
    r.y_tilde = distribution_align(r.y_hat_tu_w, src_mean, tgt_mean, cfg.target_prior);
  } else {
    r.y_tilde = r.y_hat_tu_w;
  }

  r.pseudo = harden_rows(r.y_tilde);

  // Eqs. 7-8
  r.c_tau = flags.relative_threshold ? relative_threshold(r.y_hat_sl_w, cfg.tau) : cfg.tau;
  r.mask = confidence_mask(r.y_tilde, r.c_tau);

  // Eqs. 9-11 (the weak-branch probabilities are the Eq. 5 softmax above)
  Tensor<S> q_s = softmax(z_sl_s);
  S src_w = S(0), src_s = S(0);
  for (int i = 0; i < n_sl; ++i) {
    src_w += cross_entropy_row(&y_sl.at(i, 0), &r.y_hat_sl_w.at(i, 0), k);
    src_s += cross_entropy_row(&y_sl.at(i, 0), &q_s.at(i, 0), k);
  }
  r.loss_source = src_w / static_cast<S>(n_sl) + src_s / static_cast<S>(n_sl);

  Tensor<S> q_tu_s = softmax(z_tu_s);
  S tgt = S(0);
  for (int i = 0; i < n_tu; ++i)
    if (r.mask[static_cast<size_t>(i)])
      tgt += cross_entropy_row(&r.pseudo.at(i, 0), &q_tu_s.at(i, 0), k);
  r.loss_target = tgt / static_cast<S>(n_tu);

  r.total = r.loss_source + static_cast<S>(mu) * r.loss_target;
  return r;
}

// ---------------------------------------------------------------------------
// dual forward passes

template <typename S>
struct DualLogits {
  Tensor<S> z_sl_mixed;  // source rows of the combined pass (weak then strong)
  Tensor<S> z_tu;        // target rows (weak then strong)
  Tensor<S> z_sl_solo;   // source-only pass
};

template <typename S>
struct DualLogitsVars {
  Var z_sl_mixed, z_tu, z_sl_solo;
  int n_sl = 0, n_tu = 0;
};

namespace detail {

template <typename S>
Tensor<S> cast_tensor(const Tensor<float>& t) {
  if constexpr (std::is_same_v<S, float>) {
    return t;
  } else {
    Tensor<S> out(t.shape);
    for (long i = 0; i < t.numel(); ++i) out[i] = static_cast<S>(t[i]);
    return out;
  }
}

}  // namespace detail

/// First pass: the concatenated [SL_w, SL_s, TU_w, TU_s] batch with BN
/// statistics shared across domains and running stats updated. Second pass:
/// source rows only, batch statistics, running stats untouched.
/// `with_solo=false` skips the second pass (FixMatch+ and the
/// no-logit-interpolation ablation).
template <typename S>
DualLogitsVars<S> forward_dual_traced(Tape<S>& tape, Model<S>& model,
                                      const std::vector<Var>& pvars,
                                      const AugmentedPair& pair_sl,
                                      const AugmentedPair& pair_tu, bool with_solo = true) {
  const int n_sl = pair_sl.weak.dim(0);
  const int n_tu = pair_tu.weak.dim(0);
  Var slw = tape.constant(detail::cast_tensor<S>(pair_sl.weak));
  Var sls = tape.constant(detail::cast_tensor<S>(pair_sl.strong));
  Var tuw = tape.constant(detail::cast_tensor<S>(pair_tu.weak));
  Var tus = tape.constant(detail::cast_tensor<S>(pair_tu.strong));

  Var combined = tape.concat_rows({slw, sls, tuw, tus});
  Var z_comb = model_forward(tape, model, pvars, combined, BnMode::TrainUpdate);

  DualLogitsVars<S> out;
  out.n_sl = n_sl;
  out.n_tu = n_tu;
  out.z_sl_mixed = tape.slice_rows(z_comb, 0, 2 * n_sl);
  out.z_tu = tape.slice_rows(z_comb, 2 * n_sl, 2 * n_sl + 2 * n_tu);
  if (with_solo) {
    Var solo = tape.concat_rows({slw, sls});
    out.z_sl_solo = model_forward(tape, model, pvars, solo, BnMode::TrainFrozen);
  }
  return out;
}

/// Plain-tensor variant of the two forward passes.
template <typename S>
DualLogits<S> forward_dual(Model<S>& model, const AugmentedPair& pair_sl,
                           const AugmentedPair& pair_tu) {
  Tape<S> tape(false);
  std::vector<Var> pvars = bind_model(tape, model);
  DualLogitsVars<S> v = forward_dual_traced(tape, model, pvars, pair_sl, pair_tu, true);
  return DualLogits<S>{tape.value(v.z_sl_mixed), tape.value(v.z_tu), tape.value(v.z_sl_solo)};
}

// ---------------------------------------------------------------------------
// training steps

namespace detail {

template <typename S>
StepReport<S> shared_step(Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                          const AdaMatchConfig<S>& cfg, PseudoLabelState<S>& state, long t,
                          long total_images, Rng& rng, const AugmentPolicy& policy,
                          const StepFlags& flags) {
  cfg.validate();
  if (batch.n_tu() != cfg.uratio * batch.n_sl())
    throw ShapeError("adamatch_step: n_TU != uratio * n_SL");
  const int n_sl = batch.n_sl(), n_tu = batch.n_tu();
  const int k = model.num_classes;
  if (batch.y_sl.dim(1) != k) throw ShapeError("adamatch_step: label width mismatch");

  Rng sl_rng = rng.fork();
  Rng tu_rng = rng.fork();
  Rng lambda_rng = rng.fork();
  AugmentedPair pair_sl = augment_pair(batch.x_sl, policy, sl_rng);
  AugmentedPair pair_tu = augment_pair(batch.x_tu, policy, tu_rng);

  Tape<S> tape;
  std::vector<Var> pvars = bind_model(tape, model);
  DualLogitsVars<S> dual =
      forward_dual_traced(tape, model, pvars, pair_sl, pair_tu, flags.logit_interp);

  // Eq. 3 on the source rows (each logit gets its own factor)
  Var z_sl = flags.logit_interp
                 ? tape.lerp(dual.z_sl_mixed, dual.z_sl_solo,
                             draw_lambda<S>(2 * n_sl, k, lambda_rng))
                 : dual.z_sl_mixed;

  const double mu = warmup_mu(t, total_images);
  Tensor<S> y_sl = detail::cast_tensor<S>(batch.y_sl);
  PipelineResult<S> pipe =
      run_label_pipeline(tape.value(z_sl), tape.value(dual.z_tu), y_sl, state, cfg, mu, flags);

  // differentiable losses; pseudo-labels and mask enter as constants, which
  // realizes the Eq. 10 stop-gradient
  Var z_sl_w = tape.slice_rows(z_sl, 0, n_sl);
  Var z_sl_s = tape.slice_rows(z_sl, n_sl, 2 * n_sl);
  Var z_tu_s = tape.slice_rows(dual.z_tu, n_tu, 2 * n_tu);
  Var l_src = tape.add(tape.cross_entropy_mean(y_sl, z_sl_w),
                       tape.cross_entropy_mean(y_sl, z_sl_s));
  Var l_tgt = tape.cross_entropy_mean(pipe.pseudo, z_tu_s, pipe.mask, n_tu);
  Var total = tape.add_scaled(l_src, l_tgt, static_cast<S>(mu));

  if (tape.value(l_src)[0] != pipe.loss_source || tape.value(l_tgt)[0] != pipe.loss_target ||
      tape.value(total)[0] != pipe.total)
    throw NumericError("adamatch_step: loss paths diverged", t);
  if (!std::isfinite(static_cast<double>(pipe.total)))
    throw NumericError("adamatch_step: non-finite loss", t);

  GradMap<S> grads = backward(tape, total, model, pvars);
  for (const auto& [name, g] : grads) check_finite(g, name.c_str(), t);
  sgd_step(model, grads, opt, lr_at(opt, t, total_images));

  StepReport<S> report;
  report.loss_source = pipe.loss_source;
  report.loss_target = pipe.loss_target;
  report.total = pipe.total;
  report.mu = static_cast<S>(mu);
  report.c_tau = pipe.c_tau;
  report.pseudo_labels = std::move(pipe.pseudo);
  report.mask = std::move(pipe.mask);
  long admitted = 0;
  for (uint8_t m : report.mask) admitted += m;
  report.mask_rate = static_cast<double>(admitted) / n_tu;
  return report;
}

}  // namespace detail

/// One AdaMatch update: Figure 1 end to end, including backward and the SGD
/// step at the cosine-decayed learning rate for image count t of T.
template <typename S>
StepReport<S> adamatch_step(Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                            const AdaMatchConfig<S>& cfg, PseudoLabelState<S>& state, long t,
                            long total_images, Rng& rng, const AugmentPolicy& policy) {
  return detail::shared_step(model, opt, batch, cfg, state, t, total_images, rng, policy,
                             StepFlags{true, true, true});
}

/// FixMatch with distribution alignment: no second forward pass, no logit
/// interpolation, absolute confidence threshold.
template <typename S>
StepReport<S> fixmatch_plus_step(Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                                 const AdaMatchConfig<S>& cfg, PseudoLabelState<S>& state,
                                 long t, long total_images, Rng& rng,
                                 const AugmentPolicy& policy) {
  return detail::shared_step(model, opt, batch, cfg, state, t, total_images, rng, policy,
                             StepFlags{false, true, false});
}

/// Supervised source loss on the combined batch: the target data participates
/// only through the shared batch-norm statistics.
template <typename S>
StepReport<S> baseline_bn_step(Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                               long t, long total_images, Rng& rng,
                               const AugmentPolicy& policy) {
  const int n_sl = batch.n_sl(), n_tu = batch.n_tu();
  const int k = model.num_classes;
  Rng sl_rng = rng.fork();
  Rng tu_rng = rng.fork();
  AugmentedPair pair_sl = augment_pair(batch.x_sl, policy, sl_rng);
  AugmentedPair pair_tu = augment_pair(batch.x_tu, policy, tu_rng);

  Tape<S> tape;
  std::vector<Var> pvars = bind_model(tape, model);
  DualLogitsVars<S> dual =
      forward_dual_traced(tape, model, pvars, pair_sl, pair_tu, /*with_solo=*/false);

  Tensor<S> y_sl = detail::cast_tensor<S>(batch.y_sl);
  Var z_sl_w = tape.slice_rows(dual.z_sl_mixed, 0, n_sl);
  Var z_sl_s = tape.slice_rows(dual.z_sl_mixed, n_sl, 2 * n_sl);
  Var loss = tape.add(tape.cross_entropy_mean(y_sl, z_sl_w),
                      tape.cross_entropy_mean(y_sl, z_sl_s));
  if (!std::isfinite(static_cast<double>(tape.value(loss)[0])))
    throw NumericError("baseline_bn_step: non-finite loss", t);

  GradMap<S> grads = backward(tape, loss, model, pvars);
  for (const auto& [name, g] : grads) check_finite(g, name.c_str(), t);
  sgd_step(model, grads, opt, lr_at(opt, t, total_images));

  StepReport<S> report;
  report.loss_source = tape.value(loss)[0];
  report.total = report.loss_source;
  report.pseudo_labels = Tensor<S>({n_tu, k});
  report.mask.assign(static_cast<size_t>(n_tu), 0);
  return report;
}

/// Plain supervised training on the labeled batch only (the oracle row of the
/// result tables).
template <typename S>
StepReport<S> supervised_step(Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                              long t, long total_images, Rng& rng,
                              const AugmentPolicy& policy) {
  const int n_sl = batch.n_sl();
  Rng sl_rng = rng.fork();
  AugmentedPair pair_sl = augment_pair(batch.x_sl, policy, sl_rng);

  Tape<S> tape;
  std::vector<Var> pvars = bind_model(tape, model);
  Var slw = tape.constant(detail::cast_tensor<S>(pair_sl.weak));
  Var sls = tape.constant(detail::cast_tensor<S>(pair_sl.strong));
  Var z = model_forward(tape, model, pvars, tape.concat_rows({slw, sls}),
                        BnMode::TrainUpdate);
  Tensor<S> y_sl = detail::cast_tensor<S>(batch.y_sl);
  Var loss = tape.add(tape.cross_entropy_mean(y_sl, tape.slice_rows(z, 0, n_sl)),
                      tape.cross_entropy_mean(y_sl, tape.slice_rows(z, n_sl, 2 * n_sl)));
  if (!std::isfinite(static_cast<double>(tape.value(loss)[0])))
    throw NumericError("supervised_step: non-finite loss", t);
  GradMap<S> grads = backward(tape, loss, model, pvars);
  sgd_step(model, grads, opt, lr_at(opt, t, total_images));

  StepReport<S> report;
  report.loss_source = tape.value(loss)[0];
  report.total = report.loss_source;
  report.pseudo_labels = Tensor<S>({batch.n_tu(), model.num_classes});
  report.mask.assign(static_cast<size_t>(batch.n_tu()), 0);
  return report;
}

/// Step function for an exclude-one-out ablation variant; Full is exactly
/// adamatch_step.
template <typename S>
auto ablate(AblationVariant variant) {
  StepFlags flags = flags_for(variant);
  return [flags](Model<S>& model, Optimizer<S>& opt, const BatchPair& batch,
                 const AdaMatchConfig<S>& cfg, PseudoLabelState<S>& state, long t,
                 long total_images, Rng& rng, const AugmentPolicy& policy) {
    return detail::shared_step(model, opt, batch, cfg, state, t, total_images, rng, policy,
                               flags);
  };
}

}  // namespace adamatch
