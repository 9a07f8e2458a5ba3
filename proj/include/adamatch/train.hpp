#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <thread>

#include "adamatch/algorithm.hpp"
#include "adamatch/checkpoint.hpp"
#include "adamatch/data.hpp"
#include "adamatch/results.hpp"

namespace adamatch {

// ---------------------------------------------------------------------------
// evaluation

/// Top-1 accuracy in Eval mode, no augmentation. Never mutates the model.
template <typename S>
double evaluate(Model<S>& model, const Dataset& dataset) {
  if (dataset.n() == 0) throw DataError(DataError::Kind::Other, "evaluate: empty dataset");
  const int batch = 512;
  long correct = 0;
  for (int at = 0; at < dataset.n(); at += batch) {
    const int n = std::min(batch, dataset.n() - at);
    Tensor<float> chunk({n, dataset.h(), dataset.w(), dataset.c()});
    const long row = static_cast<long>(dataset.h()) * dataset.w() * dataset.c();
    std::copy_n(dataset.images.ptr() + static_cast<long>(at) * row, n * row, chunk.ptr());
    Tensor<S> logits = model_apply(model, detail::cast_tensor<S>(chunk), BnMode::Eval);
    for (int i = 0; i < n; ++i)
      if (argmax_row(&logits.at(i, 0), logits.dim(1)) ==
          dataset.labels[static_cast<size_t>(at + i)])
        ++correct;
  }
  return static_cast<double>(correct) / dataset.n();
}

/// Median of the last k entries; even k averages the two middle order
/// statistics.
inline double median_last_k(const std::vector<double>& values, int k) {
  if (static_cast<int>(values.size()) < k || k < 1)
    throw ValueError("median_last_k: need at least k entries");
  std::vector<double> tail(values.end() - k, values.end());
  std::sort(tail.begin(), tail.end());
  if (k % 2 == 1) return tail[static_cast<size_t>(k / 2)];
  return (tail[static_cast<size_t>(k / 2 - 1)] + tail[static_cast<size_t>(k / 2)]) / 2.0;
}

// ---------------------------------------------------------------------------
// training configuration

struct AlgoSpec {
  enum class Kind { AdaMatch, AdaMatchAblation, FixMatchPlus, BaselineBN, SupervisedOracle };
  Kind kind = Kind::AdaMatch;
  AblationVariant variant = AblationVariant::Full;

  std::string name() const {
    switch (kind) {
      case Kind::AdaMatch: return "adamatch";
      case Kind::AdaMatchAblation:
        return std::string("adamatch/") + variant_name(variant);
      case Kind::FixMatchPlus: return "fixmatch_plus";
      case Kind::BaselineBN: return "baseline_bn";
      case Kind::SupervisedOracle: return "supervised_oracle";
    }
    return "?";
  }

  static AlgoSpec parse(const std::string& s) {
    AlgoSpec a;
    if (s == "adamatch") {
      a.kind = Kind::AdaMatch;
    } else if (s == "fixmatch_plus") {
      a.kind = Kind::FixMatchPlus;
    } else if (s == "baseline_bn") {
      a.kind = Kind::BaselineBN;
    } else if (s == "supervised_oracle") {
      a.kind = Kind::SupervisedOracle;
    } else if (s.rfind("adamatch/", 0) == 0) {
      a.kind = Kind::AdaMatchAblation;
      const std::string v = s.substr(9);
      if (v == "full") a.variant = AblationVariant::Full;
      else if (v == "no_logit_interp") a.variant = AblationVariant::NoLogitInterp;
      else if (v == "no_dist_align") a.variant = AblationVariant::NoDistAlign;
      else if (v == "no_rel_threshold") a.variant = AblationVariant::NoRelThreshold;
      else throw ValueError("unknown ablation variant: " + v);
    } else {
      throw ValueError("unknown algorithm: " + s);
    }
    return a;
  }
};

struct TrainConfig {
  AlgoSpec algo;
  long total_images = 300000;
  int n_sl = 64;
  long checkpoint_every = 8192;
  int eval_last_k = 10;
  uint64_t seed = 1;
  int model_width = 32;
  int input_side = 32;
  Optimizer<float> opt;
  AdaMatchConfig<float> adamatch;
  AugmentPolicy policy;
  std::string out_dir;       // when set, checkpoints land in <out_dir>/checkpoints
  bool resume = false;
  long halt_after_images = 0;  // >0: stop early (resumable), schedule unchanged
  int eval_source_cap = 2048;  // source-accuracy telemetry subsample
  uint64_t config_fingerprint = 0;

  void validate() const {
    if (total_images < 1 || n_sl < 1 || checkpoint_every < 1 || eval_last_k < 1)
      throw ValueError("train: sizes must be positive");
    if (checkpoint_every * eval_last_k > total_images)
      throw ValueError("train: checkpoint_every * eval_last_k must not exceed T");
    adamatch.validate();
    policy.validate();
  }
};

struct CheckpointEntry {
  long images = 0;
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
};

struct RunRecord {
  std::vector<CheckpointEntry> checkpoints;  // ring: last eval_last_k + 2
  double final_accuracy = 0.0;
  double wall_seconds = 0.0;
  uint64_t config_fingerprint = 0;
  long images_trained = 0;
};

// ---------------------------------------------------------------------------
// model/optimizer/state (de)serialization

template <typename S>
NamedTensors snapshot_training_state(const Model<S>& model, const Optimizer<S>& opt,
                                     const PseudoLabelState<S>& state,
                                     const std::vector<CheckpointEntry>& ring,
                                     long images_seen) {
  NamedTensors out;
  auto put1 = [&](const std::string& name, float v) {
    Tensor<float> t({1});
    t[0] = v;
    out.emplace_back(name, std::move(t));
  };
  for (const auto& p : model.params) {
    Tensor<float> t(p.value.shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(p.value[i]);
    out.emplace_back("param." + p.name, std::move(t));
  }
  for (const auto& rs : model.running) {
    Tensor<float> m({static_cast<int>(rs.mean.size())}), v({static_cast<int>(rs.var.size())});
    for (size_t i = 0; i < rs.mean.size(); ++i) m[static_cast<long>(i)] = static_cast<float>(rs.mean[i]);
    for (size_t i = 0; i < rs.var.size(); ++i) v[static_cast<long>(i)] = static_cast<float>(rs.var[i]);
    out.emplace_back("running." + rs.name + ".mean", std::move(m));
    out.emplace_back("running." + rs.name + ".var", std::move(v));
  }
  for (const auto& [name, vel] : opt.velocity) {
    Tensor<float> t(vel.shape);
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(vel[i]);
    out.emplace_back("velocity." + name, std::move(t));
  }
  auto put_buffer = [&](const char* prefix, const std::deque<std::vector<S>>& buf) {
    int idx = 0;
    for (const auto& entry : buf) {
      Tensor<float> t({static_cast<int>(entry.size())});
      for (size_t i = 0; i < entry.size(); ++i) t[static_cast<long>(i)] = static_cast<float>(entry[i]);
      out.emplace_back(std::string(prefix) + std::to_string(idx++), std::move(t));
    }
  };
  put_buffer("state.src.", state.src_buffer);
  put_buffer("state.tgt.", state.tgt_buffer);
  {
    Tensor<float> ring_t({static_cast<int>(ring.size()), 3});
    for (size_t i = 0; i < ring.size(); ++i) {
      ring_t.at(static_cast<int>(i), 0) = static_cast<float>(ring[i].images);
      ring_t.at(static_cast<int>(i), 1) = static_cast<float>(ring[i].target_accuracy);
      ring_t.at(static_cast<int>(i), 2) = static_cast<float>(ring[i].source_accuracy);
    }
    out.emplace_back("meta.ring", std::move(ring_t));
  }
  put1("meta.images", static_cast<float>(images_seen));
  return out;
}

template <typename S>
long restore_training_state(const NamedTensors& tensors, Model<S>& model, Optimizer<S>& opt,
                            PseudoLabelState<S>& state, std::vector<CheckpointEntry>& ring) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto need = [&](const std::string& name) -> const Tensor<float>& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor " + name);
    return *it->second;
  };
  for (auto& p : model.params) {
    const Tensor<float>& t = need("param." + p.name);
    if (t.shape != p.value.shape) throw CheckpointError("checkpoint: shape mismatch " + p.name);
    for (long i = 0; i < t.numel(); ++i) p.value[i] = static_cast<S>(t[i]);
  }
  for (auto& rs : model.running) {
    const Tensor<float>& m = need("running." + rs.name + ".mean");
    const Tensor<float>& v = need("running." + rs.name + ".var");
    for (size_t i = 0; i < rs.mean.size(); ++i) rs.mean[i] = static_cast<S>(m[static_cast<long>(i)]);
    for (size_t i = 0; i < rs.var.size(); ++i) rs.var[i] = static_cast<S>(v[static_cast<long>(i)]);
  }
  opt.velocity.clear();
  for (const auto& [name, t] : tensors) {
    if (name.rfind("velocity.", 0) == 0) {
      Tensor<S> vel(t.shape);
      for (long i = 0; i < t.numel(); ++i) vel[i] = static_cast<S>(t[i]);
      opt.velocity[name.substr(9)] = std::move(vel);
    }
  }
  state.src_buffer.clear();
  state.tgt_buffer.clear();
  for (int idx = 0;; ++idx) {
    auto it = by_name.find("state.src." + std::to_string(idx));
    if (it == by_name.end()) break;
    std::vector<S> e(static_cast<size_t>(it->second->numel()));
    for (long i = 0; i < it->second->numel(); ++i) e[static_cast<size_t>(i)] = static_cast<S>((*it->second)[i]);
    state.src_buffer.push_back(std::move(e));
  }
  for (int idx = 0;; ++idx) {
    auto it = by_name.find("state.tgt." + std::to_string(idx));
    if (it == by_name.end()) break;
    std::vector<S> e(static_cast<size_t>(it->second->numel()));
    for (long i = 0; i < it->second->numel(); ++i) e[static_cast<size_t>(i)] = static_cast<S>((*it->second)[i]);
    state.tgt_buffer.push_back(std::move(e));
  }
  ring.clear();
  const Tensor<float>& ring_t = need("meta.ring");
  for (int i = 0; i < ring_t.dim(0); ++i)
    ring.push_back({static_cast<long>(ring_t.at(i, 0)),
                    static_cast<double>(ring_t.at(i, 1)),
                    static_cast<double>(ring_t.at(i, 2))});
  return static_cast<long>(need("meta.images")[0]);
}

// ---------------------------------------------------------------------------
// the training loop

/// Trains per the configured algorithm, counting labeled images processed.
/// Evaluates on target_test (BN in Eval mode) at every checkpoint boundary;
/// the final accuracy is the median over the last eval_last_k checkpoints.
/// Deterministic given (task seed, cfg.seed) on a fixed backend/precision.
inline RunRecord train(const TaskSpec& task, const TrainConfig& cfg) {
  cfg.validate();
  if (task.kind == TaskKind::SSDA && !task.target_labeled)
    throw ValueError("train: SSDA task without target_labeled");
  const Dataset& src = task.source_labeled;
  if (src.h() != cfg.input_side || src.w() != cfg.input_side)
    throw ShapeError("train: datasets must be prepared at input_side " +
                     std::to_string(cfg.input_side));
  const auto t_start = std::chrono::steady_clock::now();

  Model<float> model = build_desknet<float>(cfg.input_side, src.c(), src.k, cfg.model_width,
                                            mix_seed(cfg.seed, 0x6d6f64656cULL));
  Optimizer<float> opt = cfg.opt;
  opt.velocity.clear();
  PseudoLabelState<float> state(cfg.adamatch.dist_buffer_len);
  BatchStream stream = batch_stream(task, cfg.n_sl, cfg.adamatch.uratio,
                                    mix_seed(cfg.seed, 0x64617461ULL));

  std::vector<CheckpointEntry> ring;
  const int ring_cap = cfg.eval_last_k + 2;
  long images_seen = 0;

  namespace fs = std::filesystem;
  std::string ckpt_dir;
  if (!cfg.out_dir.empty()) {
    ckpt_dir = (fs::path(cfg.out_dir) / "checkpoints").string();
    fs::create_directories(ckpt_dir);
  }
  const std::string latest_path =
      ckpt_dir.empty() ? std::string() : (fs::path(ckpt_dir) / "latest.admk").string();

  if (cfg.resume && !latest_path.empty() && fs::exists(latest_path)) {
    images_seen = restore_training_state(read_checkpoint(latest_path), model, opt, state, ring);
    // fast-forward the data stream: replay the consumed batches
    for (long t = 0; t < images_seen; t += cfg.n_sl) (void)stream.next();
  }

  Dataset source_eval = src;
  if (src.n() > cfg.eval_source_cap) {
    std::vector<int> idx(static_cast<size_t>(cfg.eval_source_cap));
    for (int i = 0; i < cfg.eval_source_cap; ++i) idx[static_cast<size_t>(i)] = i;
    source_eval = take_indices(src, idx, src.name + "-evalcap");
  }

  auto do_checkpoint = [&]() {
    CheckpointEntry e;
    e.images = images_seen;
    e.target_accuracy = evaluate(model, task.target_test);
    e.source_accuracy = evaluate(model, source_eval);
    ring.push_back(e);
    if (static_cast<int>(ring.size()) > ring_cap) ring.erase(ring.begin());
    if (!latest_path.empty())
      write_checkpoint(latest_path, snapshot_training_state(model, opt, state, ring, images_seen));
  };

  auto step_fn = [&](const BatchPair& batch, long t, Rng& rng) -> StepReport<float> {
    switch (cfg.algo.kind) {
      case AlgoSpec::Kind::AdaMatch:
        return adamatch_step(model, opt, batch, cfg.adamatch, state, t, cfg.total_images,
                             rng, cfg.policy);
      case AlgoSpec::Kind::AdaMatchAblation:
        return ablate<float>(cfg.algo.variant)(model, opt, batch, cfg.adamatch, state, t,
                                               cfg.total_images, rng, cfg.policy);
      case AlgoSpec::Kind::FixMatchPlus:
        return fixmatch_plus_step(model, opt, batch, cfg.adamatch, state, t,
                                  cfg.total_images, rng, cfg.policy);
      case AlgoSpec::Kind::BaselineBN:
        return baseline_bn_step(model, opt, batch, t, cfg.total_images, rng, cfg.policy);
      case AlgoSpec::Kind::SupervisedOracle:
        return supervised_step(model, opt, batch, t, cfg.total_images, rng, cfg.policy);
    }
    throw ValueError("train: unknown algorithm");
  };

  while (images_seen < cfg.total_images) {
    if (cfg.halt_after_images > 0 && images_seen >= cfg.halt_after_images) break;
    const long t = images_seen;
    BatchPair batch = stream.next();
    Rng step_rng(mix_seed(mix_seed(cfg.seed, 0x73746570ULL), static_cast<uint64_t>(t)));
    (void)step_fn(batch, t, step_rng);
    const long before = images_seen / cfg.checkpoint_every;
    images_seen += cfg.n_sl;
    if (images_seen / cfg.checkpoint_every > before || images_seen >= cfg.total_images)
      do_checkpoint();
  }

  RunRecord rec;
  rec.checkpoints = ring;
  rec.images_trained = images_seen;
  std::vector<double> accs;
  for (const auto& e : ring) accs.push_back(e.target_accuracy);
  rec.final_accuracy = accs.empty()
                           ? 0.0
                           : median_last_k(accs, std::min<int>(cfg.eval_last_k,
                                                               static_cast<int>(accs.size())));
  rec.config_fingerprint = cfg.config_fingerprint;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (!ckpt_dir.empty())
    write_checkpoint((fs::path(ckpt_dir) / "final.admk").string(),
                     snapshot_training_state(model, opt, state, ring, images_seen));
  return rec;
}

// ---------------------------------------------------------------------------
// experiment matrix

struct DomainData {
  Dataset train, test;
};
using DatasetResolver = std::function<DomainData(const std::string&)>;

struct MatrixCell {
  std::string source, target;
  uint64_t seed = 0;
  bool ok = false;
  double final_accuracy = 0.0;
  std::string error;
};

struct MatrixResult {
  std::vector<MatrixCell> cells;
  TaskKind kind = TaskKind::UDA;
  std::string algo;

  std::vector<ResultRow> rows() const {
    std::vector<ResultRow> out;
    for (const auto& c : cells)
      if (c.ok)
        out.push_back({c.source, c.target, task_kind_name(kind), algo, c.seed,
                       c.final_accuracy});
    return out;
  }

  double grand_average() const {
    double sum = 0;
    int n = 0;
    for (const auto& c : cells)
      if (c.ok) {
        sum += c.final_accuracy;
        ++n;
      }
    return n ? sum / n : 0.0;
  }
};

/// Runs one cell per (source, target) pair; in UDA mode diagonal pairs are
/// excluded. A failing cell is recorded as missing and does not abort the
/// others. Cells are independent; `workers` of them run concurrently.
inline MatrixResult run_matrix(const std::vector<std::pair<std::string, std::string>>& pairs,
                               TaskKind kind, const TrainConfig& cfg,
                               const DatasetResolver& resolve, int n_target_labels = 0,
                               int workers = 1) {
  MatrixResult result;
  result.kind = kind;
  result.algo = cfg.algo.name();
  for (const auto& [s, t] : pairs) {
    if (kind == TaskKind::UDA && s == t) continue;
    MatrixCell cell;
    cell.source = s;
    cell.target = t;
    cell.seed = cfg.seed;
    result.cells.push_back(std::move(cell));
  }

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      MatrixCell& cell = result.cells[i];
      try {
        DomainData sd = resolve(cell.source);
        DomainData td = resolve(cell.target);
        TaskSpec task = build_task(sd.train, td.train, td.test, kind, n_target_labels,
                                   mix_seed(cfg.seed, fnv1a(cell.source + ">" + cell.target)));
        TrainConfig cell_cfg = cfg;
        if (!cfg.out_dir.empty())
          cell_cfg.out_dir = (std::filesystem::path(cfg.out_dir) /
                              (cell.source + "_to_" + cell.target))
                                 .string();
        RunRecord rec = train(task, cell_cfg);
        cell.final_accuracy = rec.final_accuracy;
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
    }
  };

  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return result;
}

}  // namespace adamatch
