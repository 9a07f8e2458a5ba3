#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "adamatch/rng.hpp"
#include "adamatch/tensor.hpp"

namespace adamatch {

struct DataError : std::runtime_error {
  enum class Kind { MissingFile, MagicMismatch, Truncated, CountMismatch, Other };
  Kind kind;
  DataError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

/// Labeled image set. Images are (N, h, w, c) with values in [0,1];
/// immutable after construction.
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::string name;
  int k = 0;

  int n() const { return images.rank() == 4 ? images.dim(0) : 0; }
  int h() const { return images.dim(1); }
  int w() const { return images.dim(2); }
  int c() const { return images.dim(3); }

  void validate() const {
    require_rank(images, 4, "dataset");
    if (static_cast<int>(labels.size()) != n())
      throw DataError(DataError::Kind::CountMismatch,
                      "dataset " + name + ": label count " + std::to_string(labels.size()) +
                          " != image count " + std::to_string(n()));
    for (int l : labels)
      if (l < 0 || l >= k)
        throw DataError(DataError::Kind::Other, "dataset " + name + ": label out of range");
  }
};

// ---------------------------------------------------------------------------
// IDX ingestion

namespace detail {

inline std::vector<uint8_t> read_file_maybe_gzip(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw DataError(DataError::Kind::MissingFile, "cannot open " + path);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
  if (raw.size() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b) {
    // gzip container; inflate fully
    std::vector<uint8_t> out;
    out.reserve(raw.size() * 4);
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK)
      throw DataError(DataError::Kind::Other, "zlib init failed for " + path);
    zs.next_in = raw.data();
    zs.avail_in = static_cast<uInt>(raw.size());
    uint8_t buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
      zs.next_out = buf;
      zs.avail_out = sizeof(buf);
      rc = inflate(&zs, Z_NO_FLUSH);
      if (rc != Z_OK && rc != Z_STREAM_END) {
        inflateEnd(&zs);
        throw DataError(DataError::Kind::Truncated, "corrupt gzip stream in " + path);
      }
      out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    }
    inflateEnd(&zs);
    return out;
  }
  return raw;
}

inline uint32_t be32(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
         uint32_t(p[3]);
}

}  // namespace detail

/// Reads an IDX image/label pair (gzip-compressed files accepted). Pixels are
/// scaled to [0,1]; grayscale stays c=1 (RGB conversion is a transform, not
/// ingestion).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto ibytes = detail::read_file_maybe_gzip(images_path);
  auto lbytes = detail::read_file_maybe_gzip(labels_path);
  if (ibytes.size() < 16)
    throw DataError(DataError::Kind::Truncated, images_path + ": header truncated");
  if (lbytes.size() < 8)
    throw DataError(DataError::Kind::Truncated, labels_path + ": header truncated");

  const uint32_t imagic = detail::be32(ibytes.data());
  if (imagic != 0x00000803u)
    throw DataError(DataError::Kind::MagicMismatch,
                    images_path + ": image magic mismatch (expected 0x00000803)");
  const uint32_t lmagic = detail::be32(lbytes.data());
  if (lmagic != 0x00000801u)
    throw DataError(DataError::Kind::MagicMismatch,
                    labels_path + ": label magic mismatch (expected 0x00000801)");

  const uint32_t n = detail::be32(ibytes.data() + 4);
  const uint32_t rows = detail::be32(ibytes.data() + 8);
  const uint32_t cols = detail::be32(ibytes.data() + 12);
  const uint32_t nl = detail::be32(lbytes.data() + 4);
  if (nl != n)
    throw DataError(DataError::Kind::CountMismatch,
                    "image count " + std::to_string(n) + " != label count " +
                        std::to_string(nl));
  const size_t need = 16 + size_t(n) * rows * cols;
  if (ibytes.size() < need)
    throw DataError(DataError::Kind::Truncated, images_path + ": payload truncated");
  if (lbytes.size() < 8 + size_t(n))
    throw DataError(DataError::Kind::Truncated, labels_path + ": payload truncated");

  Dataset ds;
  ds.images = Tensor<float>({static_cast<int>(n), static_cast<int>(rows),
                             static_cast<int>(cols), 1});
  const uint8_t* px = ibytes.data() + 16;
  for (long i = 0; i < ds.images.numel(); ++i)
    ds.images[i] = static_cast<float>(px[i]) / 255.0f;
  ds.labels.resize(n);
  int maxl = 0;
  for (uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = lbytes[8 + i];
    maxl = std::max(maxl, ds.labels[i]);
  }
  ds.k = maxl + 1;
  ds.name = std::filesystem::path(images_path).filename().string();
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// synthetic domain shifts

struct Invert {};
struct Colorize {
  uint64_t seed = 0;
};
struct GaussianNoise {
  double sigma = 0.0;
  uint64_t seed = 0;
};
/// Zero-pads small gaps (the 28->32 MNIST convention) and bicubically
/// resizes anything else (the 16->32 USPS convention).
struct PadResize {
  int target_side = 32;
};
using ShiftSpec = std::variant<Invert, Colorize, GaussianNoise, PadResize>;

namespace detail {

inline float cubic_weight(float t) {
  // Keys kernel, a = -0.5
  const float a = -0.5f;
  t = std::abs(t);
  if (t <= 1.f) return (a + 2.f) * t * t * t - (a + 3.f) * t * t + 1.f;
  if (t < 2.f) return a * t * t * t - 5.f * a * t * t + 8.f * a * t - 4.f * a;
  return 0.f;
}

inline Tensor<float> bicubic_resize(const Tensor<float>& images, int target) {
  const int n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  Tensor<float> out({n, target, target, c});
  const float sy = static_cast<float>(h) / target;
  const float sx = static_cast<float>(w) / target;
  for (int img = 0; img < n; ++img)
    for (int oy = 0; oy < target; ++oy) {
      const float fy = (oy + 0.5f) * sy - 0.5f;
      const int iy0 = static_cast<int>(std::floor(fy));
      for (int ox = 0; ox < target; ++ox) {
        const float fx = (ox + 0.5f) * sx - 0.5f;
        const int ix0 = static_cast<int>(std::floor(fx));
        for (int ch = 0; ch < c; ++ch) {
          float acc = 0.f, wsum = 0.f;
          for (int dy = -1; dy <= 2; ++dy) {
            const int yy = std::clamp(iy0 + dy, 0, h - 1);
            const float wy = cubic_weight(fy - (iy0 + dy));
            for (int dx = -1; dx <= 2; ++dx) {
              const int xx = std::clamp(ix0 + dx, 0, w - 1);
              const float wx = cubic_weight(fx - (ix0 + dx));
              acc += wy * wx * images.at(img, yy, xx, ch);
              wsum += wy * wx;
            }
          }
          out.at(img, oy, ox, ch) = std::clamp(acc / wsum, 0.f, 1.f);
        }
      }
    }
  return out;
}

}  // namespace detail

/// Applies a pixel-level domain shift; labels are untouched and the result is
/// deterministic given the seed carried in the spec.
inline Dataset shift_domain(const Dataset& ds, const ShiftSpec& spec) {
  Dataset out;
  out.labels = ds.labels;
  out.k = ds.k;

  if (std::holds_alternative<Invert>(spec)) {
    out.name = ds.name + "+invert";
    out.images = ds.images;
    for (auto& v : out.images.data) v = 1.0f - v;
  } else if (const auto* col = std::get_if<Colorize>(&spec)) {
    if (ds.c() != 1)
      throw ValueError("shift_domain: colorize expects grayscale input");
    out.name = ds.name + "+color";
    out.images = Tensor<float>({ds.n(), ds.h(), ds.w(), 3});
    for (int i = 0; i < ds.n(); ++i) {
      Rng rng(mix_seed(col->seed, static_cast<uint64_t>(i)));
      float bg[3], fg[3];
      for (int ch = 0; ch < 3; ++ch) bg[ch] = static_cast<float>(rng.u01() * 0.5);
      for (int ch = 0; ch < 3; ++ch) fg[ch] = static_cast<float>(0.5 + rng.u01() * 0.5);
      for (int y = 0; y < ds.h(); ++y)
        for (int x = 0; x < ds.w(); ++x) {
          const float v = ds.images.at(i, y, x, 0);
          for (int ch = 0; ch < 3; ++ch)
            out.images.at(i, y, x, ch) = bg[ch] + v * (fg[ch] - bg[ch]);
        }
    }
  } else if (const auto* gn = std::get_if<GaussianNoise>(&spec)) {
    if (gn->sigma < 0) throw ValueError("shift_domain: sigma must be >= 0");
    out.name = ds.name + "+noise";
    out.images = ds.images;
    if (gn->sigma > 0) {
      Rng rng(mix_seed(gn->seed, 0x6e6f697365ULL));
      for (auto& v : out.images.data)
        v = std::clamp(v + static_cast<float>(rng.normal() * gn->sigma), 0.f, 1.f);
    }
  } else if (const auto* pr = std::get_if<PadResize>(&spec)) {
    const int target = pr->target_side;
    if (target < ds.h()) throw ValueError("shift_domain: target side smaller than input");
    out.name = ds.name;
    if (target == ds.h() && target == ds.w()) {
      out.images = ds.images;
    } else if (target - ds.h() <= 4 && (target - ds.h()) % 2 == 0 && ds.h() == ds.w()) {
      const int pad = (target - ds.h()) / 2;
      out.images = Tensor<float>({ds.n(), target, target, ds.c()});
      for (int i = 0; i < ds.n(); ++i)
        for (int y = 0; y < ds.h(); ++y)
          for (int x = 0; x < ds.w(); ++x)
            for (int ch = 0; ch < ds.c(); ++ch)
              out.images.at(i, y + pad, x + pad, ch) = ds.images.at(i, y, x, ch);
    } else {
      out.images = detail::bicubic_resize(ds.images, target);
    }
  } else {
    throw ValueError("shift_domain: unsupported spec");
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// dataset utilities

inline Tensor<float> one_hot(const std::vector<int>& labels, int k) {
  Tensor<float> y({static_cast<int>(labels.size()), k});
  for (size_t i = 0; i < labels.size(); ++i) y.at(static_cast<int>(i), labels[i]) = 1.f;
  return y;
}

inline Dataset take_indices(const Dataset& ds, const std::vector<int>& idx,
                            const std::string& name) {
  Dataset out;
  out.k = ds.k;
  out.name = name;
  out.images = Tensor<float>({static_cast<int>(idx.size()), ds.h(), ds.w(), ds.c()});
  out.labels.resize(idx.size());
  const long row = static_cast<long>(ds.h()) * ds.w() * ds.c();
  for (size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(ds.images.ptr() + static_cast<long>(idx[i]) * row, row,
                out.images.ptr() + static_cast<long>(i) * row);
    out.labels[i] = ds.labels[static_cast<size_t>(idx[i])];
  }
  out.validate();
  return out;
}

namespace detail {

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

/// Per-class index lists, classes in ascending order.
inline std::vector<std::vector<int>> by_class(const Dataset& ds) {
  std::vector<std::vector<int>> cls(static_cast<size_t>(ds.k));
  for (int i = 0; i < ds.n(); ++i) cls[static_cast<size_t>(ds.labels[i])].push_back(i);
  return cls;
}

}  // namespace detail

/// Class-balanced subset of exactly per_class examples from each class.
inline Dataset subsample_balanced(const Dataset& ds, int per_class, uint64_t seed) {
  auto cls = detail::by_class(ds);
  Rng rng(mix_seed(seed, 0x737562ULL));
  std::vector<int> pick;
  for (int c = 0; c < ds.k; ++c) {
    auto& list = cls[static_cast<size_t>(c)];
    if (static_cast<int>(list.size()) < per_class)
      throw DataError(DataError::Kind::Other,
                      "class " + std::to_string(c) + " has only " +
                          std::to_string(list.size()) + " examples, need " +
                          std::to_string(per_class));
    detail::shuffle_indices(list, rng);
    pick.insert(pick.end(), list.begin(), list.begin() + per_class);
  }
  return take_indices(ds, pick, ds.name + "#" + std::to_string(per_class * ds.k));
}

/// Skews class frequencies: class c keeps a fraction gamma^c of its examples
/// (at least one). Used to build imbalanced synthetic shift tasks.
inline Dataset skew_classes(const Dataset& ds, double gamma, uint64_t seed) {
  if (gamma <= 0 || gamma > 1) throw ValueError("skew_classes: gamma must be in (0,1]");
  auto cls = detail::by_class(ds);
  Rng rng(mix_seed(seed, 0x736b6577ULL));
  std::vector<int> pick;
  double frac = 1.0;
  for (int c = 0; c < ds.k; ++c) {
    auto& list = cls[static_cast<size_t>(c)];
    detail::shuffle_indices(list, rng);
    const int keep = std::max(1, static_cast<int>(list.size() * frac));
    pick.insert(pick.end(), list.begin(), list.begin() + std::min<size_t>(list.size(), keep));
    frac *= gamma;
  }
  return take_indices(ds, pick, ds.name + "+skew");
}

// ---------------------------------------------------------------------------
// task construction (Table 1 semantics)

enum class TaskKind { UDA, SSL, SSDA };

inline const char* task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::UDA: return "uda";
    case TaskKind::SSL: return "ssl";
    case TaskKind::SSDA: return "ssda";
  }
  return "?";
}

struct TaskSpec {
  TaskKind kind = TaskKind::UDA;
  Dataset source_labeled;
  Dataset target_unlabeled;  // labels retained only for evaluation
  std::optional<Dataset> target_labeled;
  Dataset target_test;
  int n_target_labels_per_class = 0;
  uint64_t seed = 0;
};

/// Builds a UDA/SSL/SSDA task. SSL splits the single (source == target)
/// training set into a class-balanced labeled subset and an unlabeled rest;
/// SSDA removes a class-balanced labeled subset from the target training set.
inline TaskSpec build_task(const Dataset& source_train, const Dataset& target_train,
                           const Dataset& target_test, TaskKind kind, int n_target_labels,
                           uint64_t seed) {
  if (source_train.k != target_train.k)
    throw DataError(DataError::Kind::Other, "build_task: class count mismatch");
  TaskSpec task;
  task.kind = kind;
  task.seed = seed;
  task.target_test = target_test;
  task.n_target_labels_per_class = n_target_labels;

  auto balanced_split = [&](const Dataset& pool, int per_class) {
    auto cls = detail::by_class(pool);
    Rng rng(mix_seed(seed, 0x7461736bULL));
    std::vector<int> lab, rest;
    for (int c = 0; c < pool.k; ++c) {
      auto& list = cls[static_cast<size_t>(c)];
      if (static_cast<int>(list.size()) < per_class)
        throw DataError(DataError::Kind::Other,
                        "build_task: class " + std::to_string(c) + " has fewer than " +
                            std::to_string(per_class) + " examples");
      detail::shuffle_indices(list, rng);
      lab.insert(lab.end(), list.begin(), list.begin() + per_class);
      rest.insert(rest.end(), list.begin() + per_class, list.end());
    }
    std::sort(rest.begin(), rest.end());
    return std::pair{lab, rest};
  };

  switch (kind) {
    case TaskKind::UDA:
      task.source_labeled = source_train;
      task.target_unlabeled = target_train;
      break;
    case TaskKind::SSL: {
      if (source_train.name != target_train.name)
        throw ValueError("build_task: SSL requires source == target");
      if (n_target_labels < 1) throw ValueError("build_task: SSL needs labels per class");
      auto [lab, rest] = balanced_split(source_train, n_target_labels);
      task.source_labeled = take_indices(source_train, lab, source_train.name + "-labeled");
      task.target_unlabeled = take_indices(source_train, rest, source_train.name + "-unlabeled");
      break;
    }
    case TaskKind::SSDA: {
      if (n_target_labels < 1) throw ValueError("build_task: SSDA needs labels per class");
      auto [lab, rest] = balanced_split(target_train, n_target_labels);
      task.source_labeled = source_train;
      task.target_labeled = take_indices(target_train, lab, target_train.name + "-labeled");
      task.target_unlabeled = take_indices(target_train, rest, target_train.name + "-unlabeled");
      break;
    }
  }
  return task;
}

// ---------------------------------------------------------------------------
// batch stream

/// One training minibatch: labeled rows with one-hot labels plus the larger
/// unlabeled target batch, n_TU = uratio * n_SL.
struct BatchPair {
  Tensor<float> x_sl;
  Tensor<float> y_sl;
  Tensor<float> x_tu;
  int n_sl() const { return x_sl.dim(0); }
  int n_tu() const { return x_tu.dim(0); }
};

/// Cycling sampler: labeled and unlabeled streams reshuffle independently per
/// epoch. For SSDA each labeled batch is half source, half target-labeled.
class BatchStream {
 public:
  BatchStream(const TaskSpec& task, int n_sl, int uratio, uint64_t stream_seed)
      : task_(&task), n_sl_(n_sl), uratio_(uratio) {
    if (n_sl < 1 || uratio < 1) throw ValueError("batch_stream: bad batch sizes");
    if (task.source_labeled.n() == 0 || task.target_unlabeled.n() == 0)
      throw DataError(DataError::Kind::Other, "batch_stream: empty dataset");
    Rng root(mix_seed(task.seed, mix_seed(stream_seed, 0x7374726dULL)));
    src_ = Cursor(&task.source_labeled, root.fork());
    if (task.kind == TaskKind::SSDA) {
      if (!task.target_labeled || task.target_labeled->n() == 0)
        throw DataError(DataError::Kind::Other, "batch_stream: SSDA without target labels");
      if (n_sl % 2 != 0)
        throw ValueError("batch_stream: SSDA labeled batch must be even (50/50 split)");
      tl_ = Cursor(&*task.target_labeled, root.fork());
    }
    tu_ = Cursor(&task.target_unlabeled, root.fork());
  }

  BatchPair next() {
    const Dataset& src = task_->source_labeled;
    const int k = src.k, h = src.h(), w = src.w(), c = src.c();
    const int n_tu = uratio_ * n_sl_;
    BatchPair b;
    b.x_sl = Tensor<float>({n_sl_, h, w, c});
    b.y_sl = Tensor<float>({n_sl_, k});
    b.x_tu = Tensor<float>({n_tu, h, w, c});

    const long row = static_cast<long>(h) * w * c;
    auto fill = [&](Tensor<float>& xs, Tensor<float>* ys, int at, Cursor& cur, int count) {
      for (int i = 0; i < count; ++i) {
        const int idx = cur.next_index();
        std::copy_n(cur.ds->images.ptr() + static_cast<long>(idx) * row, row,
                    xs.ptr() + static_cast<long>(at + i) * row);
        if (ys) ys->at(at + i, cur.ds->labels[static_cast<size_t>(idx)]) = 1.f;
      }
    };

    if (task_->kind == TaskKind::SSDA) {
      fill(b.x_sl, &b.y_sl, 0, src_, n_sl_ / 2);
      fill(b.x_sl, &b.y_sl, n_sl_ / 2, tl_, n_sl_ / 2);
    } else {
      fill(b.x_sl, &b.y_sl, 0, src_, n_sl_);
    }
    fill(b.x_tu, nullptr, 0, tu_, n_tu);
    return b;
  }

 private:
  struct Cursor {
    const Dataset* ds = nullptr;
    std::vector<int> order;
    size_t pos = 0;
    Rng rng{0};

    Cursor() = default;
    Cursor(const Dataset* d, Rng r) : ds(d), rng(r) {}

    int next_index() {
      if (pos >= order.size()) {
        order.resize(static_cast<size_t>(ds->n()));
        for (int i = 0; i < ds->n(); ++i) order[static_cast<size_t>(i)] = i;
        detail::shuffle_indices(order, rng);
        pos = 0;
      }
      return order[pos++];
    }
  };

  const TaskSpec* task_;
  int n_sl_, uratio_;
  Cursor src_, tl_, tu_;
};

inline BatchStream batch_stream(const TaskSpec& task, int n_sl, int uratio,
                                uint64_t stream_seed) {
  return BatchStream(task, n_sl, uratio, stream_seed);
}

}  // namespace adamatch
