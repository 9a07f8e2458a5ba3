#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace adamatch {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when a forward/backward pass produces NaN/Inf. Carries the training
/// step index when known (-1 otherwise).
struct NumericError : std::runtime_error {
  long step = -1;
  explicit NumericError(const std::string& what, long step_index = -1)
      : std::runtime_error(what), step(step_index) {}
};

/// Dense row-major tensor. `S` is float for training, double for the
/// verification builds used by the gradient-check oracles.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
    data.assign(static_cast<size_t>(count(shape)), fill);
  }

  /// Allocation without the zero fill, for outputs that are fully written.
  static Tensor uninit(std::vector<int> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data.resize(static_cast<size_t>(count(t.shape)));
    return t;
  }

  static Tensor from(std::vector<int> shp, std::vector<S> values) {
    if (count(shp) != static_cast<long>(values.size()))
      throw ShapeError("tensor: shape does not match value count");
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(values);
    return t;
  }

  static long count(const std::vector<int>& shp) {
    long n = 1;
    for (int d : shp) {
      if (d < 0) throw ShapeError("tensor: negative extent");
      n *= d;
    }
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](long i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](long i) const { return data[static_cast<size_t>(i)]; }

  // rank-2 accessor
  S& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  const S& at(int i, int j) const {
    return data[static_cast<size_t>(i) * shape[1] + j];
  }

  // rank-4 accessor, layout (n, h, w, c)
  S& at(int n, int y, int x, int c) {
    return data[((static_cast<size_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }
  const S& at(int n, int y, int x, int c) const {
    return data[((static_cast<size_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <typename S>
void require_rank(const Tensor<S>& t, int rank, const char* who) {
  if (t.rank() != rank)
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) +
                     ", got " + std::to_string(t.rank()));
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* who) {
  if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": shape mismatch");
}

inline std::string shape_str(const std::vector<int>& shp) {
  std::string s = "(";
  for (size_t i = 0; i < shp.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shp[i]);
  }
  return s + ")";
}

}  // namespace adamatch
