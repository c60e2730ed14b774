#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tabrec {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonScalarLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StepOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadDims : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SequenceTooLong : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyAlignment : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OutOfBounds : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CorruptCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingPolygons : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GridTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array, rank 1 or 2. Rank-0 values are stored as shape [1].
template <typename T>
struct Array {
  std::vector<int> shape;
  std::vector<T> v;

  Array() = default;
  explicit Array(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)),
        v(static_cast<size_t>(numel_of(shape)), fill) {}
  Array(std::vector<int> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw ShapeMismatch("array data length " + std::to_string(v.size()) +
                          " does not match shape " + shape_str(shape));
  }

  static Array scalar(T x) { return Array({1}, std::vector<T>{x}); }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  // Rank-1 arrays act as a single row everywhere rows/cols matter.
  int rows() const { return rank() == 2 ? shape[0] : 1; }
  int cols() const {
    return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1);
  }

  T& operator()(int i) { return v[static_cast<size_t>(i)]; }
  T operator()(int i) const { return v[static_cast<size_t>(i)]; }
  T& operator()(int i, int j) {
    return v[static_cast<size_t>(i) * shape[1] + j];
  }
  T operator()(int i, int j) const {
    return v[static_cast<size_t>(i) * shape[1] + j];
  }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  template <typename U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
void require_same_shape(const Array<T>& a, const Array<T>& b,
                        const char* what) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(what) + ": " + shape_str(a.shape) +
                        " vs " + shape_str(b.shape));
}

}  // namespace tabrec
