#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lvs {

// Shape/contract violations. Maps to CLI exit code 1.
class DimError : public std::runtime_error {
 public:
  explicit DimError(const std::string& what) : std::runtime_error(what) {}
};

// NaN/Inf or divergence. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw DimError("negative extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

// Dense row-major N-d array, last axis contiguous. Plain value type: copies
// copy the buffer. All pipeline numerics are carried by Tensor<float> or
// Tensor<double>.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
      throw DimError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw DimError("axis " + std::to_string(i) + " out of range for " + shape_str(shape_));
    return shape_[i];
  }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](int64_t flat) { return data_[static_cast<size_t>(flat)]; }
  const T& operator[](int64_t flat) const { return data_[static_cast<size_t>(flat)]; }

  template <typename... Ix>
  T& operator()(Ix... ix) {
    return data_[flat_index({static_cast<int64_t>(ix)...})];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const {
    return data_[flat_index({static_cast<int64_t>(ix)...})];
  }

  int64_t flat_index(std::initializer_list<int64_t> ix) const {
    if (static_cast<int>(ix.size()) != rank())
      throw DimError("indexing " + shape_str(shape_) + " with " + std::to_string(ix.size()) + " indices");
    int64_t flat = 0;
    int i = 0;
    for (int64_t v : ix) flat = flat * shape_[i++] + v;
    return flat;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw DimError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }
  void ensure_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string(what) + ": non-finite value in tensor " + shape_str(shape_));
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& want, const char* what) {
  if (t.shape() != want)
    throw DimError(std::string(what) + ": expected shape " + shape_str(want) + ", got " + shape_str(t.shape()));
}

}  // namespace lvs
