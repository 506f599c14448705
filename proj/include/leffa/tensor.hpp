#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace leffa {

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

struct dim_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct param_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major N-d array. Data is shared on copy; treat values as
// immutable once produced by a kernel.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(count(shape_), T(0))) {}

  Tensor(std::vector<int64_t> shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<int64_t>(data_->size()) != count(shape_))
      throw dim_error("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor full(std::vector<int64_t> shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }

  const T* data() const { return data_->data(); }
  T* data() { return data_->data(); }
  const T& operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }

  T item() const {
    if (numel() != 1) throw dim_error("item() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<int64_t> shape) const {
    if (count(shape) != numel())
      throw dim_error("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                      " changes element count");
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  // Deep copy; the result owns fresh storage.
  Tensor clone() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = std::make_shared<std::vector<T>>(*data_);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(data_->size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*data_)[i]);
    return Tensor<U>(shape_, std::move(v));
  }

  bool all_finite() const {
    for (const T& x : *data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  static int64_t count(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw dim_error("negative dimension in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw dim_error("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace leffa
