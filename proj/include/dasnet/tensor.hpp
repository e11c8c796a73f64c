#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dasnet {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error(msg);
}

/// Dense row-major tensor. Image tensors use NCHW order.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), S(0));
  }

  Tensor(std::vector<int> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check(static_cast<std::int64_t>(data_.size()) == count(shape_),
          "tensor data size does not match shape");
  }

  static Tensor full(std::vector<int> shape, S value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }

  int dim(int i) const {
    check(i >= 0 && i < rank(), "tensor dim index out of range");
    return shape_[static_cast<std::size_t>(i)];
  }

  const std::vector<int>& shape() const { return shape_; }

  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  bool defined() const { return !shape_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const S& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // NCHW accessors.
  S& at(int n, int c, int y, int x) {
    return data_[static_cast<std::size_t>(offset(n, c, y, x))];
  }
  const S& at(int n, int c, int y, int x) const {
    return data_[static_cast<std::size_t>(offset(n, c, y, x))];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void zero() { std::fill(data_.begin(), data_.end(), S(0)); }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << 'x';
      os << shape_[i];
    }
    os << ']';
    return os.str();
  }

  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(out));
  }

  Tensor reshaped(std::vector<int> shape) const {
    check(count(shape) == numel(), "reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = shape.empty() ? 0 : 1;
    for (int d : shape) {
      check(d >= 0, "negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::int64_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::int64_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

template <typename S>
Tensor<S> scalar_tensor(S v) {
  return Tensor<S>({1}, {v});
}

}  // namespace dasnet
