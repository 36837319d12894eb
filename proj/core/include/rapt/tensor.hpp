#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rapt {

/// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 are what the
/// model needs; higher ranks are allowed but no op uses them.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw std::invalid_argument("Tensor: shape/data size mismatch");
    }
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor vector(std::vector<double> data) {
    const std::size_t n = data.size();
    return Tensor({n}, std::move(data));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return rank() >= 1 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape_[1] : 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Scalar access; requires a single-element tensor.
  double item() const {
    if (size() != 1) throw std::logic_error("Tensor::item on non-scalar");
    return data_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool all_finite() const {
    for (double x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  void add_(const Tensor& o) {
    require_same_shape(o, "add_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  void scale_(double s) {
    for (double& x : data_) x *= s;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  void require_same_shape(const Tensor& o, const char* where) const {
    if (!same_shape(o)) {
      throw std::invalid_argument(std::string(where) + ": shape mismatch " + shape_str() +
                                  " vs " + o.shape_str());
    }
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

}  // namespace rapt
