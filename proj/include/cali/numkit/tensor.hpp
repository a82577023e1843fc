#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cali::nk {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer of the
// same shape. All dimensions are positive; a rank-0 tensor holds one value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor from(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t i, std::size_t j) noexcept { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return data_[i * shape_[1] + j]; }
  double& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // Value of a single-element tensor.
  double item() const;

  bool has_grad() const noexcept { return has_grad_; }
  std::span<double> grad();
  std::span<const double> grad() const;
  // Allocates a zero gradient if absent, otherwise zeroes the existing one.
  void zero_grad();
  void clear_grad() noexcept;

  Tensor reshaped(Shape shape) const;
  // Copy of values and shape without the gradient.
  Tensor detached() const { return Tensor(shape_, data_); }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool has_grad_ = false;
};

Tensor zeros_like(const Tensor& t);

}  // namespace cali::nk
