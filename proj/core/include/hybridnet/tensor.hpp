#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hybridnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Gradients are not stored here; they live
/// in the autodiff graph (see graph.hpp) and in GradBuffer for parameters.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Rows when viewed as a matrix: the product of all leading extents.
  std::size_t rows() const;
  /// Extent of the last axis (1 for rank-0).
  std::size_t cols() const;

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t a, std::size_t r, std::size_t c) {
    return data_[(a * shape_[1] + r) * shape_[2] + c];
  }
  double at(std::size_t a, std::size_t r, std::size_t c) const {
    return data_[(a * shape_[1] + r) * shape_[2] + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double v);
  Tensor reshaped(Shape shape) const;

  /// True when shapes match and every element is bitwise equal.
  bool bit_equal(const Tensor& other) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference; throws DimensionError on shape mismatch.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace hybridnet
