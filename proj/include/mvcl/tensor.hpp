#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mvcl {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 buffer. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix; the model never needs more than two axes because batched
/// sequences are stacked along rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Rank-2 view: a vector is one row, a scalar is 1x1.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  bool all_finite() const;
  void fill(double v);

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  /// Rows [begin, begin + count) of the rank-2 view.
  Tensor row_slice(std::size_t begin, std::size_t count) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Bitwise comparison of shape and payload (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Gathers rows (blocks of `rows_per_item` rows) for the given item indices.
Tensor gather_blocks(const Tensor& src, std::span<const std::size_t> items,
                     std::size_t rows_per_item);

}  // namespace mvcl
