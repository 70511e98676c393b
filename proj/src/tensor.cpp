#include "mvcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mvcl/error.hpp"

namespace mvcl {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel_of(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (numel_of(shape_) != data_.size())
    fail(ErrorKind::Shape, "tensor data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape_string(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

double Tensor::item() const {
  if (data_.size() != 1)
    fail(ErrorKind::Shape, "item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (numel_of(shape) != numel())
    fail(ErrorKind::Shape, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::row_slice(std::size_t begin, std::size_t count) const {
  const std::size_t c = cols();
  require(begin + count <= rows(), ErrorKind::Shape, "row slice out of range");
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return Tensor::matrix(count, c, std::move(out));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 || std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(), ErrorKind::Shape, "max_abs_diff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Tensor gather_blocks(const Tensor& src, std::span<const std::size_t> items,
                     std::size_t rows_per_item) {
  const std::size_t c = src.cols();
  const std::size_t block = rows_per_item * c;
  std::vector<double> out;
  out.reserve(items.size() * block);
  for (auto item : items) {
    require((item + 1) * rows_per_item <= src.rows(), ErrorKind::Shape,
            "gather index out of range");
    const double* p = src.ptr() + item * block;
    out.insert(out.end(), p, p + block);
  }
  return Tensor::matrix(items.size() * rows_per_item, c, std::move(out));
}

}  // namespace mvcl
