#include "occattn/tensor.hpp"

#include <cmath>
#include <sstream>

#include "occattn/error.hpp"

namespace occattn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  data_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(shape_size(shape_)), fill);
}

Tensor Tensor::uninitialized(Shape shape) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  Tensor t;
  t.data_.resize(static_cast<Eigen::Index>(shape_size(shape)));
  t.shape_ = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  if (values.size() != size())
    throw DimensionError("tensor " + shape_string(shape_) + " given " + std::to_string(values.size()) +
                         " values");
  data_ = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

MatrixMap Tensor::matrix(std::size_t rows, std::size_t cols) {
  if (rows * cols != size()) throw DimensionError("matrix view does not cover tensor");
  return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatrixMap Tensor::matrix(std::size_t rows, std::size_t cols) const {
  if (rows * cols != size()) throw DimensionError("matrix view does not cover tensor");
  return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

bool Tensor::all_finite() const { return data_.allFinite(); }

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape_ == b.shape_ && a.data_ == b.data_;
}

}  // namespace occattn
