#include "cotlab/tensor.hpp"

#include <cmath>
#include <utility>

namespace cotlab {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw TensorError("tensor storage size " + std::to_string(data_.size()) +
                      " does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) {
  Tensor t(1, 1);
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double v) {
  Tensor t(rows, cols);
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

Tensor Tensor::col(std::initializer_list<double> v) {
  Tensor t(v.size(), 1);
  std::size_t i = 0;
  for (double x : v) t.data_[i++] = x;
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  Tensor t(1, v.size());
  std::size_t i = 0;
  for (double x : v) t.data_[i++] = x;
  return t;
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(rows_) + "," + std::to_string(cols_) + ")";
}

double& Tensor::at(std::size_t i, std::size_t j) {
  if (i >= rows_ || j >= cols_)
    throw TensorError("index (" + std::to_string(i) + "," + std::to_string(j) +
                      ") out of range for " + shape_str());
  return data_[i * cols_ + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  return const_cast<Tensor*>(this)->at(i, j);
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1)
    throw TensorError("item() requires a 1x1 tensor, got " + shape_str());
  return data_[0];
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace cotlab
