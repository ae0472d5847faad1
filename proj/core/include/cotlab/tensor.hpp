#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace cotlab {

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense rank-2 container of doubles, row-major. Scalars are 1x1 and column
// vectors are (n,1); there is no rank-1 type. Everything numeric in this
// library flows through it.
class Tensor {
public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }
  static Tensor full(std::size_t rows, std::size_t cols, double v);
  static Tensor ones(std::size_t rows, std::size_t cols) { return full(rows, cols, 1.0); }
  static Tensor identity(std::size_t n);
  static Tensor col(std::initializer_list<double> v);
  static Tensor row(std::initializer_list<double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;

  // Checked access for 1x1 tensors.
  double item() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double max_abs() const;
  bool all_finite() const;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace cotlab
