#pragma once

#include <cstddef>
#include <vector>

#include "cotlab/tensor.hpp"

namespace cotlab {

// Spectral utilities on symmetric matrices, plus the principal-component
// projection used to compress high-dimensional observations.

// ascending eigenvalues of a symmetric matrix
std::vector<double> sym_eigenvalues(const Tensor& H);

// symmetric PSD square root
Tensor spd_sqrt(const Tensor& H);

struct PcaResult {
  Tensor basis;       // dim x k, orthonormal columns, descending eigenvalue order
  Tensor projected;   // N x k, centered data times basis
  std::vector<double> mean;         // column means used for centering
  std::vector<double> eigenvalues;  // all eigenvalues, descending
  double explained_ratio = 0.0;     // top-k eigenvalue mass over the trace
};

// rows of `data` are samples
PcaResult pca_project(const Tensor& data, std::size_t k);

}  // namespace cotlab
