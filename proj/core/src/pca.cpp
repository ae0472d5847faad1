#include "cotlab/pca.hpp"

#include <Eigen/Dense>
#include <stdexcept>

namespace cotlab {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m(static_cast<long>(i), static_cast<long>(j)) = t(i, j);
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j)
      t(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
  return t;
}

}  // namespace

std::vector<double> sym_eigenvalues(const Tensor& H) {
  if (H.rows() != H.cols()) throw std::invalid_argument("sym_eigenvalues: square matrix required");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(H), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  std::vector<double> ev(H.rows());
  for (std::size_t i = 0; i < H.rows(); ++i) ev[i] = es.eigenvalues()(static_cast<long>(i));
  return ev;
}

Tensor spd_sqrt(const Tensor& H) {
  if (H.rows() != H.cols()) throw std::invalid_argument("spd_sqrt: square matrix required");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(H));
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  Eigen::VectorXd lam = es.eigenvalues();
  for (long i = 0; i < lam.size(); ++i) {
    if (lam(i) < -1e-10) throw std::runtime_error("spd_sqrt: matrix has a negative eigenvalue");
    lam(i) = std::sqrt(std::max(0.0, lam(i)));
  }
  return from_eigen(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

PcaResult pca_project(const Tensor& data, std::size_t k) {
  const std::size_t N = data.rows(), dim = data.cols();
  if (k < 1 || k > std::min(N, dim)) throw std::invalid_argument("pca_project: k out of range");

  Eigen::MatrixXd X = to_eigen(data);
  Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = X.transpose() * X / static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");

  PcaResult r;
  r.mean.assign(mean.data(), mean.data() + dim);
  r.eigenvalues.resize(dim);
  double trace = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    r.eigenvalues[i] = es.eigenvalues()(static_cast<long>(dim - 1 - i));  // descending
    trace += std::max(0.0, r.eigenvalues[i]);
  }
  Eigen::MatrixXd basis(dim, k);
  double kept = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    basis.col(static_cast<long>(j)) = es.eigenvectors().col(static_cast<long>(dim - 1 - j));
    kept += std::max(0.0, r.eigenvalues[j]);
  }
  r.basis = from_eigen(basis);
  r.projected = from_eigen(X * basis);
  r.explained_ratio = trace > 0.0 ? kept / trace : 0.0;
  return r;
}

}  // namespace cotlab
