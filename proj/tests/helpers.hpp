#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cotlab/rng.hpp"
#include "cotlab/tensor.hpp"

namespace testutil {

using cotlab::Rng;
using cotlab::Tensor;

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

inline Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0,
                            double hi = 2.0) {
  Tensor t(r, c);
  for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(lo, hi);
  return t;
}

// random symmetric positive definite matrix A A^T + eps I, row-major
inline Tensor random_spd(Rng& rng, std::size_t n, double eps = 0.5) {
  Tensor a = random_tensor(rng, n, n, -1.0, 1.0);
  Tensor h(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += a(i, k) * a(j, k);
      h(i, j) = s + (i == j ? eps : 0.0);
    }
  return h;
}

// batch of SPD matrices in the (n*n, B) layout: column b holds matrix b with
// entry (i,j) at row j*n+i
inline Tensor random_spd_batch(Rng& rng, int n, std::size_t b_count) {
  Tensor out(static_cast<std::size_t>(n) * n, b_count);
  for (std::size_t b = 0; b < b_count; ++b) {
    Tensor h = random_spd(rng, static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        out(static_cast<std::size_t>(j * n + i), b) =
            h(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return out;
}

enum class DirKind { Dense, SymSingle, SymBatch };

inline Tensor random_direction(Rng& rng, const Tensor& like, DirKind kind, int n = 0) {
  if (kind == DirKind::Dense) return random_tensor(rng, like.rows(), like.cols());
  if (kind == DirKind::SymSingle) {
    Tensor r = random_tensor(rng, like.rows(), like.cols());
    Tensor e(like.rows(), like.cols());
    for (std::size_t i = 0; i < e.rows(); ++i)
      for (std::size_t j = 0; j < e.cols(); ++j) e(i, j) = r(i, j) + r(j, i);
    return e;
  }
  // SymBatch: symmetric n-by-n block per column
  Tensor e(like.rows(), like.cols());
  for (std::size_t b = 0; b < like.cols(); ++b) {
    Tensor r = random_tensor(rng, static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        e(static_cast<std::size_t>(j * n + i), b) =
            r(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +
            r(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
  }
  return e;
}

inline double dot_all(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

// Central finite difference of f along direction `dir` applied to input
// `which`, with a step scaled by the largest perturbed entry.
inline double fd_directional(const std::function<double(const std::vector<Tensor>&)>& f,
                             std::vector<Tensor> xs, std::size_t which, const Tensor& dir,
                             double h = 1e-6) {
  const double scale = std::max(1.0, xs[which].max_abs());
  const double step = h * scale;
  std::vector<Tensor> xp = xs;
  std::vector<Tensor> xm = xs;
  for (std::size_t k = 0; k < dir.size(); ++k) {
    xp[which].data()[k] += step * dir.data()[k];
    xm[which].data()[k] -= step * dir.data()[k];
  }
  return (f(xp) - f(xm)) / (2.0 * step);
}

}  // namespace testutil
