#pragma once

#include <functional>

#include "cotlab/tensor.hpp"

namespace cotlab {

// Limited-memory BFGS with a strong Wolfe line search. The zoom stage
// interpolates quadratically, so on an exactly quadratic objective the first
// zoomed trial lands on the minimizer along the search direction.

struct LbfgsConfig {
  int history = 10;
  int max_iters = 200;
  double tol = 1e-6;  // stop when the gradient 2-norm falls below this
  double c1 = 1e-4;   // sufficient decrease
  double c2 = 0.9;    // curvature
  int max_line_iters = 40;
};

struct LbfgsResult {
  Tensor x;
  double value = 0.0;
  Tensor grad;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Evaluates the objective at x and writes the gradient into grad.
using Objective = std::function<double(const Tensor& x, Tensor& grad)>;

LbfgsResult lbfgs_minimize(const Objective& f, Tensor x0, const LbfgsConfig& cfg = {});

}  // namespace cotlab
