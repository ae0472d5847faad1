#include "cotlab/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <vector>

namespace cotlab {

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

Tensor axpy(const Tensor& x, double alpha, const Tensor& d) {
  Tensor out = x;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += alpha * d.data()[k];
  return out;
}

struct Pair {
  Tensor s, y;
  double rho;
};

// phi(alpha) = f(x + alpha d); evaluates value and directional derivative
struct LinePoint {
  double a, phi, dphi;
};

}  // namespace

LbfgsResult lbfgs_minimize(const Objective& f, Tensor x0, const LbfgsConfig& cfg) {
  LbfgsResult res;
  res.x = std::move(x0);
  res.grad = Tensor::zeros(res.x.rows(), res.x.cols());
  res.value = f(res.x, res.grad);
  res.grad_norm = norm2(res.grad);

  std::deque<Pair> hist;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    if (res.grad_norm <= cfg.tol) {
      res.converged = true;
      return res;
    }

    // two-loop recursion
    Tensor q = res.grad;
    std::vector<double> alphas(hist.size());
    for (std::size_t i = hist.size(); i-- > 0;) {
      alphas[i] = hist[i].rho * dot(hist[i].s, q);
      for (std::size_t k = 0; k < q.size(); ++k) q.data()[k] -= alphas[i] * hist[i].y.data()[k];
    }
    if (!hist.empty()) {
      const Pair& last = hist.back();
      const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
      for (std::size_t k = 0; k < q.size(); ++k) q.data()[k] *= gamma;
    }
    for (std::size_t i = 0; i < hist.size(); ++i) {
      const double beta = hist[i].rho * dot(hist[i].y, q);
      for (std::size_t k = 0; k < q.size(); ++k)
        q.data()[k] += (alphas[i] - beta) * hist[i].s.data()[k];
    }
    Tensor d = q;
    for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] = -d.data()[k];

    double dphi0 = dot(res.grad, d);
    if (dphi0 >= 0.0) {  // history produced a non-descent direction; reset
      hist.clear();
      for (std::size_t k = 0; k < d.size(); ++k) d.data()[k] = -res.grad.data()[k];
      dphi0 = -res.grad_norm * res.grad_norm;
      if (dphi0 == 0.0) {
        res.converged = true;
        return res;
      }
    }

    const double phi0 = res.value;
    Tensor trial_grad = Tensor::zeros(res.x.rows(), res.x.cols());
    auto eval_line = [&](double a) {
      const Tensor xt = axpy(res.x, a, d);
      const double v = f(xt, trial_grad);
      return LinePoint{a, v, dot(trial_grad, d)};
    };
    auto sufficient = [&](const LinePoint& p) { return p.phi <= phi0 + cfg.c1 * p.a * dphi0; };
    auto curvature = [&](const LinePoint& p) { return std::fabs(p.dphi) <= -cfg.c2 * dphi0; };

    // quadratic interpolation through (lo.phi, lo.dphi) and hi.phi; exact on
    // quadratic objectives, with bisection as the safeguard
    auto interp = [](const LinePoint& lo, const LinePoint& hi) {
      const double dh = hi.a - lo.a;
      const double denom = 2.0 * (hi.phi - lo.phi - lo.dphi * dh);
      double a = denom > 0.0 ? lo.a - lo.dphi * dh * dh / denom : 0.5 * (lo.a + hi.a);
      const double lo_b = std::min(lo.a, hi.a), hi_b = std::max(lo.a, hi.a);
      const double margin = 0.01 * (hi_b - lo_b);
      if (!(a > lo_b + margin) || !(a < hi_b - margin)) a = 0.5 * (lo.a + hi.a);
      return a;
    };

    LinePoint accepted{0.0, phi0, dphi0};
    Tensor accepted_grad = res.grad;
    bool found = false;

    LinePoint lo{0.0, phi0, dphi0};
    LinePoint prev = lo;
    double step = 1.0;
    int line_evals = 0;
    bool zooming = false;
    LinePoint zlo = lo, zhi = lo;

    while (line_evals < cfg.max_line_iters) {
      if (!zooming) {
        LinePoint p = eval_line(step);
        ++line_evals;
        if (!sufficient(p) || (line_evals > 1 && p.phi >= prev.phi)) {
          zlo = prev;
          zhi = p;
          zooming = true;
          continue;
        }
        if (curvature(p)) {
          accepted = p;
          accepted_grad = trial_grad;
          found = true;
          break;
        }
        if (p.dphi >= 0.0) {
          zlo = p;
          zhi = prev;
          zooming = true;
          continue;
        }
        prev = p;
        step *= 2.0;
        if (step > 1e6) break;
      } else {
        const double a = interp(zlo, zhi);
        LinePoint p = eval_line(a);
        ++line_evals;
        if (!sufficient(p) || p.phi >= zlo.phi) {
          zhi = p;
        } else {
          if (curvature(p)) {
            accepted = p;
            accepted_grad = trial_grad;
            found = true;
            break;
          }
          if (p.dphi * (zhi.a - zlo.a) >= 0.0) zhi = zlo;
          zlo = p;
        }
        if (std::fabs(zhi.a - zlo.a) < 1e-16 * std::max(1.0, std::fabs(zlo.a))) break;
      }
    }

    if (!found && zooming && zlo.a > 0.0 && sufficient(zlo)) {
      // fall back to the best bracketed point even without curvature
      accepted = eval_line(zlo.a);
      accepted_grad = trial_grad;
      found = true;
    }
    if (!found || accepted.a <= 0.0) {
      res.iterations = iter;
      res.converged = res.grad_norm <= cfg.tol;
      return res;  // line search failed; report the current iterate
    }

    const Tensor x_new = axpy(res.x, accepted.a, d);
    Tensor g_new = accepted_grad;

    Pair pr;
    pr.s = Tensor::zeros(res.x.rows(), res.x.cols());
    pr.y = Tensor::zeros(res.x.rows(), res.x.cols());
    for (std::size_t k = 0; k < pr.s.size(); ++k) {
      pr.s.data()[k] = x_new.data()[k] - res.x.data()[k];
      pr.y.data()[k] = g_new.data()[k] - res.grad.data()[k];
    }
    const double sy = dot(pr.s, pr.y);
    if (sy > 1e-12 * norm2(pr.s) * norm2(pr.y)) {
      pr.rho = 1.0 / sy;
      hist.push_back(std::move(pr));
      if (static_cast<int>(hist.size()) > cfg.history) hist.pop_front();
    }

    res.x = x_new;
    res.grad = g_new;
    res.value = accepted.phi;
    res.grad_norm = norm2(res.grad);
    res.iterations = iter + 1;
  }

  res.converged = res.grad_norm <= cfg.tol;
  return res;
}

}  // namespace cotlab
