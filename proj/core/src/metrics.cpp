#include "cotlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cotlab/rng.hpp"

namespace cotlab {

namespace {

double kernel_sum(const Tensor& a, const Tensor& b, double gamma) {
  const std::size_t d = a.rows();
  double s = 0.0;
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double q = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a(k, i) - b(k, j);
        q += diff * diff;
      }
      s += std::exp(-gamma * q);
    }
  return s;
}

}  // namespace

MmdResult mmd_result(const Tensor& a, const Tensor& b, double gamma) {
  if (a.rows() != b.rows()) throw std::invalid_argument("mmd: dimension mismatch");
  if (a.cols() == 0 || b.cols() == 0) throw std::invalid_argument("mmd: empty point set");
  if (gamma <= 0.0) throw std::invalid_argument("mmd: gamma must be positive");
  const double na = static_cast<double>(a.cols());
  const double nb = static_cast<double>(b.cols());
  MmdResult r;
  r.na = a.cols();
  r.nb = b.cols();
  r.gamma = gamma;
  r.value = kernel_sum(a, a, gamma) / (na * na) + kernel_sum(b, b, gamma) / (nb * nb) -
            2.0 * kernel_sum(a, b, gamma) / (na * nb);
  return r;
}

double mmd(const Tensor& a, const Tensor& b, double gamma) {
  return mmd_result(a, b, gamma).value;
}

Tensor sample_mean(const Tensor& cols) {
  if (cols.cols() == 0) throw std::invalid_argument("sample_mean: no columns");
  Tensor m(cols.rows(), 1);
  for (std::size_t i = 0; i < cols.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols.cols(); ++j) s += cols(i, j);
    m(i, 0) = s / static_cast<double>(cols.cols());
  }
  return m;
}

Tensor sample_cov(const Tensor& cols) {
  const Tensor m = sample_mean(cols);
  const std::size_t d = cols.rows();
  Tensor c(d, d);
  for (std::size_t j = 0; j < cols.cols(); ++j)
    for (std::size_t p = 0; p < d; ++p) {
      const double dp = cols(p, j) - m(p, 0);
      for (std::size_t q = 0; q <= p; ++q) c(p, q) += dp * (cols(q, j) - m(q, 0));
    }
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q <= p; ++q) {
      c(p, q) /= static_cast<double>(cols.cols());
      c(q, p) = c(p, q);
    }
  return c;
}

double frob_rel_err(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("frob_rel_err: shape mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a.data()[k] - b.data()[k];
    num += d * d;
    den += b.data()[k] * b.data()[k];
  }
  if (den == 0.0) throw std::invalid_argument("frob_rel_err: zero reference");
  return std::sqrt(num / den);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max(m, std::fabs(a.data()[k] - b.data()[k]));
  return m;
}

double ks_uniformity(const std::vector<int>& ranks, int L) {
  if (ranks.empty()) throw std::invalid_argument("ks_uniformity: no ranks");
  if (L < 1) throw std::invalid_argument("ks_uniformity: L must be positive");
  std::vector<int> counts(static_cast<std::size_t>(L) + 1, 0);
  for (int r : ranks) {
    if (r < 0 || r > L) throw std::invalid_argument("ks_uniformity: rank out of range");
    counts[static_cast<std::size_t>(r)] += 1;
  }
  const double M = static_cast<double>(ranks.size());
  double ecdf = 0.0, d = 0.0;
  for (int r = 0; r <= L; ++r) {
    ecdf += static_cast<double>(counts[static_cast<std::size_t>(r)]) / M;
    const double cdf = static_cast<double>(r + 1) / static_cast<double>(L + 1);
    d = std::max(d, std::fabs(ecdf - cdf));
  }
  return d;
}

SbcResult sbc_ranks(
    const std::function<std::pair<Tensor, Tensor>(std::uint64_t)>& draw_joint,
    const ConditionalSampler& model, const SbcConfig& cfg) {
  if (cfg.trials < 1 || cfg.draws < 1) throw std::invalid_argument("sbc_ranks: bad config");
  const std::size_t n = model.xdim();
  SbcResult out;
  out.draws = cfg.draws;
  out.ranks.resize(n);
  for (auto& v : out.ranks) v.reserve(static_cast<std::size_t>(cfg.trials));
  out.trial_converged.reserve(static_cast<std::size_t>(cfg.trials));
  for (int t = 0; t < cfg.trials; ++t) {
    const auto [x_true, y] = draw_joint(Rng::derive(cfg.seed, static_cast<std::uint64_t>(t)));
    if (x_true.rows() != n || y.rows() != model.ydim())
      throw std::invalid_argument("sbc_ranks: draw_joint shape mismatch");
    std::vector<char> flags;
    const Tensor draws =
        model.sample(y, static_cast<std::size_t>(cfg.draws),
                     Rng::derive(cfg.seed, (1ull << 32) + static_cast<std::uint64_t>(t)), &flags);
    bool ok = true;
    for (char f : flags) ok = ok && f;
    out.trial_converged.push_back(ok ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      int r = 0;
      for (std::size_t l = 0; l < draws.cols(); ++l)
        if (draws(i, l) < x_true(i, 0)) r += 1;
      out.ranks[i].push_back(r);
    }
  }
  return out;
}

}  // namespace cotlab
