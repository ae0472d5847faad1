#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cotlab/gaussian_bench.hpp"
#include "cotlab/metrics.hpp"
#include "cotlab/pca.hpp"
#include "cotlab/rng.hpp"
#include "helpers.hpp"

using namespace cotlab;
using namespace testutil;

TEST_CASE("mmd vanishes on identical sets and matches the two-point form") {
  Rng rng(1);
  const Tensor a = random_tensor(rng, 3, 40);
  CHECK(mmd(a, a) <= 1e-12);

  for (int rep = 0; rep < 20; ++rep) {
    const Tensor p = random_tensor(rng, 4, 1);
    const Tensor q = random_tensor(rng, 4, 1);
    double d2 = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double d = p(k, 0) - q(k, 0);
      d2 += d * d;
    }
    const double want = 2.0 - 2.0 * std::exp(-0.5 * d2);
    CHECK(mmd(p, q) == doctest::Approx(want).epsilon(1e-12));
    // sharper kernel through the record-returning form
    const MmdResult r = mmd_result(p, q, 1.0);
    CHECK(r.value == doctest::Approx(2.0 - 2.0 * std::exp(-d2)).epsilon(1e-12));
    CHECK(r.gamma == 1.0);
    CHECK(r.na == 1);
    CHECK(r.nb == 1);
    CHECK(mmd(p, q) == doctest::Approx(mmd(q, p)).epsilon(1e-12));
  }
}

TEST_CASE("mmd ignores point order and reacts to shifts") {
  Rng rng(2);
  const Tensor a = random_tensor(rng, 2, 30);
  Tensor b = random_tensor(rng, 2, 25);
  const double base = mmd(a, b);
  Tensor shuffled(2, 25);
  std::vector<std::size_t> order(25);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = 24; i > 0; --i) std::swap(order[i], order[rng.uniform_index(i + 1)]);
  for (std::size_t j = 0; j < 25; ++j)
    for (std::size_t i = 0; i < 2; ++i) shuffled(i, j) = b(i, order[j]);
  CHECK(mmd(a, shuffled) == doctest::Approx(base).epsilon(1e-12));

  // same distribution stays small, growing mean separation grows the statistic
  auto gauss = [&](std::size_t n, double shift) {
    Tensor t(3, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < 3; ++i) t(i, j) = rng.normal() + shift;
    return t;
  };
  const Tensor x0 = gauss(500, 0.0);
  const Tensor x1 = gauss(500, 0.0);
  const double same = mmd(x0, x1);
  CHECK(same < 5e-2);
  double prev = same;
  for (double shift : {0.5, 1.0, 2.0}) {
    const double cur = mmd(x0, gauss(500, shift));
    CHECK(cur > prev);
    prev = cur;
  }
  CHECK_THROWS(mmd(random_tensor(rng, 2, 3), random_tensor(rng, 3, 3)));
}

TEST_CASE("moment helpers") {
  Tensor pts(2, 2);
  pts(0, 0) = 1.0;
  pts(1, 0) = 2.0;
  pts(0, 1) = 3.0;
  pts(1, 1) = 4.0;
  const Tensor m = sample_mean(pts);
  CHECK(m(0, 0) == 2.0);
  CHECK(m(1, 0) == 3.0);
  const Tensor c = sample_cov(pts);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(c(i, j) == 1.0);

  Rng rng(3);
  const Tensor a = random_tensor(rng, 3, 3);
  CHECK(frob_rel_err(a, a) == 0.0);
  Tensor b = a;
  b.data()[0] += 0.5;
  double den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) den += a.data()[k] * a.data()[k];
  CHECK(frob_rel_err(b, a) == doctest::Approx(0.5 / std::sqrt(den)).epsilon(1e-12));
  CHECK(max_abs_diff(b, a) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("ks distance against the uniform rank law") {
  const int L = 4;
  // two copies of every possible rank sit exactly on the reference cdf
  std::vector<int> exact;
  for (int r = 0; r <= L; ++r) {
    exact.push_back(r);
    exact.push_back(r);
  }
  CHECK(ks_uniformity(exact, L) == doctest::Approx(0.0).epsilon(1e-15));

  // a point mass at either end is maximally far
  CHECK(ks_uniformity(std::vector<int>(50, L), L) ==
        doctest::Approx(static_cast<double>(L) / (L + 1)).epsilon(1e-15));
  CHECK(ks_uniformity(std::vector<int>(50, 0), L) ==
        doctest::Approx(static_cast<double>(L) / (L + 1)).epsilon(1e-15));

  Rng rng(4);
  std::vector<int> u;
  for (int i = 0; i < 20000; ++i) u.push_back(static_cast<int>(rng.uniform_index(101)));
  CHECK(ks_uniformity(u, 100) < 0.02);

  CHECK_THROWS(ks_uniformity(std::vector<int>{5}, 4));
  CHECK_THROWS(ks_uniformity(std::vector<int>{}, 4));
}

namespace {

// posterior sampler that is exact for the gaussian benchmark, with an optional
// dispersion error to make calibration fail on purpose
struct BenchSampler final : ConditionalSampler {
  GaussianBenchSpec spec;
  const Dataset* data;
  double widen = 1.0;

  std::size_t xdim() const override { return 2; }
  std::size_t ydim() const override { return 1; }
  Tensor sample(const Tensor& y, std::size_t count, std::uint64_t seed,
                std::vector<char>* converged) const override {
    if (converged) converged->assign(count, 1);
    const CondGaussian c = analytic_conditional_normalized(spec, *data, y);
    Rng rng(seed);
    Tensor out(2, count);
    for (std::size_t j = 0; j < count; ++j) {
      const double z0 = rng.normal(), z1 = rng.normal();
      out(0, j) = c.mean(0, 0) + widen * (c.sqrt_cov(0, 0) * z0 + c.sqrt_cov(0, 1) * z1);
      out(1, j) = c.mean(1, 0) + widen * (c.sqrt_cov(1, 0) * z0 + c.sqrt_cov(1, 1) * z1);
    }
    return out;
  }
};

}  // namespace

TEST_CASE("calibration ranks are uniform exactly when the sampler is right") {
  const GaussianBenchSpec spec = default_gauss_bench();
  const Dataset d = gaussian_bench_dataset(spec, 4000, 5);
  const Tensor root = spd_sqrt(spec.sigma);

  auto draw_joint = [&](std::uint64_t seed) {
    Rng rng(seed);
    Tensor xi(3, 1);
    for (std::size_t i = 0; i < 3; ++i) xi(i, 0) = rng.normal();
    Tensor x(2, 1), y(1, 1);
    for (std::size_t i = 0; i < 3; ++i) {
      double v = spec.mu(i, 0);
      for (std::size_t k = 0; k < 3; ++k) v += root(i, k) * xi(k, 0);
      if (i < 2)
        x(i, 0) = (v - d.x_mean[i]) / d.x_std[i];
      else
        y(0, 0) = (v - d.y_mean[0]) / d.y_std[0];
    }
    return std::make_pair(x, y);
  };

  BenchSampler good;
  good.spec = spec;
  good.data = &d;
  SbcConfig cfg;
  cfg.seed = 11;
  const SbcResult res = sbc_ranks(draw_joint, good, cfg);
  REQUIRE(res.ranks.size() == 2);
  CHECK(res.trial_converged == std::vector<char>(200, 1));
  for (const auto& r : res.ranks) {
    REQUIRE(r.size() == 200);
    CHECK(ks_uniformity(r, cfg.draws) < 0.09);
  }

  // repeated run is bit-identical
  const SbcResult again = sbc_ranks(draw_joint, good, cfg);
  CHECK(again.ranks == res.ranks);

  BenchSampler wide = good;
  wide.widen = 3.0;
  for (const auto& r : sbc_ranks(draw_joint, wide, cfg).ranks)
    CHECK(ks_uniformity(r, cfg.draws) > 0.2);

  BenchSampler narrow = good;
  narrow.widen = 0.3;
  for (const auto& r : sbc_ranks(draw_joint, narrow, cfg).ranks)
    CHECK(ks_uniformity(r, cfg.draws) > 0.2);
}
