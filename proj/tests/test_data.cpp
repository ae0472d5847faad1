#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "cotlab/dataset.hpp"
#include "cotlab/gaussian_bench.hpp"
#include "cotlab/lotka_volterra.hpp"
#include "cotlab/pca.hpp"
#include "cotlab/rng.hpp"
#include "helpers.hpp"

using namespace cotlab;
using namespace testutil;

namespace {

std::string temp_path(const char* name) { return std::string("/tmp/cotlab_test_") + name; }

double ks_to_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  double d = 0.0;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = (v[i] - lo) / (hi - lo);
    d = std::max(d, std::fabs(cdf - static_cast<double>(i + 1) / n));
    d = std::max(d, std::fabs(cdf - static_cast<double>(i) / n));
  }
  return d;
}

}  // namespace

TEST_CASE("csv parsing rejects malformed tables") {
  const std::string p = temp_path("bad.csv");
  {
    std::ofstream f(p);
    f << "a,b\n1,2\n3,oops\n";
  }
  CHECK_THROWS_AS(read_csv_table(p), DataError);
  {
    std::ofstream f(p);
    f << "a,b\n1,2\n3\n";
  }
  CHECK_THROWS_AS(read_csv_table(p), DataError);
  {
    std::ofstream f(p);
    f << "a,b\n1.5,2.5\n";
  }
  const Table t = read_csv_table(p);
  CHECK(t.headers == std::vector<std::string>{"a", "b"});
  CHECK(t.values(0, 1) == 2.5);
  std::remove(p.c_str());
}

TEST_CASE("split sizes and determinism") {
  Rng rng(1);
  const std::size_t N = 1030;
  const Tensor X = random_tensor(rng, N, 2);
  const Tensor Y = random_tensor(rng, N, 3);
  const Dataset a = make_dataset(X, Y, 0.8, 0.1, 42);
  CHECK(a.train.size() == 824);
  CHECK(a.valid.size() == 103);
  CHECK(a.test.size() == 103);

  std::vector<char> seen(N, 0);
  for (int r : a.train) seen[static_cast<std::size_t>(r)] += 1;
  for (int r : a.valid) seen[static_cast<std::size_t>(r)] += 1;
  for (int r : a.test) seen[static_cast<std::size_t>(r)] += 1;
  for (std::size_t i = 0; i < N; ++i) CHECK(seen[i] == 1);

  const Dataset b = make_dataset(X, Y, 0.8, 0.1, 42);
  CHECK(a.train == b.train);
  CHECK(a.X(0, 0) == b.X(0, 0));
  const Dataset c = make_dataset(X, Y, 0.8, 0.1, 43);
  CHECK(a.train != c.train);
}

TEST_CASE("normalization uses training stats and round trips") {
  Rng rng(2);
  const Tensor X = random_tensor(rng, 200, 3, 5.0, 9.0);
  const Tensor Y = random_tensor(rng, 200, 2, -4.0, -1.0);
  const Dataset d = make_dataset(X, Y, 0.8, 0.1, 7);

  double mean = 0.0, var = 0.0;
  for (int r : d.train) mean += d.X(static_cast<std::size_t>(r), 0);
  mean /= static_cast<double>(d.train.size());
  for (int r : d.train) {
    const double c = d.X(static_cast<std::size_t>(r), 0) - mean;
    var += c * c;
  }
  var /= static_cast<double>(d.train.size());
  CHECK(std::fabs(mean) < 1e-12);
  CHECK(std::fabs(var - 1.0) < 1e-12);

  const Tensor xb = cols_of(d.X, d.valid);
  const Tensor raw = denormalize_x(d, xb);
  for (std::size_t b = 0; b < d.valid.size(); ++b)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(raw(j, b) == doctest::Approx(X(static_cast<std::size_t>(d.valid[b]), j)).epsilon(1e-12));

  const Tensor yb = cols_of(d.Y, d.valid);
  const Tensor yraw = denormalize_y(d, yb);
  const Tensor yback = normalize_y(d, yraw);
  for (std::size_t k = 0; k < yb.size(); ++k)
    CHECK(yback.data()[k] == doctest::Approx(yb.data()[k]).epsilon(1e-12));
}

TEST_CASE("column filters drop discrete and correlated features") {
  Rng rng(3);
  const std::size_t N = 400;
  Tensor vals(N, 5);
  for (std::size_t i = 0; i < N; ++i) {
    const double a = rng.uniform(-2.0, 2.0);
    vals(i, 0) = a;                          // continuous
    vals(i, 1) = 2.0 * a;                    // r = +1 with col 0 -> dropped
    vals(i, 2) = -a + 1e-3 * rng.normal();   // r close to -1 -> kept (signed rule)
    vals(i, 3) = static_cast<double>(i % 2); // discrete -> dropped
    vals(i, 4) = rng.normal();               // continuous
  }
  Table t;
  t.headers = {"c0", "c1", "c2", "c3", "c4"};
  t.values = vals;

  const Dataset cond = preprocess_uci(t, UciTask::Conditional, 11);
  CHECK(cond.n() == 1);  // x = last surviving column (c4)
  CHECK(cond.m() == 2);  // y = (c0, c2)

  const Dataset joint = preprocess_uci(t, UciTask::Joint, 11);
  CHECK(joint.m() == 1);  // first half
  CHECK(joint.n() == 2);  // second half gets the odd column
}

TEST_CASE("dataset files round trip") {
  Rng rng(4);
  const Dataset d = make_dataset(random_tensor(rng, 37, 2), random_tensor(rng, 37, 3), 0.8, 0.1, 5);
  const std::string p = temp_path("ds");
  save_dataset(d, p);
  const Dataset e = load_dataset(p);
  CHECK(e.train == d.train);
  CHECK(e.valid == d.valid);
  CHECK(e.test == d.test);
  CHECK(e.x_std == d.x_std);
  for (std::size_t k = 0; k < d.X.size(); ++k) CHECK(e.X.data()[k] == d.X.data()[k]);
  for (std::size_t k = 0; k < d.Y.size(); ++k) CHECK(e.Y.data()[k] == d.Y.data()[k]);
  std::remove((p + ".csv").c_str());
  std::remove((p + ".json").c_str());
}

TEST_CASE("gillespie with zero rates is frozen") {
  const LvSeries s = gillespie_lv({}, 30.0, 0.2, 100000, 1);
  CHECK(s.t.size() == 151);
  CHECK(s.events == 0);
  CHECK_FALSE(s.truncated);
  CHECK(s.t.front() == 0.0);
  CHECK(s.t.back() == doctest::Approx(30.0));
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    CHECK(s.s1[i] == 50.0);
    CHECK(s.s2[i] == 100.0);
  }
}

TEST_CASE("gillespie is reproducible and populations stay non-negative") {
  LvParams p{0.01, 0.5, 1.0, 0.01};
  const LvSeries a = gillespie_lv(p, 30.0, 0.2, 100000, 99);
  const LvSeries b = gillespie_lv(p, 30.0, 0.2, 100000, 99);
  CHECK(a.events == b.events);
  CHECK(a.s1 == b.s1);
  CHECK(a.s2 == b.s2);
  CHECK(a.events > 0);
  for (double v : a.s1) CHECK(v >= 0.0);
  for (double v : a.s2) CHECK(v >= 0.0);
}

TEST_CASE("pure-death marginal matches the analytic mean") {
  const double rate = 0.05, t_end = 30.0;
  const double expect = 50.0 * std::exp(-rate * t_end);
  const double var_end = expect * (1.0 - std::exp(-rate * t_end));
  double sum = 0.0;
  const int runs = 10000;
  for (int i = 0; i < runs; ++i) {
    const LvSeries s = gillespie_lv({0.0, rate, 0.0, 0.0}, t_end, 0.2, 100000,
                                    Rng::derive(12345, static_cast<std::uint64_t>(i)));
    sum += s.s1.back();
  }
  const double mean = sum / runs;
  const double se = std::sqrt(var_end / runs);
  CHECK(std::fabs(mean - expect) < 3.0 * se + 1e-9);
}

TEST_CASE("event cap truncates but still summarizes") {
  LvParams p{0.9, 0.1, 2.0, 0.02};
  const LvSeries s = gillespie_lv(p, 30.0, 0.2, 500, 3);
  CHECK(s.truncated);
  CHECK(s.events == 500);
  CHECK(s.t.size() == 151);
  const Tensor y = lv_summary(s);
  CHECK(y.all_finite());
}

TEST_CASE("summary statistics on known series") {
  LvSeries constant;
  for (int i = 0; i < 5; ++i) {
    constant.t.push_back(0.2 * i);
    constant.s1.push_back(50.0);
    constant.s2.push_back(100.0);
  }
  const Tensor c = lv_summary(constant);
  CHECK(c(0, 0) == 50.0);
  CHECK(c(1, 0) == 100.0);
  CHECK(c(2, 0) == doctest::Approx(std::log(1e-12)));
  CHECK(c(3, 0) == doctest::Approx(std::log(1e-12)));
  for (int i = 4; i < 9; ++i) CHECK(c(i, 0) == 0.0);

  LvSeries ramp;
  for (int i = 1; i <= 5; ++i) {
    ramp.t.push_back(0.2 * (i - 1));
    ramp.s1.push_back(i);
    ramp.s2.push_back(i);
  }
  const Tensor r = lv_summary(ramp);
  CHECK(r(0, 0) == doctest::Approx(3.0));
  CHECK(r(2, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r(4, 0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r(5, 0) == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(r(6, 0) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(r(8, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    LvParams p = lv_sample_prior(rng);
    const Tensor y = lv_summary(gillespie_lv(p, 30.0, 0.2, 20000, 77 + rep));
    for (int i = 4; i < 9; ++i) {
      CHECK(y(i, 0) <= 1.0 + 1e-12);
      CHECK(y(i, 0) >= -1.0 - 1e-12);
    }
  }
}

TEST_CASE("log-rate prior is uniform on its box") {
  Rng rng(13);
  std::vector<double> c0;
  for (int i = 0; i < 10000; ++i) {
    const LvParams p = lv_sample_prior(rng);
    c0.push_back(std::log(p.x1));
    CHECK(std::log(p.x2) >= -5.0);
    CHECK(std::log(p.x2) <= 2.0);
  }
  CHECK(ks_to_uniform(c0, -5.0, 2.0) < 0.02);
  // the reference rate vector sits inside the prior box
  CHECK(std::log(0.01) > -5.0);
  CHECK(std::log(0.01) < 2.0);
}

TEST_CASE("simulated dataset is deterministic") {
  const LvSimConfig quick{8.0, 0.5, 20000};
  const Dataset a = build_lv_dataset(12, 21, quick);
  const Dataset b = build_lv_dataset(12, 21, quick);
  CHECK(a.X.storage() == b.X.storage());
  CHECK(a.Y.storage() == b.Y.storage());
  CHECK(a.train.size() == 11);
  CHECK(a.valid.size() == 1);
  CHECK(a.X.all_finite());
  CHECK(a.Y.all_finite());
}

TEST_CASE("conditional gaussian closed form") {
  GaussianBenchSpec s;
  s.n = 1;
  s.m = 1;
  s.mu = Tensor::col({0.0, 0.0});
  s.sigma = Tensor(2, 2, {2.0, 1.0, 1.0, 1.0});
  const CondGaussian c = analytic_conditional(s, Tensor::scalar(1.0));
  CHECK(c.mean(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.cov(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.sqrt_cov(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  GaussianBenchSpec ind = s;
  ind.sigma = Tensor(2, 2, {2.0, 0.0, 0.0, 1.0});
  const CondGaussian ci = analytic_conditional(ind, Tensor::scalar(5.0));
  CHECK(ci.mean(0, 0) == doctest::Approx(0.0));
  CHECK(ci.cov(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("joint draws reproduce the benchmark moments") {
  const GaussianBenchSpec s = default_gauss_bench();
  const std::size_t N = 100000;
  const Dataset d = gaussian_bench_dataset(s, N, 9);

  // de-normalize and compare the joint sample covariance with sigma
  const std::size_t dim = 3;
  std::vector<double> mean(dim, 0.0);
  std::vector<std::vector<double>> rows(N, std::vector<double>(dim));
  std::vector<int> all(N);
  for (std::size_t i = 0; i < N; ++i) all[i] = static_cast<int>(i);
  const Tensor xr = denormalize_x(d, cols_of(d.X, all));
  const Tensor yr = denormalize_y(d, cols_of(d.Y, all));
  for (std::size_t i = 0; i < N; ++i) {
    rows[i][0] = xr(0, i);
    rows[i][1] = xr(1, i);
    rows[i][2] = yr(0, i);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += rows[i][j];
  }
  for (auto& v : mean) v /= static_cast<double>(N);
  Tensor cov(dim, dim);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b)
        cov(a, b) += (rows[i][a] - mean[a]) * (rows[i][b] - mean[b]);
  double num = 0.0, den = 0.0;
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = 0; b < dim; ++b) {
      cov(a, b) /= static_cast<double>(N);
      num += (cov(a, b) - s.sigma(a, b)) * (cov(a, b) - s.sigma(a, b));
      den += s.sigma(a, b) * s.sigma(a, b);
    }
  CHECK(std::sqrt(num / den) < 0.05);
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(std::fabs(mean[j] - s.mu(j, 0)) < 0.02);
}

TEST_CASE("brenier map pushforward matches the conditional") {
  const GaussianBenchSpec s = default_gauss_bench();
  const Tensor y = Tensor::scalar(0.8);
  const CondGaussian c = analytic_conditional(s, y);
  Rng rng(17);
  const std::size_t N = 100000;
  std::vector<double> m(2, 0.0);
  Tensor cov(2, 2);
  std::vector<std::vector<double>> pts(N, std::vector<double>(2));
  for (std::size_t i = 0; i < N; ++i) {
    const double z0 = rng.normal(), z1 = rng.normal();
    pts[i][0] = c.mean(0, 0) + c.sqrt_cov(0, 0) * z0 + c.sqrt_cov(0, 1) * z1;
    pts[i][1] = c.mean(1, 0) + c.sqrt_cov(1, 0) * z0 + c.sqrt_cov(1, 1) * z1;
    m[0] += pts[i][0];
    m[1] += pts[i][1];
  }
  m[0] /= static_cast<double>(N);
  m[1] /= static_cast<double>(N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) cov(a, b) += (pts[i][a] - m[a]) * (pts[i][b] - m[b]);
  for (std::size_t a = 0; a < 2; ++a) {
    CHECK(std::fabs(m[a] - c.mean(a, 0)) < 0.02);
    for (std::size_t b = 0; b < 2; ++b)
      CHECK(std::fabs(cov(a, b) / static_cast<double>(N) - c.cov(a, b)) < 0.03);
  }
}

TEST_CASE("normalized conditional is consistent with the raw one") {
  const GaussianBenchSpec s = default_gauss_bench();
  const Dataset d = gaussian_bench_dataset(s, 5000, 23);
  const Tensor y_norm = Tensor::scalar(0.4);
  const CondGaussian cn = analytic_conditional_normalized(s, d, y_norm);
  const CondGaussian cr = analytic_conditional(s, denormalize_y(d, y_norm));
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(cr.mean(i, 0) == doctest::Approx(cn.mean(i, 0) * d.x_std[i] + d.x_mean[i]).epsilon(1e-10));
  // entropy changes by the log of the scaling
  const double want = gaussian_entropy(cr.cov) - std::log(d.x_std[0]) - std::log(d.x_std[1]);
  CHECK(gaussian_entropy(cn.cov) == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("spectral utilities") {
  Rng rng(29);
  const Tensor s = random_spd(rng, 4, 1.0);
  const Tensor r = spd_sqrt(s);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::fabs(r(i, j) - r(j, i)) < 1e-10);
      double rr = 0.0;
      for (std::size_t k = 0; k < 4; ++k) rr += r(i, k) * r(k, j);
      CHECK(rr == doctest::Approx(s(i, j)).epsilon(1e-10));
    }

  Tensor diag = Tensor::zeros(3, 3);
  diag(0, 0) = 3.0;
  diag(1, 1) = 1.0;
  diag(2, 2) = 2.0;
  const auto ev = sym_eigenvalues(diag);
  CHECK(ev[0] == doctest::Approx(1.0));
  CHECK(ev[1] == doctest::Approx(2.0));
  CHECK(ev[2] == doctest::Approx(3.0));
}

TEST_CASE("principal components") {
  Rng rng(31);
  // one-direction data explains everything with k=1
  Tensor v = random_tensor(rng, 1, 4);
  Tensor data(300, 4);
  for (std::size_t i = 0; i < 300; ++i) {
    const double t = rng.normal();
    for (std::size_t j = 0; j < 4; ++j) data(i, j) = t * v(0, j);
  }
  const PcaResult r1 = pca_project(data, 1);
  CHECK(r1.explained_ratio == doctest::Approx(1.0).epsilon(1e-10));

  const Tensor noisy = random_tensor(rng, 200, 5);
  const PcaResult r3 = pca_project(noisy, 3);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 5; ++k) dot += r3.basis(k, a) * r3.basis(k, b);
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
    }
  double top = 0.0, all = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    all += r3.eigenvalues[i];
    if (i < 3) top += r3.eigenvalues[i];
  }
  CHECK(r3.explained_ratio == doctest::Approx(top / all).epsilon(1e-10));
  CHECK_THROWS_AS(pca_project(noisy, 6), std::invalid_argument);
}
