#include "cotlab/lotka_volterra.hpp"

#include <cmath>
#include <stdexcept>

namespace cotlab {

namespace {

constexpr double kVarFloor = 1e-12;

double autocorr(const std::vector<double>& s, double mean, double denom, std::size_t lag) {
  double num = 0.0;
  for (std::size_t i = 0; i + lag < s.size(); ++i) num += (s[i] - mean) * (s[i + lag] - mean);
  return num / denom;
}

}  // namespace

LvSeries gillespie_lv(const LvParams& p, double horizon, double record_dt,
                      std::uint64_t max_events, std::uint64_t seed) {
  if (p.x1 < 0 || p.x2 < 0 || p.x3 < 0 || p.x4 < 0) throw std::invalid_argument("negative rate");
  if (horizon <= 0 || record_dt <= 0) throw std::invalid_argument("bad horizon or grid");

  LvSeries out;
  const auto points = static_cast<std::size_t>(std::llround(horizon / record_dt)) + 1;
  out.t.reserve(points);
  out.s1.reserve(points);
  out.s2.reserve(points);

  Rng rng(seed);
  double s1 = 50.0, s2 = 100.0;
  double t = 0.0;
  std::size_t grid = 0;

  auto record_until = [&](double tnow) {
    while (grid < points && static_cast<double>(grid) * record_dt <= tnow + 1e-12) {
      out.t.push_back(static_cast<double>(grid) * record_dt);
      out.s1.push_back(s1);
      out.s2.push_back(s2);
      ++grid;
    }
  };

  while (grid < points) {
    const double a1 = p.x1 * s1 * s2;
    const double a2 = p.x2 * s1;
    const double a3 = p.x3 * s2;
    const double a4 = p.x4 * s1 * s2;
    const double a0 = a1 + a2 + a3 + a4;
    if (a0 <= 0.0 || out.events >= max_events) {
      out.truncated = out.events >= max_events;
      record_until(horizon);  // hold the final state on the rest of the grid
      break;
    }
    const double tau = rng.exponential() / a0;
    // grid points passed before the event keep the pre-event state
    record_until(std::min(t + tau, horizon));
    t += tau;
    if (t > horizon) break;
    const double u = rng.uniform() * a0;
    if (u < a1)
      s1 += 1.0;
    else if (u < a1 + a2)
      s1 -= 1.0;
    else if (u < a1 + a2 + a3)
      s2 += 1.0;
    else
      s2 -= 1.0;
    ++out.events;
  }
  record_until(horizon);
  return out;
}

Tensor lv_summary(const LvSeries& s) {
  const std::size_t T = s.s1.size();
  if (T < 3) throw std::invalid_argument("series too short to summarize");
  const double dn = static_cast<double>(T);

  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    m1 += s.s1[i];
    m2 += s.s2[i];
  }
  m1 /= dn;
  m2 /= dn;

  double ss1 = 0.0, ss2 = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < T; ++i) {
    ss1 += (s.s1[i] - m1) * (s.s1[i] - m1);
    ss2 += (s.s2[i] - m2) * (s.s2[i] - m2);
    cross += (s.s1[i] - m1) * (s.s2[i] - m2);
  }
  const double var1 = std::max(ss1 / dn, kVarFloor);
  const double var2 = std::max(ss2 / dn, kVarFloor);
  const double d1 = std::max(ss1, kVarFloor);
  const double d2 = std::max(ss2, kVarFloor);

  Tensor out(9, 1);
  out(0, 0) = m1;
  out(1, 0) = m2;
  out(2, 0) = std::log(var1);
  out(3, 0) = std::log(var2);
  out(4, 0) = ss1 > 0.0 ? autocorr(s.s1, m1, d1, 1) : 0.0;
  out(5, 0) = ss1 > 0.0 ? autocorr(s.s1, m1, d1, 2) : 0.0;
  out(6, 0) = ss2 > 0.0 ? autocorr(s.s2, m2, d2, 1) : 0.0;
  out(7, 0) = ss2 > 0.0 ? autocorr(s.s2, m2, d2, 2) : 0.0;
  out(8, 0) = (ss1 > 0.0 && ss2 > 0.0) ? cross / std::sqrt(d1 * d2) : 0.0;
  return out;
}

LvParams lv_sample_prior(Rng& rng) {
  LvParams p;
  p.x1 = std::exp(rng.uniform(-5.0, 2.0));
  p.x2 = std::exp(rng.uniform(-5.0, 2.0));
  p.x3 = std::exp(rng.uniform(-5.0, 2.0));
  p.x4 = std::exp(rng.uniform(-5.0, 2.0));
  return p;
}

Dataset build_lv_dataset(std::size_t N, std::uint64_t seed, const LvSimConfig& sim) {
  if (N < 2) throw std::invalid_argument("need at least two draws");
  Tensor X(N, 4), Y(N, 9);
  for (std::size_t i = 0; i < N; ++i) {
    Rng draw(Rng::derive(seed, i));
    const LvParams p = lv_sample_prior(draw);
    X(i, 0) = std::log(p.x1);
    X(i, 1) = std::log(p.x2);
    X(i, 2) = std::log(p.x3);
    X(i, 3) = std::log(p.x4);
    const LvSeries series =
        gillespie_lv(p, sim.horizon, sim.record_dt, sim.max_events, Rng::derive(seed, (1ull << 32) + i));
    const Tensor y = lv_summary(series);
    for (std::size_t j = 0; j < 9; ++j) Y(i, j) = y(j, 0);
  }
  return make_dataset(X, Y, 0.9, 0.1, Rng::derive(seed, (1ull << 33)));
}

Tensor lv_observe(const LvParams& p, std::uint64_t seed, const LvSimConfig& sim) {
  return lv_summary(gillespie_lv(p, sim.horizon, sim.record_dt, sim.max_events, seed));
}

}  // namespace cotlab
