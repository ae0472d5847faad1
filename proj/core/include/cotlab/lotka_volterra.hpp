#pragma once

#include <cstdint>
#include <vector>

#include "cotlab/dataset.hpp"
#include "cotlab/rng.hpp"
#include "cotlab/tensor.hpp"

namespace cotlab {

// Stochastic predator-prey system with four reactions: predator birth at rate
// x1*S1*S2, predator death at x2*S1, prey birth at x3*S2, prey death at
// x4*S1*S2, simulated exactly from S(0) = (50,100).

struct LvParams {
  double x1 = 0.0, x2 = 0.0, x3 = 0.0, x4 = 0.0;
};

struct LvSeries {
  std::vector<double> t;   // recording grid
  std::vector<double> s1;  // predators
  std::vector<double> s2;  // prey
  bool truncated = false;  // event cap hit; state held constant afterwards
  std::uint64_t events = 0;
};

LvSeries gillespie_lv(const LvParams& p, double horizon, double record_dt,
                      std::uint64_t max_events, std::uint64_t seed);

// Nine summary statistics in this order: mean(S1), mean(S2), log-var(S1),
// log-var(S2), autocorr(S1,lag1), autocorr(S1,lag2), autocorr(S2,lag1),
// autocorr(S2,lag2), cross-correlation. Population (1/N) variance; variances
// and correlation denominators floored at 1e-12 so degenerate runs summarize.
Tensor lv_summary(const LvSeries& s);

// log-rates uniform on (-5, 2) per component
LvParams lv_sample_prior(Rng& rng);

struct LvSimConfig {
  double horizon = 30.0;
  double record_dt = 0.2;
  std::uint64_t max_events = 100000;
};

// X rows hold natural-log rates, Y rows the 9 summaries; 9:1 train/valid
// split, normalized with training stats. Per-draw generator streams derive
// from (seed, draw index) so the set is reproducible and order-independent.
Dataset build_lv_dataset(std::size_t N, std::uint64_t seed, const LvSimConfig& sim = {});

// summaries for one known rate vector, used as observed y* in inference runs
Tensor lv_observe(const LvParams& p, std::uint64_t seed, const LvSimConfig& sim = {});

}  // namespace cotlab
