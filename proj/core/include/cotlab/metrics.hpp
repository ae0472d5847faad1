#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "cotlab/model.hpp"
#include "cotlab/tensor.hpp"

namespace cotlab {

struct MmdResult {
  double value = 0.0;
  std::size_t na = 0;
  std::size_t nb = 0;
  double gamma = 0.5;  // kernel exp(-gamma ||a-b||^2)
};

// Squared maximum mean discrepancy between two point sets (columns are
// points), kernel exp(-gamma ||a-b||^2), biased V-statistic. Zero for
// identical sets; for two single points at the default gamma it is
// 2 - 2 exp(-||p-q||^2/2).
MmdResult mmd_result(const Tensor& a, const Tensor& b, double gamma = 0.5);
double mmd(const Tensor& a, const Tensor& b, double gamma = 0.5);

Tensor sample_mean(const Tensor& cols);
// population covariance of the columns
Tensor sample_cov(const Tensor& cols);
// ||a - b||_F / ||b||_F
double frob_rel_err(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// Kolmogorov-Smirnov distance between the empirical distribution of ranks in
// {0..L} and the discrete uniform with cdf (r+1)/(L+1).
double ks_uniformity(const std::vector<int>& ranks, int L);

struct SbcConfig {
  int trials = 200;        // rank histograms accumulated
  int draws = 100;         // posterior samples per trial, ranks lie in 0..draws
  std::uint64_t seed = 1;
};

struct SbcResult {
  std::vector<std::vector<int>> ranks;  // [dimension][trial]
  std::vector<char> trial_converged;    // sampler convergence per trial
  int draws = 0;
};

// Simulation-based calibration. draw_joint(seed) produces one (x, y) pair from
// the data-generating process in the sampler's coordinates; for each trial the
// rank of the true x among the sampler's draws is recorded per coordinate.
// A correctly calibrated sampler gives uniform ranks on {0..draws}.
SbcResult sbc_ranks(
    const std::function<std::pair<Tensor, Tensor>(std::uint64_t)>& draw_joint,
    const ConditionalSampler& model, const SbcConfig& cfg = {});

}  // namespace cotlab
