#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cotlab/dataset.hpp"
#include "cotlab/graph.hpp"
#include "cotlab/model.hpp"
#include "cotlab/picnn.hpp"
#include "cotlab/run_record.hpp"

namespace cotlab {

struct PcpTrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t depth = 2;          // potential layers K
  std::size_t width = 32;         // feature width w
  std::size_t context_width = 0;  // u; 0 picks the default rule
  std::uint64_t seed = 1;
  std::size_t valid_interval = 0;  // optimizer steps per validation check; 0 = once per epoch
  int patience = 10;               // validation checks without improvement; <= 0 disables
};

struct SampleConfig {
  double tolerance = 1e-6;  // gradient-norm stopping threshold for inversion
  int max_iterations = 200;
  int history = 10;  // quasi-Newton memory
};

// Per-sample map objective: mean over the batch of
//   1/2 ||grad_x potential||^2 - log det hess_x potential.
// The reference-density constant is excluded here; reported NLL adds
// n/2 ln(2pi). Columns of x and y are samples in normalized coordinates.
double nll_loss(const StrictPotentialParams& p, const Tensor& x, const Tensor& y);
// value plus parameter gradients aligned with param_refs(p)
double nll_loss_grad(StrictPotentialParams& p, const Tensor& x, const Tensor& y,
                     std::vector<Tensor>& grads);
// mean reported NLL over the columns (constant included)
double pcp_test_nll(const StrictPotentialParams& p, const Tensor& x, const Tensor& y);

// marginal counterpart on the context potential
double ficnn_nll_loss(const FicnnParams& p, const Tensor& y);
// sum of the conditional and marginal objectives (block-triangular factorization)
double joint_nll(StrictPotentialParams& pot_x, FicnnParams& pot_y, const Tensor& x,
                 const Tensor& y);
double joint_nll_grad(StrictPotentialParams& pot_x, FicnnParams& pot_y, const Tensor& x,
                      const Tensor& y, std::vector<Tensor>& grads_x, std::vector<Tensor>& grads_y);
double joint_test_nll(const StrictPotentialParams& pot_x, const FicnnParams& pot_y,
                      const Tensor& x, const Tensor& y);

struct PcpTrainResult {
  StrictPotentialParams params;  // best-validation weights
  RunRecord record;
  double best_valid_nll = 0.0;  // reported convention
};

struct JointTrainResult {
  StrictPotentialParams pot_x;
  FicnnParams pot_y;
  RunRecord record;
  double best_valid_nll = 0.0;
};

// Adam (0.9, 0.999, 1e-8) on nll_loss over shuffled minibatches with a
// non-negativity projection after every step. Validation NLL is checked every
// valid_interval steps; the best-validation weights are returned. A non-finite
// loss aborts with the last good checkpoint and marks the record diverged.
// Zero epochs returns the initialization untouched.
PcpTrainResult train(const PcpTrainConfig& cfg, const Dataset& data);
JointTrainResult train_joint(const PcpTrainConfig& cfg, const Dataset& data);

struct InvertResult {
  Tensor x;                     // (n, B)
  std::vector<char> converged;  // per column
  std::vector<double> grad_norm;
};

// Solves min_v potential(v, y) - z^T v per column (the conjugate gradient map
// z -> x). Non-converged columns are flagged, never dropped.
InvertResult invert(const StrictPotentialParams& p, const Tensor& z, const Tensor& y,
                    const SampleConfig& cfg = {});

// Same conjugate solve over a context potential H: grad H(v) = z per column,
// warm-started at z. The result's x field holds the recovered draws; used to
// push reference samples through a marginal block.
InvertResult ficnn_invert(const FicnnParams& p, const Tensor& z, const SampleConfig& cfg = {});

struct PosteriorSamples {
  Tensor x;  // (n, N) normalized coordinates
  std::vector<char> converged;
  std::function<Tensor(const Tensor&)> denormalize;  // optional hook
  Tensor raw() const { return denormalize ? denormalize(x) : x; }
};

// Draws z ~ N(0, I_n) and inverts each column at the given y (m, 1).
PosteriorSamples sample_posterior(const StrictPotentialParams& p, const Tensor& y, std::size_t count,
                                  const SampleConfig& cfg, std::uint64_t seed,
                                  std::function<Tensor(const Tensor&)> denormalize = {});

struct MapPointResult {
  Tensor x;  // (n, 1)
  bool converged = false;
};

// Ascends the model log-density -1/2 ||grad potential||^2 + log det hess from x0.
MapPointResult map_point(const StrictPotentialParams& p, const Tensor& y, const Tensor& x0,
                         const SampleConfig& cfg = {});
// same, starting from the mean of `init_draws` posterior samples
MapPointResult map_point(const StrictPotentialParams& p, const Tensor& y, const SampleConfig& cfg,
                         std::uint64_t seed, std::size_t init_draws = 256);

// metrics adapter
class PcpSampler final : public ConditionalSampler {
 public:
  PcpSampler(const StrictPotentialParams& p, SampleConfig cfg) : p_(&p), cfg_(cfg) {}
  std::size_t xdim() const override { return static_cast<std::size_t>(p_->picnn.dims.n); }
  std::size_t ydim() const override { return static_cast<std::size_t>(p_->picnn.dims.m); }
  Tensor sample(const Tensor& y, std::size_t count, std::uint64_t seed,
                std::vector<char>* converged = nullptr) const override;

 private:
  const StrictPotentialParams* p_;
  SampleConfig cfg_;
};

}  // namespace cotlab
