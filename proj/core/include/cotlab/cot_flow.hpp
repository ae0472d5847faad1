#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cotlab/dataset.hpp"
#include "cotlab/model.hpp"
#include "cotlab/picnn.hpp"
#include "cotlab/run_record.hpp"
#include "cotlab/tensor.hpp"

namespace cotlab {

// Dynamic transport map: the velocity field is the scaled x-gradient of a
// scalar value function Phi(t, x; y), integrated with fixed-step RK4 in both
// directions. Phi is a two-layer residual network plus a rank-limited
// quadratic form in q = (t, x; y).

// Optional feature map applied to y before it enters Phi: a 3-layer network
// out = W2 tanh(W1 tanh(W0 y + c0) + c1) + c2, trained jointly with Phi.
// Disabled (all shapes empty) means y passes through untouched.
struct EmbedParams {
  Tensor W0, c0;  // (w_y, m), (w_y, 1)
  Tensor W1, c1;  // (w_y, w_y), (w_y, 1)
  Tensor W2, c2;  // (w_yout, w_y), (w_yout, 1)
  bool enabled() const { return W0.size() > 0; }
  int out_dim(int m) const { return enabled() ? static_cast<int>(W2.rows()) : m; }
};

struct PhiParams {
  int n = 0;  // sample dimension
  int m = 0;  // raw context dimension
  double alpha1 = 10.0;  // velocity scale the flow was trained with

  // residual network: h0 = s(A0 q + b0), h1 = h0 + s(A1 h0 + b1),
  // NN = a h1, with the smooth even activation s(z) = log(exp(z) + exp(-z)).
  // These five blocks live in the box [-1.5, 1.5].
  Tensor a;       // (1, w)
  Tensor A0, b0;  // (w, d), (w, 1) with d = n + embed-out + 1
  Tensor A1, b1;  // (w, w), (w, 1)

  // quadratic form 1/2 q' (A A') q + b' q + c, unconstrained
  Tensor A;  // (d, r), r = min(10, d)
  Tensor b;  // (d, 1)
  Tensor c;  // (1, 1)

  EmbedParams embed;

  int context_dim() const { return embed.out_dim(m); }
  int qdim() const { return n + context_dim() + 1; }  // q = (t, x; y)
};

std::vector<ParamRef> param_refs(PhiParams& p, const std::string& prefix = "");
// clamps the five residual-net blocks to [-bound, bound]; the quadratic and
// embedding weights are untouched
void clamp_box(PhiParams& p, double bound = 1.5);

// fan-scaled uniform init, biases zero, c zero; alpha1 left at its default
PhiParams init_phi(int n, int m, int width, std::uint64_t seed);
// same with the context embedding enabled (w_yout replaces m inside q)
PhiParams init_phi(int n, int m, int width, int w_y, int w_yout, std::uint64_t seed);

struct FlowConfig {
  std::size_t nt = 8;  // RK4 steps during training
  double alpha1 = 10.0;
  double alpha2 = 10.0;
  std::size_t width = 32;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::size_t valid_interval = 0;  // 0 = once per epoch
  int patience = 10;               // <= 0 disables early stopping
  std::size_t w_y = 0, w_yout = 0;  // context embedding; 0 = disabled
};

// y is given in embedded coordinates when the embedding is enabled (see
// embed_context); columns of the batch forms are independent samples.
struct PhiEval {
  double value = 0.0;
  Tensor grad_x;  // (n, 1)
  double laplacian = 0.0;  // trace of the x-block Hessian
  double dt = 0.0;
};
PhiEval phi_eval(const PhiParams& p, double t, const Tensor& x, const Tensor& y);

// applies the feature map to raw context columns (m, B); identity when disabled
Tensor embed_context(const PhiParams& p, const Tensor& y_raw);

// State of the inverse integration at t=0: positions plus the accumulators
// picked up along the trajectories (all zero at t=1).
struct AugmentedState {
  Tensor p;     // (n, B)
  Tensor ell;   // (1, B) accumulated divergence: log det of x -> p(0)
  Tensor cost;  // (1, B) accumulated 1/2 ||velocity||^2
  Tensor hjb;   // (1, B) accumulated |dt Phi - 1/(2 alpha1) ||grad Phi||^2|
};

// integrates dp/dt = -(1/alpha1) grad_p Phi(t, p; y) from t=1 down to t=0 in
// nt equal RK4 steps; the accumulators share the same stage evaluations.
// Raw y; the embedding is applied internally. Throws on a non-finite state
// with the failing step in the message.
AugmentedState integrate_inverse(const PhiParams& p, const Tensor& x, const Tensor& y,
                                 std::size_t nt, double alpha1);

// mean[ 1/2 ||p(0)||^2 - ell ] + alpha1 mean cost + alpha2 mean hjb, built as
// one differentiable graph through every RK4 stage
double cot_loss(const PhiParams& p, const Tensor& x, const Tensor& y, const FlowConfig& cfg);
double cot_loss_grad(PhiParams& p, const Tensor& x, const Tensor& y, const FlowConfig& cfg,
                     std::vector<Tensor>& grads);
// reported NLL at evaluation step count: adds (n/2) ln 2pi and drops penalties
double flow_test_nll(const PhiParams& p, const Tensor& x, const Tensor& y, std::size_t nt);

struct FlowTrainResult {
  PhiParams params;  // best-validation weights, alpha1 recorded inside
  RunRecord record;
  double best_valid_nll = 0.0;  // reported convention
};

// Adam on cot_loss over shuffled minibatches; the residual-net box is
// enforced after every step. Divergence aborts with the last good weights.
FlowTrainResult train_flow(const FlowConfig& cfg, const Dataset& data);

// forward flow z -> x: du/dt = -(1/alpha1) grad Phi(t, u; y) from u(0) = z
// to t=1 with nt RK4 steps, alpha1 taken from the params
Tensor sample_flow(const PhiParams& p, const Tensor& y, const Tensor& z, std::size_t nt);

// relative Frobenius distance of forward samples at each nt against the
// nt_ref reference over a common z-batch
std::vector<double> nt_consistency(const PhiParams& p, const Tensor& y, const Tensor& z,
                                   const std::vector<std::size_t>& nt_list, std::size_t nt_ref);

// metrics adapter; draws z ~ N(0, I) and pushes it through the forward flow
class FlowSampler final : public ConditionalSampler {
 public:
  FlowSampler(const PhiParams& p, std::size_t nt) : p_(&p), nt_(nt) {}
  std::size_t xdim() const override { return static_cast<std::size_t>(p_->n); }
  std::size_t ydim() const override { return static_cast<std::size_t>(p_->m); }
  Tensor sample(const Tensor& y, std::size_t count, std::uint64_t seed,
                std::vector<char>* converged = nullptr) const override;

 private:
  const PhiParams* p_;
  std::size_t nt_;
};

}  // namespace cotlab
