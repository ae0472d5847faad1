#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cotlab/graph.hpp"
#include "cotlab/tensor.hpp"

namespace cotlab {

// Scalar potential networks. The partially convex network is convex in x for
// any y by construction: the propagated-state weights pass through relu inside
// the forward pass, the gates on the propagated state are non-negative, and
// the output activation is convex and non-decreasing. The fully convex
// network is the same idea without a context path.

struct PicnnDims {
  int n = 0;  // convex-input dimension
  int m = 0;  // context dimension
  int w = 0;  // feature width
  int u = 0;  // context width
  int K = 0;  // layers, K >= 2
};

// Width of the context path when not searched over: min(w, next power of two >= m).
int default_context_width(int w, int m);

struct PicnnParams {
  PicnnDims dims;
  // indexed by layer k; blocks that do not exist at a layer stay empty:
  // Lv/bv exist for k = 0..K-2, Lx/Lxv/bxv for k = 1..K-1, the rest for all k.
  std::vector<Tensor> Lv, bv;
  std::vector<Tensor> Lvw, Lw, bw;
  std::vector<Tensor> Lwv, bwv;
  std::vector<Tensor> Lx, Lxv, bxv;
};

struct StrictPotentialParams {
  PicnnParams picnn;
  // unconstrained 1x1 scalars, reparameterized as softplus(gamma1) on the
  // network term and relu(gamma2) + softplus(gamma3) on the quadratic term
  Tensor gamma1 = Tensor::scalar(0.0);
  Tensor gamma2 = Tensor::scalar(0.0);
  Tensor gamma3 = Tensor::scalar(0.0);
  double quad_coeff() const;  // relu(gamma2) + softplus(gamma3)
  double net_coeff() const;   // softplus(gamma1)
};

struct FicnnDims {
  int m = 0;  // input dimension
  int w = 0;  // width
  int K = 0;  // layers, K >= 2
};

struct FicnnParams {
  FicnnDims dims;
  // Lw[0] empty (no propagated state at the first layer); Ly/b for all k.
  std::vector<Tensor> Lw, Ly, b;
};

// Named reference to one trainable block; `nonneg` marks blocks the projection
// step clamps. Views stay valid while the owning params object is alive.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  bool nonneg = false;
};

std::vector<ParamRef> param_refs(PicnnParams& p, const std::string& prefix = "");
std::vector<ParamRef> param_refs(StrictPotentialParams& p, const std::string& prefix = "");
std::vector<ParamRef> param_refs(FicnnParams& p, const std::string& prefix = "");

// Clamps the constrained blocks to the non-negative orthant in place; all
// other parameters are untouched. Idempotent.
void project_nonneg(PicnnParams& p);
void project_nonneg(FicnnParams& p);
void project_nonneg(StrictPotentialParams& p);

// Deterministic fan-scaled uniform init; constrained blocks start in the
// feasible orthant, biases start at zero. The gamma defaults put the quadratic
// coefficient near 1 and the network coefficient at softplus(0).
PicnnParams init_picnn(const PicnnDims& dims, std::uint64_t seed);
StrictPotentialParams init_strict_potential(const PicnnDims& dims, std::uint64_t seed);
FicnnParams init_ficnn(const FicnnDims& dims, std::uint64_t seed);

// Graph builders for column batches. x is (n,B), y is (m,B); the result is
// (1,B). Weights enter the graph as named param leaves (shared prefix so one
// graph can host several networks); biases broadcast over columns.
int build_picnn(Graph& g, const PicnnParams& p, int x, int y,
                const std::string& prefix = "");
int build_strict_potential(Graph& g, const StrictPotentialParams& p, int x, int y,
                           const std::string& prefix = "");
int build_ficnn(Graph& g, const FicnnParams& p, int y, const std::string& prefix = "");

// Point evaluations and exact derivatives on single columns.
double picnn_forward(const PicnnParams& p, const Tensor& x, const Tensor& y);
double strict_potential(const StrictPotentialParams& p, const Tensor& x, const Tensor& y);
double ficnn_forward(const FicnnParams& p, const Tensor& y);

// gradient of the strict potential in x; this is the inverse transport map
Tensor potential_grad_x(const StrictPotentialParams& p, const Tensor& x, const Tensor& y);
// x-Hessian assembled from unit-direction tangent sweeps; SPD with minimum
// eigenvalue at least the quadratic coefficient
Tensor potential_hessian_x(const StrictPotentialParams& p, const Tensor& x, const Tensor& y);

Tensor ficnn_grad(const FicnnParams& p, const Tensor& y);
Tensor ficnn_hessian(const FicnnParams& p, const Tensor& y);

}  // namespace cotlab
