#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cotlab/tensor.hpp"

namespace cotlab {

struct GraphError : std::runtime_error {
  explicit GraphError(const std::string& msg, int node_id = -1)
      : std::runtime_error(msg), node(node_id) {}
  int node = -1;
};

struct FactorizationError : GraphError {
  FactorizationError(const std::string& msg, int pivot_index, int node_id = -1)
      : GraphError(msg, node_id), pivot(pivot_index) {}
  int pivot = -1;
};

// The primitive set is closed: every operation the tape can hold is listed
// here, and every differentiation rule (numeric adjoint, adjoint-as-nodes,
// tangent-as-nodes) is written against this enum. Batch variants treat each
// column of an (n*n, B) tensor as one n-by-n matrix stored column-major
// within the column.
enum class Op : std::uint8_t {
  Input,
  Param,
  Const,
  Transpose,
  ConcatRows,
  SliceRows,
  PadRows,
  Add,
  Hadamard,
  Scale,       // compile-time scalar attribute
  ScalarMul,   // 1x1 node times tensor
  AddColVec,   // add (r,1) to every column of (r,c)
  RowMul,      // scale every row of (r,c) by (1,c)
  MatMul,
  SumAll,
  ColSum,
  RowSum,
  SquareNormAll,
  ColSquareNorm,
  Softplus,
  Sigmoid,
  Elu,
  EluGrad,   // exp(min(x,0))
  Relu,
  ReluGrad,  // step function, 0 at the kink
  LogTwoCosh,  // log(exp(x) + exp(-x))
  Tanh,
  LogdetSpd,
  SpdInverse,
  BatchLogdetSpd,
  BatchSpdInverse,
  BatchMatMul,
  BatchMatTranspose,
};

const char* op_name(Op op);

struct Node {
  Op op;
  int a = -1;
  int b = -1;
  int i0 = 0;      // slice begin / pad offset / batch matrix order n
  int i1 = 0;      // slice end / pad total rows
  double c = 0.0;  // Scale factor
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string name;  // leaves only
  Tensor value;
  Tensor adjoint;
  bool has_value = false;
  bool has_adjoint = false;
};

// Pair carried by forward-mode sweeps.
struct TangentBundle {
  Tensor primal;
  Tensor tangent;
};

// Append-only tape. Nodes are appended in topological order and evaluated
// front to back; the numeric adjoint sweep walks back to front. Graphs are
// single-use per batch: rebuild instead of mutating bound shapes.
class Graph {
public:
  int input(const std::string& name, Tensor value);
  int param(const std::string& name, Tensor value);
  int constant(Tensor value);

  int transpose(int a);
  int concat_rows(int a, int b);
  int slice_rows(int a, int r0, int r1);
  int pad_rows(int a, int offset, int total_rows);
  int add(int a, int b);
  int hadamard(int a, int b);
  int scale(int a, double c);
  int scalar_mul(int s, int a);
  int add_colvec(int a, int b);
  int row_mul(int a, int r);
  int matmul(int a, int b);
  int sum_all(int a);
  int col_sum(int a);
  int row_sum(int a);
  int square_norm_all(int a);
  int col_square_norm(int a);
  int softplus(int a);
  int sigmoid(int a);
  int elu(int a);
  int elu_grad(int a);
  int relu(int a);
  int relu_grad(int a);
  int log_two_cosh(int a);
  int tanh_(int a);
  int logdet_spd(int a);
  int spd_inverse(int a);
  int batch_logdet_spd(int a, int n);
  int batch_spd_inverse(int a, int n);
  int batch_mat_mul(int a, int b, int n);
  int batch_mat_transpose(int a, int n);

  int zeros_like(int a);
  int ones_like(int a);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  void set_root(int id);
  int root() const;

  int leaf(const std::string& name) const;
  bool has_leaf(const std::string& name) const;
  const std::vector<int>& params() const { return param_ids_; }

  void bind(const std::string& name, const Tensor& value);

  // Runs the forward sweep over every node and returns the root value.
  const Tensor& evaluate();
  const Tensor& evaluate(const std::map<std::string, Tensor>& bindings);
  bool evaluated() const { return evaluated_; }
  const Tensor& value(int id) const;

  // Numeric adjoint sweep from the root. Every node reachable backwards from
  // the root receives an adjoint; leaves keep theirs for gradient().
  void backward(const Tensor& seed);
  void backward();  // seed of ones in the root's shape
  const Tensor& adjoint(int id) const;
  bool has_adjoint(int id) const;
  Tensor gradient(const std::string& leaf_name) const;

  // Appends the adjoint computation of `root_id` with respect to `wrt` as new
  // nodes and returns one gradient node per wrt entry (zeros when
  // unreachable). Propagation stops at wrt nodes and leaves. The default seed
  // is ones in the root's shape; with column-independent graphs and a (1,B)
  // root this yields per-column gradients.
  std::vector<int> grad_nodes(int root_id, const std::vector<int>& wrt, int seed_node = -1);

  // Appends the forward (tangent) linearization seeded at `seeds` and returns
  // the tangent node of each target (zeros when untouched).
  std::vector<int> jvp_nodes(const std::vector<std::pair<int, int>>& seeds,
                             const std::vector<int>& targets);

private:
  int add_node(Node n);
  int require(int id) const;
  void check_same_shape(const char* what, int a, int b) const;
  [[noreturn]] void fail(const std::string& msg, int node_id = -1) const;
  void eval_node(int id);
  void backward_node(int id);
  void accumulate(int id, const Tensor& contribution);
  // symbolic rule helpers
  void emit_vjp_into(int id, int gid, const std::function<void(int, int)>& push);
  int emit_jvp(int id, int ta, int tb);

  std::vector<Node> nodes_;
  std::map<std::string, int> leaf_ids_;
  std::vector<int> param_ids_;
  int root_ = -1;
  bool evaluated_ = false;
};

// Numeric log-determinant of a symmetric positive definite matrix; the same
// checks as the graph op (asymmetry tolerance 1e-10 relative to the largest
// entry, failing pivot reported).
double spd_logdet(const Tensor& h);

// (Hessian of the scalar root) times v with respect to a named leaf, computed
// by a tangent sweep over the appended gradient nodes. Mutates the graph.
Tensor hvp(Graph& g, const std::string& leaf_name, const Tensor& v);

// Dense Hessian of the scalar root with respect to a named (n,1) leaf,
// assembled from n tangent sweeps sharing one gradient extension.
Tensor dense_hessian(Graph& g, const std::string& leaf_name);

}  // namespace cotlab
