#include "cotlab/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace cotlab {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajorMatrix>;
using MutMap = Eigen::Map<RowMajorMatrix>;

double stable_softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_two_cosh(double x) {
  const double a = std::fabs(x);
  return a + std::log1p(std::exp(-2.0 * a));
}

// In-place lower Cholesky of a symmetric n-by-n matrix in row-major order.
// Returns -1 on success, else the failing pivot index.
int chol_inplace(int n, double* a) {
  for (int k = 0; k < n; ++k) {
    double d = a[k * n + k];
    for (int j = 0; j < k; ++j) d -= a[k * n + j] * a[k * n + j];
    if (!(d > 0.0) || !std::isfinite(d)) return k;
    const double lkk = std::sqrt(d);
    a[k * n + k] = lkk;
    for (int i = k + 1; i < n; ++i) {
      double s = a[i * n + k];
      for (int j = 0; j < k; ++j) s -= a[i * n + j] * a[k * n + j];
      a[i * n + k] = s / lkk;
    }
  }
  return -1;
}

double chol_logdet(int n, const double* l) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += std::log(l[k * n + k]);
  return 2.0 * s;
}

// Full symmetric inverse from the lower factor, row-major output.
void chol_inverse(int n, const double* l, double* inv) {
  std::vector<double> col(n);
  for (int j = 0; j < n; ++j) {
    // forward solve L y = e_j
    for (int i = 0; i < n; ++i) {
      double s = (i == j) ? 1.0 : 0.0;
      for (int k = 0; k < i; ++k) s -= l[i * n + k] * col[k];
      col[i] = s / l[i * n + i];
    }
    // back solve L^T x = y
    for (int i = n - 1; i >= 0; --i) {
      double s = col[i];
      for (int k = i + 1; k < n; ++k) s -= l[k * n + i] * col[k];
      col[i] = s / l[i * n + i];
    }
    for (int i = 0; i < n; ++i) inv[i * n + j] = col[i];
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::Transpose: return "transpose";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceRows: return "slice_rows";
    case Op::PadRows: return "pad_rows";
    case Op::Add: return "add";
    case Op::Hadamard: return "hadamard";
    case Op::Scale: return "scale";
    case Op::ScalarMul: return "scalar_mul";
    case Op::AddColVec: return "add_colvec";
    case Op::RowMul: return "row_mul";
    case Op::MatMul: return "matmul";
    case Op::SumAll: return "sum_all";
    case Op::ColSum: return "col_sum";
    case Op::RowSum: return "row_sum";
    case Op::SquareNormAll: return "square_norm_all";
    case Op::ColSquareNorm: return "col_square_norm";
    case Op::Softplus: return "softplus";
    case Op::Sigmoid: return "sigmoid";
    case Op::Elu: return "elu";
    case Op::EluGrad: return "elu_grad";
    case Op::Relu: return "relu";
    case Op::ReluGrad: return "relu_grad";
    case Op::LogTwoCosh: return "log_two_cosh";
    case Op::Tanh: return "tanh";
    case Op::LogdetSpd: return "logdet_spd";
    case Op::SpdInverse: return "spd_inverse";
    case Op::BatchLogdetSpd: return "batch_logdet_spd";
    case Op::BatchSpdInverse: return "batch_spd_inverse";
    case Op::BatchMatMul: return "batch_mat_mul";
    case Op::BatchMatTranspose: return "batch_mat_transpose";
  }
  return "?";
}

void Graph::fail(const std::string& msg, int node_id) const {
  if (node_id >= 0)
    throw GraphError("node " + std::to_string(node_id) + " (" +
                         op_name(nodes_[static_cast<std::size_t>(node_id)].op) +
                         "): " + msg,
                     node_id);
  throw GraphError(msg);
}

int Graph::add_node(Node n) {
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  root_ = id;
  evaluated_ = false;
  return id;
}

int Graph::require(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw GraphError("node id " + std::to_string(id) + " out of range");
  return id;
}

void Graph::check_same_shape(const char* what, int a, int b) const {
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nb = nodes_[static_cast<std::size_t>(b)];
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw GraphError(std::string(what) + ": shape mismatch between node " +
                     std::to_string(a) + " (" + std::to_string(na.rows) + "," +
                     std::to_string(na.cols) + ") and node " + std::to_string(b) +
                     " (" + std::to_string(nb.rows) + "," + std::to_string(nb.cols) +
                     ")");
}

int Graph::input(const std::string& name, Tensor value) {
  if (name.empty()) throw GraphError("leaf name must be non-empty");
  if (leaf_ids_.count(name))
    throw GraphError("duplicate leaf name '" + name + "'");
  Node n;
  n.op = Op::Input;
  n.rows = value.rows();
  n.cols = value.cols();
  n.name = name;
  n.value = std::move(value);
  n.has_value = true;
  const int id = add_node(std::move(n));
  leaf_ids_[name] = id;
  return id;
}

int Graph::param(const std::string& name, Tensor value) {
  const int id = input(name, std::move(value));
  nodes_[static_cast<std::size_t>(id)].op = Op::Param;
  param_ids_.push_back(id);
  return id;
}

int Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Const;
  n.rows = value.rows();
  n.cols = value.cols();
  n.value = std::move(value);
  n.has_value = true;
  return add_node(std::move(n));
}

int Graph::transpose(int a) {
  require(a);
  Node n;
  n.op = Op::Transpose;
  n.a = a;
  n.rows = nodes_[static_cast<std::size_t>(a)].cols;
  n.cols = nodes_[static_cast<std::size_t>(a)].rows;
  return add_node(std::move(n));
}

int Graph::concat_rows(int a, int b) {
  require(a);
  require(b);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nb = nodes_[static_cast<std::size_t>(b)];
  if (na.cols != nb.cols)
    throw GraphError("concat_rows: column mismatch " + std::to_string(na.cols) +
                     " vs " + std::to_string(nb.cols));
  Node n;
  n.op = Op::ConcatRows;
  n.a = a;
  n.b = b;
  n.rows = na.rows + nb.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::slice_rows(int a, int r0, int r1) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  if (r0 < 0 || r1 <= r0 || r1 > static_cast<int>(na.rows))
    throw GraphError("slice_rows: bad range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + std::to_string(na.rows) +
                     " rows");
  Node n;
  n.op = Op::SliceRows;
  n.a = a;
  n.i0 = r0;
  n.i1 = r1;
  n.rows = static_cast<std::size_t>(r1 - r0);
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::pad_rows(int a, int offset, int total_rows) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  if (offset < 0 || offset + static_cast<int>(na.rows) > total_rows)
    throw GraphError("pad_rows: block does not fit");
  Node n;
  n.op = Op::PadRows;
  n.a = a;
  n.i0 = offset;
  n.i1 = total_rows;
  n.rows = static_cast<std::size_t>(total_rows);
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::add(int a, int b) {
  require(a);
  require(b);
  check_same_shape("add", a, b);
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.rows = nodes_[static_cast<std::size_t>(a)].rows;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

int Graph::hadamard(int a, int b) {
  require(a);
  require(b);
  check_same_shape("hadamard", a, b);
  Node n;
  n.op = Op::Hadamard;
  n.a = a;
  n.b = b;
  n.rows = nodes_[static_cast<std::size_t>(a)].rows;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

int Graph::scale(int a, double c) {
  require(a);
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.c = c;
  n.rows = nodes_[static_cast<std::size_t>(a)].rows;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

int Graph::scalar_mul(int s, int a) {
  require(s);
  require(a);
  const Node& ns = nodes_[static_cast<std::size_t>(s)];
  if (ns.rows != 1 || ns.cols != 1)
    throw GraphError("scalar_mul: first argument must be 1x1, node " +
                     std::to_string(s) + " is (" + std::to_string(ns.rows) + "," +
                     std::to_string(ns.cols) + ")");
  Node n;
  n.op = Op::ScalarMul;
  n.a = s;
  n.b = a;
  n.rows = nodes_[static_cast<std::size_t>(a)].rows;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

int Graph::add_colvec(int a, int b) {
  require(a);
  require(b);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nb = nodes_[static_cast<std::size_t>(b)];
  if (nb.cols != 1 || nb.rows != na.rows)
    throw GraphError("add_colvec: need (" + std::to_string(na.rows) +
                     ",1) column, node " + std::to_string(b) + " is (" +
                     std::to_string(nb.rows) + "," + std::to_string(nb.cols) + ")");
  Node n;
  n.op = Op::AddColVec;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::row_mul(int a, int r) {
  require(a);
  require(r);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nr = nodes_[static_cast<std::size_t>(r)];
  if (nr.rows != 1 || nr.cols != na.cols)
    throw GraphError("row_mul: need (1," + std::to_string(na.cols) +
                     ") row, node " + std::to_string(r) + " is (" +
                     std::to_string(nr.rows) + "," + std::to_string(nr.cols) + ")");
  Node n;
  n.op = Op::RowMul;
  n.a = a;
  n.b = r;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::matmul(int a, int b) {
  require(a);
  require(b);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nb = nodes_[static_cast<std::size_t>(b)];
  if (na.cols != nb.rows)
    throw GraphError("matmul: inner dimensions " + std::to_string(na.cols) +
                     " vs " + std::to_string(nb.rows) + " (nodes " +
                     std::to_string(a) + ", " + std::to_string(b) + ")");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = nb.cols;
  return add_node(std::move(n));
}

int Graph::sum_all(int a) {
  require(a);
  Node n;
  n.op = Op::SumAll;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  return add_node(std::move(n));
}

int Graph::col_sum(int a) {
  require(a);
  Node n;
  n.op = Op::ColSum;
  n.a = a;
  n.rows = 1;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

int Graph::row_sum(int a) {
  require(a);
  Node n;
  n.op = Op::RowSum;
  n.a = a;
  n.rows = nodes_[static_cast<std::size_t>(a)].rows;
  n.cols = 1;
  return add_node(std::move(n));
}

int Graph::square_norm_all(int a) {
  require(a);
  Node n;
  n.op = Op::SquareNormAll;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  return add_node(std::move(n));
}

int Graph::col_square_norm(int a) {
  require(a);
  Node n;
  n.op = Op::ColSquareNorm;
  n.a = a;
  n.rows = 1;
  n.cols = nodes_[static_cast<std::size_t>(a)].cols;
  return add_node(std::move(n));
}

#define COTLAB_UNARY_BUILDER(method, opcode)                      \
  int Graph::method(int a) {                                      \
    require(a);                                                   \
    Node n;                                                       \
    n.op = opcode;                                                \
    n.a = a;                                                      \
    n.rows = nodes_[static_cast<std::size_t>(a)].rows;            \
    n.cols = nodes_[static_cast<std::size_t>(a)].cols;            \
    return add_node(std::move(n));                                \
  }

COTLAB_UNARY_BUILDER(softplus, Op::Softplus)
COTLAB_UNARY_BUILDER(sigmoid, Op::Sigmoid)
COTLAB_UNARY_BUILDER(elu, Op::Elu)
COTLAB_UNARY_BUILDER(elu_grad, Op::EluGrad)
COTLAB_UNARY_BUILDER(relu, Op::Relu)
COTLAB_UNARY_BUILDER(relu_grad, Op::ReluGrad)
COTLAB_UNARY_BUILDER(log_two_cosh, Op::LogTwoCosh)
COTLAB_UNARY_BUILDER(tanh_, Op::Tanh)

#undef COTLAB_UNARY_BUILDER

int Graph::logdet_spd(int a) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  if (na.rows != na.cols || na.rows == 0)
    throw GraphError("logdet_spd: node " + std::to_string(a) +
                     " is not square: (" + std::to_string(na.rows) + "," +
                     std::to_string(na.cols) + ")");
  Node n;
  n.op = Op::LogdetSpd;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  return add_node(std::move(n));
}

int Graph::spd_inverse(int a) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  if (na.rows != na.cols || na.rows == 0)
    throw GraphError("spd_inverse: node " + std::to_string(a) + " is not square");
  Node n;
  n.op = Op::SpdInverse;
  n.a = a;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

static void check_batch_order(const Node& na, int n, int a, const char* what) {
  if (n <= 0 || na.rows != static_cast<std::size_t>(n) * static_cast<std::size_t>(n))
    throw GraphError(std::string(what) + ": node " + std::to_string(a) + " has " +
                     std::to_string(na.rows) + " rows, expected n*n with n=" +
                     std::to_string(n));
}

int Graph::batch_logdet_spd(int a, int nmat) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  check_batch_order(na, nmat, a, "batch_logdet_spd");
  Node n;
  n.op = Op::BatchLogdetSpd;
  n.a = a;
  n.i0 = nmat;
  n.rows = 1;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::batch_spd_inverse(int a, int nmat) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  check_batch_order(na, nmat, a, "batch_spd_inverse");
  Node n;
  n.op = Op::BatchSpdInverse;
  n.a = a;
  n.i0 = nmat;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::batch_mat_mul(int a, int b, int nmat) {
  require(a);
  require(b);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  const Node& nb = nodes_[static_cast<std::size_t>(b)];
  check_batch_order(na, nmat, a, "batch_mat_mul");
  check_batch_order(nb, nmat, b, "batch_mat_mul");
  if (na.cols != nb.cols)
    throw GraphError("batch_mat_mul: batch width mismatch");
  Node n;
  n.op = Op::BatchMatMul;
  n.a = a;
  n.b = b;
  n.i0 = nmat;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::batch_mat_transpose(int a, int nmat) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  check_batch_order(na, nmat, a, "batch_mat_transpose");
  Node n;
  n.op = Op::BatchMatTranspose;
  n.a = a;
  n.i0 = nmat;
  n.rows = na.rows;
  n.cols = na.cols;
  return add_node(std::move(n));
}

int Graph::zeros_like(int a) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  return constant(Tensor::zeros(na.rows, na.cols));
}

int Graph::ones_like(int a) {
  require(a);
  const Node& na = nodes_[static_cast<std::size_t>(a)];
  return constant(Tensor::ones(na.rows, na.cols));
}

void Graph::set_root(int id) {
  require(id);
  root_ = id;
}

int Graph::root() const {
  if (root_ < 0) throw GraphError("graph is empty");
  return root_;
}

int Graph::leaf(const std::string& name) const {
  auto it = leaf_ids_.find(name);
  if (it == leaf_ids_.end()) throw GraphError("no leaf named '" + name + "'");
  return it->second;
}

bool Graph::has_leaf(const std::string& name) const {
  return leaf_ids_.count(name) != 0;
}

void Graph::bind(const std::string& name, const Tensor& value) {
  Node& n = nodes_[static_cast<std::size_t>(leaf(name))];
  if (n.rows != value.rows() || n.cols != value.cols())
    throw GraphError("bind '" + name + "': shape (" + std::to_string(value.rows()) +
                     "," + std::to_string(value.cols()) + ") does not match leaf (" +
                     std::to_string(n.rows) + "," + std::to_string(n.cols) + ")");
  n.value = value;
  n.has_value = true;
  evaluated_ = false;
}

const Tensor& Graph::evaluate(const std::map<std::string, Tensor>& bindings) {
  for (const auto& [name, value] : bindings) bind(name, value);
  return evaluate();
}

const Tensor& Graph::evaluate() {
  if (nodes_.empty()) throw GraphError("cannot evaluate an empty graph");
  for (int i = 0; i < static_cast<int>(nodes_.size()); ++i) eval_node(i);
  evaluated_ = true;
  return nodes_[static_cast<std::size_t>(root())].value;
}

const Tensor& Graph::value(int id) const {
  require(id);
  if (!evaluated_) throw GraphError("value() before evaluate()");
  return nodes_[static_cast<std::size_t>(id)].value;
}

void Graph::eval_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  switch (n.op) {
    case Op::Input:
    case Op::Param:
    case Op::Const:
      if (!n.has_value) fail("leaf '" + n.name + "' has no bound value", id);
      return;
    default:
      break;
  }

  const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
  Tensor& out = n.value;
  if (out.rows() != n.rows || out.cols() != n.cols) out = Tensor(n.rows, n.cols);

  switch (n.op) {
    case Op::Transpose: {
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) out(j, i) = va(i, j);
      break;
    }
    case Op::ConcatRows: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      std::copy(va.data(), va.data() + va.size(), out.data());
      std::copy(vb.data(), vb.data() + vb.size(), out.data() + va.size());
      break;
    }
    case Op::SliceRows: {
      const std::size_t off = static_cast<std::size_t>(n.i0) * va.cols();
      std::copy(va.data() + off, va.data() + off + out.size(), out.data());
      break;
    }
    case Op::PadRows: {
      std::fill(out.data(), out.data() + out.size(), 0.0);
      const std::size_t off = static_cast<std::size_t>(n.i0) * va.cols();
      std::copy(va.data(), va.data() + va.size(), out.data() + off);
      break;
    }
    case Op::Add: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = va.data()[k] + vb.data()[k];
      break;
    }
    case Op::Hadamard: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = va.data()[k] * vb.data()[k];
      break;
    }
    case Op::Scale: {
      for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = n.c * va.data()[k];
      break;
    }
    case Op::ScalarMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      const double s = va.data()[0];
      for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = s * vb.data()[k];
      break;
    }
    case Op::AddColVec: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      for (std::size_t i = 0; i < out.rows(); ++i) {
        const double bv = vb.data()[i];
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = va(i, j) + bv;
      }
      break;
    }
    case Op::RowMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = va(i, j) * vb.data()[j];
      break;
    }
    case Op::MatMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      ConstMap ma(va.data(), static_cast<Eigen::Index>(va.rows()),
                  static_cast<Eigen::Index>(va.cols()));
      ConstMap mb(vb.data(), static_cast<Eigen::Index>(vb.rows()),
                  static_cast<Eigen::Index>(vb.cols()));
      MutMap mo(out.data(), static_cast<Eigen::Index>(out.rows()),
                static_cast<Eigen::Index>(out.cols()));
      mo.noalias() = ma * mb;
      break;
    }
    case Op::SumAll: {
      double s = 0.0;
      for (std::size_t k = 0; k < va.size(); ++k) s += va.data()[k];
      out.data()[0] = s;
      break;
    }
    case Op::ColSum: {
      std::fill(out.data(), out.data() + out.size(), 0.0);
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) out.data()[j] += va(i, j);
      break;
    }
    case Op::RowSum: {
      for (std::size_t i = 0; i < va.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < va.cols(); ++j) s += va(i, j);
        out.data()[i] = s;
      }
      break;
    }
    case Op::SquareNormAll: {
      double s = 0.0;
      for (std::size_t k = 0; k < va.size(); ++k) s += va.data()[k] * va.data()[k];
      out.data()[0] = s;
      break;
    }
    case Op::ColSquareNorm: {
      std::fill(out.data(), out.data() + out.size(), 0.0);
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) out.data()[j] += va(i, j) * va(i, j);
      break;
    }
    case Op::Softplus: {
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = stable_softplus(va.data()[k]);
      break;
    }
    case Op::Sigmoid: {
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = stable_sigmoid(va.data()[k]);
      break;
    }
    case Op::Elu: {
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double x = va.data()[k];
        out.data()[k] = x > 0.0 ? x : std::expm1(x);
      }
      break;
    }
    case Op::EluGrad: {
      for (std::size_t k = 0; k < out.size(); ++k) {
        const double x = va.data()[k];
        out.data()[k] = x > 0.0 ? 1.0 : std::exp(x);
      }
      break;
    }
    case Op::Relu: {
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = std::max(0.0, va.data()[k]);
      break;
    }
    case Op::ReluGrad: {
      // subgradient 1 at exactly 0 so weights clamped onto the constraint
      // boundary by projection keep receiving gradient
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = va.data()[k] >= 0.0 ? 1.0 : 0.0;
      break;
    }
    case Op::LogTwoCosh: {
      for (std::size_t k = 0; k < out.size(); ++k)
        out.data()[k] = stable_log_two_cosh(va.data()[k]);
      break;
    }
    case Op::Tanh: {
      for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] = std::tanh(va.data()[k]);
      break;
    }
    case Op::LogdetSpd: {
      const int m = static_cast<int>(va.rows());
      const double tol = 1e-10 * std::max(1.0, va.max_abs());
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          const double d = va(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) -
                           va(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
          if (std::fabs(d) > tol)
            fail("matrix is not symmetric: |H(" + std::to_string(i) + "," +
                     std::to_string(j) + ") - H(" + std::to_string(j) + "," +
                     std::to_string(i) + ")| = " + std::to_string(std::fabs(d)),
                 id);
          buf[static_cast<std::size_t>(i) * m + j] =
              0.5 * (va(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +
                     va(static_cast<std::size_t>(j), static_cast<std::size_t>(i)));
        }
      const int pivot = chol_inplace(m, buf.data());
      if (pivot >= 0)
        throw FactorizationError("node " + std::to_string(id) +
                                     ": matrix is not positive definite at pivot " +
                                     std::to_string(pivot),
                                 pivot, id);
      out.data()[0] = chol_logdet(m, buf.data());
      break;
    }
    case Op::SpdInverse: {
      const int m = static_cast<int>(va.rows());
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          buf[static_cast<std::size_t>(i) * m + j] =
              0.5 * (va(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +
                     va(static_cast<std::size_t>(j), static_cast<std::size_t>(i)));
      const int pivot = chol_inplace(m, buf.data());
      if (pivot >= 0)
        throw FactorizationError("node " + std::to_string(id) +
                                     ": matrix is not positive definite at pivot " +
                                     std::to_string(pivot),
                                 pivot, id);
      chol_inverse(m, buf.data(), out.data());
      break;
    }
    case Op::BatchLogdetSpd: {
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      for (std::size_t b = 0; b < bsz; ++b) {
        double mx = 1.0;
        for (int k = 0; k < m * m; ++k)
          mx = std::max(mx, std::fabs(va(static_cast<std::size_t>(k), b)));
        const double tol = 1e-10 * mx;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j) {
            const double hij = va(static_cast<std::size_t>(j * m + i), b);
            const double hji = va(static_cast<std::size_t>(i * m + j), b);
            if (std::fabs(hij - hji) > tol)
              fail("batch column " + std::to_string(b) + " is not symmetric", id);
            buf[static_cast<std::size_t>(i) * m + j] = 0.5 * (hij + hji);
          }
        const int pivot = chol_inplace(m, buf.data());
        if (pivot >= 0)
          throw FactorizationError("node " + std::to_string(id) + ": batch column " +
                                       std::to_string(b) +
                                       " is not positive definite at pivot " +
                                       std::to_string(pivot),
                                   pivot, id);
        out(0, b) = chol_logdet(m, buf.data());
      }
      break;
    }
    case Op::BatchSpdInverse: {
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      std::vector<double> inv(static_cast<std::size_t>(m) * m);
      for (std::size_t b = 0; b < bsz; ++b) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j)
            buf[static_cast<std::size_t>(i) * m + j] =
                0.5 * (va(static_cast<std::size_t>(j * m + i), b) +
                       va(static_cast<std::size_t>(i * m + j), b));
        const int pivot = chol_inplace(m, buf.data());
        if (pivot >= 0)
          throw FactorizationError("node " + std::to_string(id) + ": batch column " +
                                       std::to_string(b) +
                                       " is not positive definite at pivot " +
                                       std::to_string(pivot),
                                   pivot, id);
        chol_inverse(m, buf.data(), inv.data());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j)
            out(static_cast<std::size_t>(j * m + i), b) =
                inv[static_cast<std::size_t>(i) * m + j];
      }
      break;
    }
    case Op::BatchMatMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      for (std::size_t b = 0; b < bsz; ++b)
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int k = 0; k < m; ++k)
              s += va(static_cast<std::size_t>(k * m + i), b) *
                   vb(static_cast<std::size_t>(j * m + k), b);
            out(static_cast<std::size_t>(j * m + i), b) = s;
          }
      break;
    }
    case Op::BatchMatTranspose: {
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      for (std::size_t b = 0; b < bsz; ++b)
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i)
            out(static_cast<std::size_t>(j * m + i), b) =
                va(static_cast<std::size_t>(i * m + j), b);
      break;
    }
    default:
      fail("unhandled op in eval", id);
  }
}

void Graph::backward() {
  const Node& r = nodes_[static_cast<std::size_t>(root())];
  backward(Tensor::ones(r.rows, r.cols));
}

void Graph::backward(const Tensor& seed) {
  if (!evaluated_) throw GraphError("backward() before evaluate()");
  const int r = root();
  Node& rn = nodes_[static_cast<std::size_t>(r)];
  if (seed.rows() != rn.rows || seed.cols() != rn.cols)
    throw GraphError("backward: seed shape (" + std::to_string(seed.rows()) + "," +
                     std::to_string(seed.cols()) + ") does not match root (" +
                     std::to_string(rn.rows) + "," + std::to_string(rn.cols) + ")");
  for (auto& n : nodes_) n.has_adjoint = false;
  rn.adjoint = seed;
  rn.has_adjoint = true;
  for (int i = r; i >= 0; --i) {
    if (!nodes_[static_cast<std::size_t>(i)].has_adjoint) continue;
    backward_node(i);
  }
}

void Graph::accumulate(int id, const Tensor& contribution) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_adjoint) {
    n.adjoint = contribution;
    n.has_adjoint = true;
    return;
  }
  for (std::size_t k = 0; k < n.adjoint.size(); ++k)
    n.adjoint.data()[k] += contribution.data()[k];
}

void Graph::backward_node(int id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = n.adjoint;
  switch (n.op) {
    case Op::Input:
    case Op::Param:
    case Op::Const:
      return;
    default:
      break;
  }
  const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;

  switch (n.op) {
    case Op::Transpose: {
      Tensor t(va.rows(), va.cols());
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) t(i, j) = g(j, i);
      accumulate(n.a, t);
      break;
    }
    case Op::ConcatRows: {
      const Node& pa = nodes_[static_cast<std::size_t>(n.a)];
      const Node& pb = nodes_[static_cast<std::size_t>(n.b)];
      Tensor ta(pa.rows, pa.cols);
      std::copy(g.data(), g.data() + ta.size(), ta.data());
      accumulate(n.a, ta);
      Tensor tb(pb.rows, pb.cols);
      std::copy(g.data() + ta.size(), g.data() + ta.size() + tb.size(), tb.data());
      accumulate(n.b, tb);
      break;
    }
    case Op::SliceRows: {
      Tensor t = Tensor::zeros(va.rows(), va.cols());
      const std::size_t off = static_cast<std::size_t>(n.i0) * va.cols();
      for (std::size_t k = 0; k < g.size(); ++k) t.data()[off + k] = g.data()[k];
      accumulate(n.a, t);
      break;
    }
    case Op::PadRows: {
      Tensor t(va.rows(), va.cols());
      const std::size_t off = static_cast<std::size_t>(n.i0) * va.cols();
      for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = g.data()[off + k];
      accumulate(n.a, t);
      break;
    }
    case Op::Add: {
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    }
    case Op::Hadamard: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) t.data()[k] = g.data()[k] * vb.data()[k];
      accumulate(n.a, t);
      for (std::size_t k = 0; k < g.size(); ++k) t.data()[k] = g.data()[k] * va.data()[k];
      accumulate(n.b, t);
      break;
    }
    case Op::Scale: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) t.data()[k] = n.c * g.data()[k];
      accumulate(n.a, t);
      break;
    }
    case Op::ScalarMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      double s = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) s += g.data()[k] * vb.data()[k];
      accumulate(n.a, Tensor::scalar(s));
      Tensor t(g.rows(), g.cols());
      const double sv = va.data()[0];
      for (std::size_t k = 0; k < g.size(); ++k) t.data()[k] = sv * g.data()[k];
      accumulate(n.b, t);
      break;
    }
    case Op::AddColVec: {
      accumulate(n.a, g);
      Tensor t(g.rows(), 1);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j);
        t.data()[i] = s;
      }
      accumulate(n.b, t);
      break;
    }
    case Op::RowMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      Tensor t(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) t(i, j) = g(i, j) * vb.data()[j];
      accumulate(n.a, t);
      Tensor tr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) tr.data()[j] += g(i, j) * va(i, j);
      accumulate(n.b, tr);
      break;
    }
    case Op::MatMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      ConstMap mg(g.data(), static_cast<Eigen::Index>(g.rows()),
                  static_cast<Eigen::Index>(g.cols()));
      ConstMap ma(va.data(), static_cast<Eigen::Index>(va.rows()),
                  static_cast<Eigen::Index>(va.cols()));
      ConstMap mb(vb.data(), static_cast<Eigen::Index>(vb.rows()),
                  static_cast<Eigen::Index>(vb.cols()));
      Tensor ta(va.rows(), va.cols());
      MutMap mta(ta.data(), static_cast<Eigen::Index>(ta.rows()),
                 static_cast<Eigen::Index>(ta.cols()));
      mta.noalias() = mg * mb.transpose();
      accumulate(n.a, ta);
      Tensor tb(vb.rows(), vb.cols());
      MutMap mtb(tb.data(), static_cast<Eigen::Index>(tb.rows()),
                 static_cast<Eigen::Index>(tb.cols()));
      mtb.noalias() = ma.transpose() * mg;
      accumulate(n.b, tb);
      break;
    }
    case Op::SumAll: {
      accumulate(n.a, Tensor::full(va.rows(), va.cols(), g.data()[0]));
      break;
    }
    case Op::ColSum: {
      Tensor t(va.rows(), va.cols());
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) t(i, j) = g.data()[j];
      accumulate(n.a, t);
      break;
    }
    case Op::RowSum: {
      Tensor t(va.rows(), va.cols());
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j) t(i, j) = g.data()[i];
      accumulate(n.a, t);
      break;
    }
    case Op::SquareNormAll: {
      Tensor t(va.rows(), va.cols());
      const double s = 2.0 * g.data()[0];
      for (std::size_t k = 0; k < va.size(); ++k) t.data()[k] = s * va.data()[k];
      accumulate(n.a, t);
      break;
    }
    case Op::ColSquareNorm: {
      Tensor t(va.rows(), va.cols());
      for (std::size_t i = 0; i < va.rows(); ++i)
        for (std::size_t j = 0; j < va.cols(); ++j)
          t(i, j) = 2.0 * g.data()[j] * va(i, j);
      accumulate(n.a, t);
      break;
    }
    case Op::Softplus: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k)
        t.data()[k] = g.data()[k] * stable_sigmoid(va.data()[k]);
      accumulate(n.a, t);
      break;
    }
    case Op::Sigmoid: {
      const Tensor& v = n.value;
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double s = v.data()[k];
        t.data()[k] = g.data()[k] * s * (1.0 - s);
      }
      accumulate(n.a, t);
      break;
    }
    case Op::Elu: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double x = va.data()[k];
        t.data()[k] = g.data()[k] * (x > 0.0 ? 1.0 : std::exp(x));
      }
      accumulate(n.a, t);
      break;
    }
    case Op::EluGrad: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double x = va.data()[k];
        t.data()[k] = x < 0.0 ? g.data()[k] * std::exp(x) : 0.0;
      }
      accumulate(n.a, t);
      break;
    }
    case Op::Relu: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k)
        t.data()[k] = va.data()[k] >= 0.0 ? g.data()[k] : 0.0;
      accumulate(n.a, t);
      break;
    }
    case Op::ReluGrad:
      return;
    case Op::LogTwoCosh: {
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k)
        t.data()[k] = g.data()[k] * std::tanh(va.data()[k]);
      accumulate(n.a, t);
      break;
    }
    case Op::Tanh: {
      const Tensor& v = n.value;
      Tensor t(g.rows(), g.cols());
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double y = v.data()[k];
        t.data()[k] = g.data()[k] * (1.0 - y * y);
      }
      accumulate(n.a, t);
      break;
    }
    case Op::LogdetSpd: {
      const int m = static_cast<int>(va.rows());
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          buf[static_cast<std::size_t>(i) * m + j] =
              0.5 * (va(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +
                     va(static_cast<std::size_t>(j), static_cast<std::size_t>(i)));
      chol_inplace(m, buf.data());
      std::vector<double> inv(static_cast<std::size_t>(m) * m);
      chol_inverse(m, buf.data(), inv.data());
      Tensor t(va.rows(), va.cols());
      const double s = g.data()[0];
      for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = s * inv[k];
      accumulate(n.a, t);
      break;
    }
    case Op::SpdInverse: {
      // adjoint of H -> H^{-1}: -H^{-1} G H^{-1} with the stored inverse
      const Tensor& v = n.value;
      const int m = static_cast<int>(v.rows());
      ConstMap mi(v.data(), m, m);
      ConstMap mg(g.data(), m, m);
      Tensor t(v.rows(), v.cols());
      MutMap mt(t.data(), m, m);
      mt.noalias() = -(mi * mg * mi);
      accumulate(n.a, t);
      break;
    }
    case Op::BatchLogdetSpd: {
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      Tensor t = Tensor::zeros(va.rows(), va.cols());
      std::vector<double> buf(static_cast<std::size_t>(m) * m);
      std::vector<double> inv(static_cast<std::size_t>(m) * m);
      for (std::size_t b = 0; b < bsz; ++b) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j)
            buf[static_cast<std::size_t>(i) * m + j] =
                0.5 * (va(static_cast<std::size_t>(j * m + i), b) +
                       va(static_cast<std::size_t>(i * m + j), b));
        chol_inplace(m, buf.data());
        chol_inverse(m, buf.data(), inv.data());
        const double s = g(0, b);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < m; ++j)
            t(static_cast<std::size_t>(j * m + i), b) =
                s * inv[static_cast<std::size_t>(i) * m + j];
      }
      accumulate(n.a, t);
      break;
    }
    case Op::BatchSpdInverse: {
      const Tensor& v = n.value;
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      Tensor t = Tensor::zeros(va.rows(), va.cols());
      std::vector<double> tmp(static_cast<std::size_t>(m) * m);
      for (std::size_t b = 0; b < bsz; ++b) {
        // tmp = Inv * G (column-major blocks within the column)
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int k = 0; k < m; ++k)
              s += v(static_cast<std::size_t>(k * m + i), b) *
                   g(static_cast<std::size_t>(j * m + k), b);
            tmp[static_cast<std::size_t>(j) * m + i] = s;
          }
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int k = 0; k < m; ++k)
              s += tmp[static_cast<std::size_t>(k) * m + i] *
                   v(static_cast<std::size_t>(j * m + k), b);
            t(static_cast<std::size_t>(j * m + i), b) = -s;
          }
      }
      accumulate(n.a, t);
      break;
    }
    case Op::BatchMatMul: {
      const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      Tensor ta = Tensor::zeros(va.rows(), va.cols());
      Tensor tb = Tensor::zeros(vb.rows(), vb.cols());
      for (std::size_t b = 0; b < bsz; ++b) {
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int k = 0; k < m; ++k)
              s += g(static_cast<std::size_t>(k * m + i), b) *
                   vb(static_cast<std::size_t>(k * m + j), b);
            ta(static_cast<std::size_t>(j * m + i), b) = s;
          }
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int k = 0; k < m; ++k)
              s += va(static_cast<std::size_t>(i * m + k), b) *
                   g(static_cast<std::size_t>(j * m + k), b);
            tb(static_cast<std::size_t>(j * m + i), b) = s;
          }
      }
      accumulate(n.a, ta);
      accumulate(n.b, tb);
      break;
    }
    case Op::BatchMatTranspose: {
      const int m = n.i0;
      const std::size_t bsz = va.cols();
      Tensor t(va.rows(), va.cols());
      for (std::size_t b = 0; b < bsz; ++b)
        for (int j = 0; j < m; ++j)
          for (int i = 0; i < m; ++i)
            t(static_cast<std::size_t>(j * m + i), b) =
                g(static_cast<std::size_t>(i * m + j), b);
      accumulate(n.a, t);
      break;
    }
    default:
      fail("unhandled op in backward", id);
  }
}

const Tensor& Graph::adjoint(int id) const {
  require(id);
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_adjoint)
    throw GraphError("node " + std::to_string(id) + " has no adjoint", id);
  return n.adjoint;
}

bool Graph::has_adjoint(int id) const {
  require(id);
  return nodes_[static_cast<std::size_t>(id)].has_adjoint;
}

Tensor Graph::gradient(const std::string& leaf_name) const {
  const int id = leaf(leaf_name);
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_adjoint) return Tensor::zeros(n.rows, n.cols);
  return n.adjoint;
}

std::vector<int> Graph::grad_nodes(int root_id, const std::vector<int>& wrt,
                                   int seed_node) {
  require(root_id);
  const int limit = static_cast<int>(nodes_.size());

  // forward closure: nodes whose value depends on some wrt node
  std::vector<char> relevant(static_cast<std::size_t>(limit), 0);
  for (int w : wrt) {
    require(w);
    if (w >= limit) throw GraphError("wrt node beyond graph");
    relevant[static_cast<std::size_t>(w)] = 1;
  }
  for (int i = 0; i <= root_id; ++i) {
    if (relevant[static_cast<std::size_t>(i)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.a >= 0 && relevant[static_cast<std::size_t>(n.a)])
      relevant[static_cast<std::size_t>(i)] = 1;
    else if (n.b >= 0 && relevant[static_cast<std::size_t>(n.b)])
      relevant[static_cast<std::size_t>(i)] = 1;
  }

  std::map<int, int> pending;
  std::unordered_map<int, int> results;
  std::unordered_set<int> wrt_set(wrt.begin(), wrt.end());
  if (relevant[static_cast<std::size_t>(root_id)]) {
    if (seed_node < 0) seed_node = ones_like(root_id);
    pending[root_id] = seed_node;
  }

  while (!pending.empty()) {
    auto it = std::prev(pending.end());
    const int id = it->first;
    const int gid = it->second;
    pending.erase(it);
    if (wrt_set.count(id)) {
      results[id] = gid;
      continue;
    }
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Input || n.op == Op::Param || n.op == Op::Const) continue;
    // emit symbolic adjoints into relevant parents only
    auto push = [&](int parent, int contrib) {
      if (parent < 0 || !relevant[static_cast<std::size_t>(parent)]) return;
      auto pit = pending.find(parent);
      if (pit == pending.end())
        pending[parent] = contrib;
      else
        pit->second = add(pit->second, contrib);
    };
    emit_vjp_into(id, gid, push);
  }

  std::vector<int> out;
  out.reserve(wrt.size());
  for (int w : wrt) {
    auto rit = results.find(w);
    out.push_back(rit == results.end() ? zeros_like(w) : rit->second);
  }
  return out;
}

std::vector<int> Graph::jvp_nodes(const std::vector<std::pair<int, int>>& seeds,
                                  const std::vector<int>& targets) {
  if (seeds.empty()) throw GraphError("jvp_nodes: no seeds");
  int lo = seeds.front().first;
  for (const auto& [node_id, tangent_id] : seeds) {
    require(node_id);
    require(tangent_id);
    const Node& n = nodes_[static_cast<std::size_t>(node_id)];
    const Node& t = nodes_[static_cast<std::size_t>(tangent_id)];
    if (n.rows != t.rows || n.cols != t.cols)
      throw GraphError("jvp_nodes: tangent shape mismatch for node " +
                       std::to_string(node_id));
    lo = std::min(lo, node_id);
  }
  int hi = lo;
  for (int t : targets) {
    require(t);
    hi = std::max(hi, t);
  }

  std::unordered_map<int, int> tangent;
  for (const auto& [node_id, tangent_id] : seeds) tangent[node_id] = tangent_id;

  for (int i = lo + 1; i <= hi; ++i) {
    if (tangent.count(i)) continue;  // seeded
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Op::Input || n.op == Op::Param || n.op == Op::Const) continue;
    int ta = -1, tb = -1;
    if (n.a >= 0) {
      auto it = tangent.find(n.a);
      if (it != tangent.end()) ta = it->second;
    }
    if (n.b >= 0) {
      auto it = tangent.find(n.b);
      if (it != tangent.end()) tb = it->second;
    }
    if (ta < 0 && tb < 0) continue;
    const int t = emit_jvp(i, ta, tb);
    if (t >= 0) tangent[i] = t;
  }

  std::vector<int> out;
  out.reserve(targets.size());
  for (int t : targets) {
    auto it = tangent.find(t);
    out.push_back(it == tangent.end() ? zeros_like(t) : it->second);
  }
  return out;
}

void Graph::emit_vjp_into(int id, int gid,
                          const std::function<void(int, int)>& push) {
  const Node n = nodes_[static_cast<std::size_t>(id)];  // copy: emission reallocates
  switch (n.op) {
    case Op::Transpose:
      push(n.a, transpose(gid));
      break;
    case Op::ConcatRows: {
      const int ra = static_cast<int>(nodes_[static_cast<std::size_t>(n.a)].rows);
      const int rb = static_cast<int>(nodes_[static_cast<std::size_t>(n.b)].rows);
      push(n.a, slice_rows(gid, 0, ra));
      push(n.b, slice_rows(gid, ra, ra + rb));
      break;
    }
    case Op::SliceRows: {
      const int total = static_cast<int>(nodes_[static_cast<std::size_t>(n.a)].rows);
      push(n.a, pad_rows(gid, n.i0, total));
      break;
    }
    case Op::PadRows: {
      const int ra = static_cast<int>(nodes_[static_cast<std::size_t>(n.a)].rows);
      push(n.a, slice_rows(gid, n.i0, n.i0 + ra));
      break;
    }
    case Op::Add:
      push(n.a, gid);
      push(n.b, gid);
      break;
    case Op::Hadamard:
      push(n.a, hadamard(gid, n.b));
      push(n.b, hadamard(gid, n.a));
      break;
    case Op::Scale:
      push(n.a, scale(gid, n.c));
      break;
    case Op::ScalarMul:
      push(n.a, sum_all(hadamard(gid, n.b)));
      push(n.b, scalar_mul(n.a, gid));
      break;
    case Op::AddColVec:
      push(n.a, gid);
      push(n.b, row_sum(gid));
      break;
    case Op::RowMul:
      push(n.a, row_mul(gid, n.b));
      push(n.b, col_sum(hadamard(gid, n.a)));
      break;
    case Op::MatMul:
      push(n.a, matmul(gid, transpose(n.b)));
      push(n.b, matmul(transpose(n.a), gid));
      break;
    case Op::SumAll:
      push(n.a, scalar_mul(gid, ones_like(n.a)));
      break;
    case Op::ColSum:
      push(n.a, row_mul(ones_like(n.a), gid));
      break;
    case Op::RowSum:
      push(n.a, add_colvec(zeros_like(n.a), gid));
      break;
    case Op::SquareNormAll:
      push(n.a, scalar_mul(scale(gid, 2.0), n.a));
      break;
    case Op::ColSquareNorm:
      push(n.a, scale(row_mul(n.a, gid), 2.0));
      break;
    case Op::Softplus:
      push(n.a, hadamard(gid, sigmoid(n.a)));
      break;
    case Op::Sigmoid: {
      const int deriv = add(id, scale(hadamard(id, id), -1.0));
      push(n.a, hadamard(gid, deriv));
      break;
    }
    case Op::Elu:
      push(n.a, hadamard(gid, elu_grad(n.a)));
      break;
    case Op::EluGrad: {
      const int deriv = hadamard(id, relu_grad(scale(n.a, -1.0)));
      push(n.a, hadamard(gid, deriv));
      break;
    }
    case Op::Relu:
      push(n.a, hadamard(gid, relu_grad(n.a)));
      break;
    case Op::ReluGrad:
      break;  // derivative is zero almost everywhere
    case Op::LogTwoCosh:
      push(n.a, hadamard(gid, tanh_(n.a)));
      break;
    case Op::Tanh: {
      const int deriv = add(ones_like(id), scale(hadamard(id, id), -1.0));
      push(n.a, hadamard(gid, deriv));
      break;
    }
    case Op::LogdetSpd:
      push(n.a, scalar_mul(gid, spd_inverse(n.a)));
      break;
    case Op::SpdInverse:
      push(n.a, scale(matmul(matmul(id, gid), id), -1.0));
      break;
    case Op::BatchLogdetSpd:
      push(n.a, row_mul(batch_spd_inverse(n.a, n.i0), gid));
      break;
    case Op::BatchSpdInverse:
      push(n.a, scale(batch_mat_mul(batch_mat_mul(id, gid, n.i0), id, n.i0), -1.0));
      break;
    case Op::BatchMatMul:
      push(n.a, batch_mat_mul(gid, batch_mat_transpose(n.b, n.i0), n.i0));
      push(n.b, batch_mat_mul(batch_mat_transpose(n.a, n.i0), gid, n.i0));
      break;
    case Op::BatchMatTranspose:
      push(n.a, batch_mat_transpose(gid, n.i0));
      break;
    default:
      fail("unhandled op in adjoint emission", id);
  }
}

int Graph::emit_jvp(int id, int ta, int tb) {
  const Node n = nodes_[static_cast<std::size_t>(id)];  // copy: emission reallocates
  switch (n.op) {
    case Op::Transpose:
      return transpose(ta);
    case Op::ConcatRows: {
      if (ta < 0) ta = zeros_like(n.a);
      if (tb < 0) tb = zeros_like(n.b);
      return concat_rows(ta, tb);
    }
    case Op::SliceRows:
      return slice_rows(ta, n.i0, n.i1);
    case Op::PadRows:
      return pad_rows(ta, n.i0, n.i1);
    case Op::Add:
      if (ta < 0) return tb;
      if (tb < 0) return ta;
      return add(ta, tb);
    case Op::Hadamard: {
      int out = -1;
      if (ta >= 0) out = hadamard(ta, n.b);
      if (tb >= 0) {
        const int t2 = hadamard(n.a, tb);
        out = out < 0 ? t2 : add(out, t2);
      }
      return out;
    }
    case Op::Scale:
      return scale(ta, n.c);
    case Op::ScalarMul: {
      int out = -1;
      if (ta >= 0) out = scalar_mul(ta, n.b);
      if (tb >= 0) {
        const int t2 = scalar_mul(n.a, tb);
        out = out < 0 ? t2 : add(out, t2);
      }
      return out;
    }
    case Op::AddColVec: {
      if (ta >= 0 && tb >= 0) return add_colvec(ta, tb);
      if (ta >= 0) return ta;
      return add_colvec(zeros_like(n.a), tb);
    }
    case Op::RowMul: {
      int out = -1;
      if (ta >= 0) out = row_mul(ta, n.b);
      if (tb >= 0) {
        const int t2 = row_mul(n.a, tb);
        out = out < 0 ? t2 : add(out, t2);
      }
      return out;
    }
    case Op::MatMul: {
      int out = -1;
      if (ta >= 0) out = matmul(ta, n.b);
      if (tb >= 0) {
        const int t2 = matmul(n.a, tb);
        out = out < 0 ? t2 : add(out, t2);
      }
      return out;
    }
    case Op::SumAll:
      return sum_all(ta);
    case Op::ColSum:
      return col_sum(ta);
    case Op::RowSum:
      return row_sum(ta);
    case Op::SquareNormAll:
      return scale(sum_all(hadamard(n.a, ta)), 2.0);
    case Op::ColSquareNorm:
      return scale(col_sum(hadamard(n.a, ta)), 2.0);
    case Op::Softplus:
      return hadamard(ta, sigmoid(n.a));
    case Op::Sigmoid: {
      const int deriv = add(id, scale(hadamard(id, id), -1.0));
      return hadamard(ta, deriv);
    }
    case Op::Elu:
      return hadamard(ta, elu_grad(n.a));
    case Op::EluGrad: {
      const int deriv = hadamard(id, relu_grad(scale(n.a, -1.0)));
      return hadamard(ta, deriv);
    }
    case Op::Relu:
      return hadamard(ta, relu_grad(n.a));
    case Op::ReluGrad:
      return -1;
    case Op::LogTwoCosh:
      return hadamard(ta, tanh_(n.a));
    case Op::Tanh: {
      const int deriv = add(ones_like(id), scale(hadamard(id, id), -1.0));
      return hadamard(ta, deriv);
    }
    case Op::LogdetSpd:
      return sum_all(hadamard(spd_inverse(n.a), ta));
    case Op::SpdInverse:
      return scale(matmul(matmul(id, ta), id), -1.0);
    case Op::BatchLogdetSpd:
      return col_sum(hadamard(batch_spd_inverse(n.a, n.i0), ta));
    case Op::BatchSpdInverse:
      return scale(batch_mat_mul(batch_mat_mul(id, ta, n.i0), id, n.i0), -1.0);
    case Op::BatchMatMul: {
      int out = -1;
      if (ta >= 0) out = batch_mat_mul(ta, n.b, n.i0);
      if (tb >= 0) {
        const int t2 = batch_mat_mul(n.a, tb, n.i0);
        out = out < 0 ? t2 : add(out, t2);
      }
      return out;
    }
    case Op::BatchMatTranspose:
      return batch_mat_transpose(ta, n.i0);
    default:
      fail("unhandled op in tangent emission", id);
  }
}

double spd_logdet(const Tensor& h) {
  if (h.rows() != h.cols() || h.rows() == 0)
    throw GraphError("spd_logdet: matrix is not square: " + h.shape_str());
  const int m = static_cast<int>(h.rows());
  const double tol = 1e-10 * std::max(1.0, h.max_abs());
  std::vector<double> buf(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double hij = h(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      const double hji = h(static_cast<std::size_t>(j), static_cast<std::size_t>(i));
      if (std::fabs(hij - hji) > tol)
        throw GraphError("spd_logdet: matrix is not symmetric at (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");
      buf[static_cast<std::size_t>(i) * m + j] = 0.5 * (hij + hji);
    }
  const int pivot = chol_inplace(m, buf.data());
  if (pivot >= 0)
    throw FactorizationError(
        "spd_logdet: matrix is not positive definite at pivot " +
            std::to_string(pivot),
        pivot);
  return chol_logdet(m, buf.data());
}

Tensor hvp(Graph& g, const std::string& leaf_name, const Tensor& v) {
  const int r = g.root();
  const Node& rn = g.node(r);
  if (rn.rows != 1 || rn.cols != 1)
    throw GraphError("hvp: root must be scalar, got (" + std::to_string(rn.rows) +
                     "," + std::to_string(rn.cols) + ")");
  const int x = g.leaf(leaf_name);
  const Node& xn = g.node(x);
  if (xn.rows != v.rows() || xn.cols != v.cols())
    throw GraphError("hvp: direction shape mismatch for leaf '" + leaf_name + "'");
  const auto grads = g.grad_nodes(r, {x});
  const int tv = g.constant(v);
  const auto tangents = g.jvp_nodes({{x, tv}}, grads);
  g.evaluate();
  return g.value(tangents[0]);
}

Tensor dense_hessian(Graph& g, const std::string& leaf_name) {
  const int r = g.root();
  const Node& rn = g.node(r);
  if (rn.rows != 1 || rn.cols != 1)
    throw GraphError("dense_hessian: root must be scalar");
  const int x = g.leaf(leaf_name);
  const Node& xn = g.node(x);
  if (xn.cols != 1)
    throw GraphError("dense_hessian: leaf '" + leaf_name + "' must be a column");
  const std::size_t n = xn.rows;
  const auto grads = g.grad_nodes(r, {x});
  std::vector<int> cols;
  cols.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor e = Tensor::zeros(n, 1);
    e.data()[j] = 1.0;
    const int tv = g.constant(e);
    cols.push_back(g.jvp_nodes({{x, tv}}, grads)[0]);
  }
  g.evaluate();
  Tensor h(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const Tensor& c = g.value(cols[j]);
    for (std::size_t i = 0; i < n; ++i) h(i, j) = c.data()[i];
  }
  return h;
}

}  // namespace cotlab
