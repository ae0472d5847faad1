#include "cotlab/picnn.hpp"

#include <cmath>
#include <stdexcept>

#include "cotlab/rng.hpp"

namespace cotlab {

namespace {

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }

void check_dims(const PicnnDims& d) {
  if (d.n < 1 || d.m < 1 || d.w < 1 || d.u < 1 || d.K < 2)
    throw std::invalid_argument("picnn dims: need n,m,w,u >= 1 and K >= 2");
}

void check_dims(const FicnnDims& d) {
  if (d.m < 1 || d.w < 1 || d.K < 2)
    throw std::invalid_argument("ficnn dims: need m,w >= 1 and K >= 2");
}

// feature width of w_k and context width of v_k
std::size_t wdim(const PicnnDims& d, int k) {
  if (k == 0) return static_cast<std::size_t>(d.n);
  if (k == d.K) return 1;
  return static_cast<std::size_t>(d.w);
}
std::size_t vdim(const PicnnDims& d, int k) {
  return k == 0 ? static_cast<std::size_t>(d.m) : static_cast<std::size_t>(d.u);
}

void require_shape(const Tensor& t, std::size_t r, std::size_t c, const std::string& what) {
  if (t.rows() != r || t.cols() != c)
    throw std::invalid_argument("picnn params: " + what + " has shape " + t.shape_str() +
                                ", expected (" + std::to_string(r) + "," + std::to_string(c) + ")");
}

void validate(const PicnnParams& p) {
  const PicnnDims& d = p.dims;
  check_dims(d);
  const std::size_t K = static_cast<std::size_t>(d.K);
  if (p.Lv.size() != K || p.bv.size() != K || p.Lvw.size() != K || p.Lw.size() != K ||
      p.bw.size() != K || p.Lwv.size() != K || p.bwv.size() != K || p.Lx.size() != K ||
      p.Lxv.size() != K || p.bxv.size() != K)
    throw std::invalid_argument("picnn params: every block list must have K entries");
  for (int k = 0; k < d.K; ++k) {
    const std::string at = " at layer " + std::to_string(k);
    require_shape(p.Lw[k], wdim(d, k + 1), wdim(d, k), "L(w)" + at);
    require_shape(p.bw[k], wdim(d, k + 1), 1, "b(w)" + at);
    require_shape(p.Lwv[k], wdim(d, k), vdim(d, k), "L(wv)" + at);
    require_shape(p.bwv[k], wdim(d, k), 1, "b(wv)" + at);
    require_shape(p.Lvw[k], wdim(d, k + 1), vdim(d, k), "L(vw)" + at);
    if (k <= d.K - 2) {
      require_shape(p.Lv[k], vdim(d, k + 1), vdim(d, k), "L(v)" + at);
      require_shape(p.bv[k], vdim(d, k + 1), 1, "b(v)" + at);
    } else if (!p.Lv[k].empty() || !p.bv[k].empty()) {
      throw std::invalid_argument("picnn params: context blocks must be absent at the last layer");
    }
    if (k >= 1) {
      require_shape(p.Lx[k], wdim(d, k + 1), static_cast<std::size_t>(d.n), "L(x)" + at);
      require_shape(p.Lxv[k], static_cast<std::size_t>(d.n), vdim(d, k), "L(xv)" + at);
      require_shape(p.bxv[k], static_cast<std::size_t>(d.n), 1, "b(xv)" + at);
    } else if (!p.Lx[k].empty() || !p.Lxv[k].empty() || !p.bxv[k].empty()) {
      throw std::invalid_argument("picnn params: direct-input blocks must be absent at layer 0");
    }
  }
}

void validate(const FicnnParams& p) {
  const FicnnDims& d = p.dims;
  check_dims(d);
  const std::size_t K = static_cast<std::size_t>(d.K);
  if (p.Lw.size() != K || p.Ly.size() != K || p.b.size() != K)
    throw std::invalid_argument("ficnn params: every block list must have K entries");
  for (int k = 0; k < d.K; ++k) {
    const std::size_t dout = k == d.K - 1 ? 1 : static_cast<std::size_t>(d.w);
    const std::string at = " at layer " + std::to_string(k);
    require_shape(p.Ly[k], dout, static_cast<std::size_t>(d.m), "L(y)" + at);
    require_shape(p.b[k], dout, 1, "b" + at);
    if (k >= 1)
      require_shape(p.Lw[k], dout, static_cast<std::size_t>(d.w), "L(w)" + at);
    else if (!p.Lw[k].empty())
      throw std::invalid_argument("ficnn params: no propagated-state block at layer 0");
  }
}

Tensor glorot(Rng& rng, std::size_t rows, std::size_t cols, bool nonneg) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double v = rng.uniform(-a, a);
    t.data()[k] = nonneg ? std::fabs(v) : v;
  }
  return t;
}

void clamp_nonneg(Tensor& t) {
  for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = std::max(0.0, t.data()[k]);
}

}  // namespace

int default_context_width(int w, int m) {
  int u = 1;
  while (u < m) u *= 2;
  return std::min(w, u);
}

double StrictPotentialParams::quad_coeff() const {
  return std::max(0.0, gamma2.item()) + stable_softplus(gamma3.item());
}

double StrictPotentialParams::net_coeff() const { return stable_softplus(gamma1.item()); }

std::vector<ParamRef> param_refs(PicnnParams& p, const std::string& prefix) {
  std::vector<ParamRef> refs;
  auto push = [&](const char* base, int k, Tensor& t, bool nonneg) {
    if (!t.empty()) refs.push_back({prefix + base + std::to_string(k), &t, nonneg});
  };
  for (int k = 0; k < p.dims.K; ++k) {
    push("picnn.Lv", k, p.Lv[k], false);
    push("picnn.bv", k, p.bv[k], false);
    push("picnn.Lvw", k, p.Lvw[k], false);
    push("picnn.Lw", k, p.Lw[k], true);
    push("picnn.bw", k, p.bw[k], false);
    push("picnn.Lwv", k, p.Lwv[k], false);
    push("picnn.bwv", k, p.bwv[k], false);
    push("picnn.Lx", k, p.Lx[k], false);
    push("picnn.Lxv", k, p.Lxv[k], false);
    push("picnn.bxv", k, p.bxv[k], false);
  }
  return refs;
}

std::vector<ParamRef> param_refs(StrictPotentialParams& p, const std::string& prefix) {
  std::vector<ParamRef> refs = param_refs(p.picnn, prefix);
  refs.push_back({prefix + "gamma1", &p.gamma1, false});
  refs.push_back({prefix + "gamma2", &p.gamma2, false});
  refs.push_back({prefix + "gamma3", &p.gamma3, false});
  return refs;
}

std::vector<ParamRef> param_refs(FicnnParams& p, const std::string& prefix) {
  std::vector<ParamRef> refs;
  auto push = [&](const char* base, int k, Tensor& t, bool nonneg) {
    if (!t.empty()) refs.push_back({prefix + base + std::to_string(k), &t, nonneg});
  };
  for (int k = 0; k < p.dims.K; ++k) {
    push("ficnn.Lw", k, p.Lw[k], true);
    push("ficnn.Ly", k, p.Ly[k], false);
    push("ficnn.b", k, p.b[k], false);
  }
  return refs;
}

void project_nonneg(PicnnParams& p) {
  for (auto& t : p.Lw) clamp_nonneg(t);
}

void project_nonneg(FicnnParams& p) {
  for (std::size_t k = 1; k < p.Lw.size(); ++k) clamp_nonneg(p.Lw[k]);
}

void project_nonneg(StrictPotentialParams& p) { project_nonneg(p.picnn); }

PicnnParams init_picnn(const PicnnDims& dims, std::uint64_t seed) {
  check_dims(dims);
  Rng rng(seed);
  PicnnParams p;
  p.dims = dims;
  const std::size_t K = static_cast<std::size_t>(dims.K);
  p.Lv.resize(K);
  p.bv.resize(K);
  p.Lvw.resize(K);
  p.Lw.resize(K);
  p.bw.resize(K);
  p.Lwv.resize(K);
  p.bwv.resize(K);
  p.Lx.resize(K);
  p.Lxv.resize(K);
  p.bxv.resize(K);
  for (int k = 0; k < dims.K; ++k) {
    if (k <= dims.K - 2) {
      p.Lv[k] = glorot(rng, vdim(dims, k + 1), vdim(dims, k), false);
      p.bv[k] = Tensor::zeros(vdim(dims, k + 1), 1);
    }
    p.Lvw[k] = glorot(rng, wdim(dims, k + 1), vdim(dims, k), false);
    p.Lw[k] = glorot(rng, wdim(dims, k + 1), wdim(dims, k), true);
    p.bw[k] = Tensor::zeros(wdim(dims, k + 1), 1);
    p.Lwv[k] = glorot(rng, wdim(dims, k), vdim(dims, k), false);
    p.bwv[k] = Tensor::zeros(wdim(dims, k), 1);
    if (k >= 1) {
      p.Lx[k] = glorot(rng, wdim(dims, k + 1), static_cast<std::size_t>(dims.n), false);
      p.Lxv[k] = glorot(rng, static_cast<std::size_t>(dims.n), vdim(dims, k), false);
      p.bxv[k] = Tensor::zeros(static_cast<std::size_t>(dims.n), 1);
    }
  }
  return p;
}

StrictPotentialParams init_strict_potential(const PicnnDims& dims, std::uint64_t seed) {
  StrictPotentialParams p;
  p.picnn = init_picnn(dims, seed);
  p.gamma1 = Tensor::scalar(0.0);
  p.gamma2 = Tensor::scalar(0.0);
  // softplus(0.5413) is 1 to four decimals, so the quadratic term starts near x
  p.gamma3 = Tensor::scalar(0.5413);
  return p;
}

FicnnParams init_ficnn(const FicnnDims& dims, std::uint64_t seed) {
  check_dims(dims);
  Rng rng(seed);
  FicnnParams p;
  p.dims = dims;
  const std::size_t K = static_cast<std::size_t>(dims.K);
  p.Lw.resize(K);
  p.Ly.resize(K);
  p.b.resize(K);
  for (int k = 0; k < dims.K; ++k) {
    const std::size_t dout = k == dims.K - 1 ? 1 : static_cast<std::size_t>(dims.w);
    if (k >= 1) p.Lw[k] = glorot(rng, dout, static_cast<std::size_t>(dims.w), true);
    p.Ly[k] = glorot(rng, dout, static_cast<std::size_t>(dims.m), false);
    p.b[k] = Tensor::zeros(dout, 1);
  }
  return p;
}

int build_picnn(Graph& g, const PicnnParams& p, int x, int y, const std::string& prefix) {
  validate(p);
  auto leaf = [&](const char* base, int k, const Tensor& t) {
    const std::string name = prefix + base + std::to_string(k);
    return g.has_leaf(name) ? g.leaf(name) : g.param(name, t);
  };
  int v = y;
  int w = x;
  for (int k = 0; k < p.dims.K; ++k) {
    // relu keeps the propagated-state combination non-negative and the gate on
    // the propagated state non-negative; both are required for convexity in x
    const int gate = g.relu(g.add_colvec(g.matmul(leaf("picnn.Lwv", k, p.Lwv[k]), v),
                                         leaf("picnn.bwv", k, p.bwv[k])));
    int z = g.matmul(g.relu(leaf("picnn.Lw", k, p.Lw[k])), g.hadamard(w, gate));
    if (k >= 1) {
      const int xgate = g.add_colvec(g.matmul(leaf("picnn.Lxv", k, p.Lxv[k]), v),
                                     leaf("picnn.bxv", k, p.bxv[k]));
      z = g.add(z, g.matmul(leaf("picnn.Lx", k, p.Lx[k]), g.hadamard(x, xgate)));
    }
    z = g.add(z, g.matmul(leaf("picnn.Lvw", k, p.Lvw[k]), v));
    const int w_next = g.softplus(g.add_colvec(z, leaf("picnn.bw", k, p.bw[k])));
    if (k <= p.dims.K - 2)
      v = g.elu(g.add_colvec(g.matmul(leaf("picnn.Lv", k, p.Lv[k]), v),
                             leaf("picnn.bv", k, p.bv[k])));
    w = w_next;
  }
  return w;
}

int build_strict_potential(Graph& g, const StrictPotentialParams& p, int x, int y,
                           const std::string& prefix) {
  const int wk = build_picnn(g, p.picnn, x, y, prefix);
  auto leaf = [&](const char* name, const Tensor& t) {
    const std::string full = prefix + name;
    return g.has_leaf(full) ? g.leaf(full) : g.param(full, t);
  };
  const int net = g.scalar_mul(g.softplus(leaf("gamma1", p.gamma1)), wk);
  const int coeff = g.add(g.relu(leaf("gamma2", p.gamma2)), g.softplus(leaf("gamma3", p.gamma3)));
  const int quad = g.scalar_mul(coeff, g.scale(g.col_square_norm(x), 0.5));
  return g.add(net, quad);
}

int build_ficnn(Graph& g, const FicnnParams& p, int y, const std::string& prefix) {
  validate(p);
  auto leaf = [&](const char* base, int k, const Tensor& t) {
    const std::string name = prefix + base + std::to_string(k);
    return g.has_leaf(name) ? g.leaf(name) : g.param(name, t);
  };
  int s = -1;
  for (int k = 0; k < p.dims.K; ++k) {
    int z = g.add_colvec(g.matmul(leaf("ficnn.Ly", k, p.Ly[k]), y), leaf("ficnn.b", k, p.b[k]));
    if (k >= 1) z = g.add(z, g.matmul(g.relu(leaf("ficnn.Lw", k, p.Lw[k])), s));
    s = g.softplus(z);
  }
  return s;
}

double picnn_forward(const PicnnParams& p, const Tensor& x, const Tensor& y) {
  Graph g;
  const int xl = g.input("x", x);
  const int yl = g.input("y", y);
  g.set_root(build_picnn(g, p, xl, yl));
  return g.evaluate().item();
}

double strict_potential(const StrictPotentialParams& p, const Tensor& x, const Tensor& y) {
  Graph g;
  const int xl = g.input("x", x);
  const int yl = g.input("y", y);
  g.set_root(build_strict_potential(g, p, xl, yl));
  return g.evaluate().item();
}

double ficnn_forward(const FicnnParams& p, const Tensor& y) {
  Graph g;
  g.set_root(build_ficnn(g, p, g.input("y", y)));
  return g.evaluate().item();
}

Tensor potential_grad_x(const StrictPotentialParams& p, const Tensor& x, const Tensor& y) {
  Graph g;
  const int xl = g.input("x", x);
  const int yl = g.input("y", y);
  g.set_root(build_strict_potential(g, p, xl, yl));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  return g.gradient("x");
}

Tensor potential_hessian_x(const StrictPotentialParams& p, const Tensor& x, const Tensor& y) {
  Graph g;
  const int xl = g.input("x", x);
  const int yl = g.input("y", y);
  g.set_root(build_strict_potential(g, p, xl, yl));
  Tensor h = dense_hessian(g, "x");
  if (!h.all_finite()) throw GraphError("potential Hessian has non-finite entries");
  return h;
}

Tensor ficnn_grad(const FicnnParams& p, const Tensor& y) {
  Graph g;
  g.set_root(build_ficnn(g, p, g.input("y", y)));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  return g.gradient("y");
}

Tensor ficnn_hessian(const FicnnParams& p, const Tensor& y) {
  Graph g;
  g.set_root(build_ficnn(g, p, g.input("y", y)));
  Tensor h = dense_hessian(g, "y");
  if (!h.all_finite()) throw GraphError("ficnn Hessian has non-finite entries");
  return h;
}

}  // namespace cotlab
