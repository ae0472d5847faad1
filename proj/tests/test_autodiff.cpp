#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "cotlab/graph.hpp"
#include "cotlab/rng.hpp"
#include "cotlab/tensor.hpp"
#include "helpers.hpp"

using namespace cotlab;
using namespace testutil;

namespace {

struct OpCase {
  const char* name;
  std::vector<Tensor> inputs;
  std::function<int(Graph&, const std::vector<int>&)> build;
  std::vector<DirKind> dirs;
  int sym_n = 0;
};

// Builds the case's graph twice: once for reverse-mode gradients, then inside
// a closure for central finite differences along random directions.
void check_case(const OpCase& c, Rng& rng, double tol = 1e-6) {
  auto eval = [&](const std::vector<Tensor>& xs) {
    Graph g;
    std::vector<int> ids;
    for (std::size_t i = 0; i < xs.size(); ++i)
      ids.push_back(g.input("in" + std::to_string(i), xs[i]));
    g.set_root(c.build(g, ids));
    return g.evaluate().item();
  };

  Graph g;
  std::vector<int> ids;
  for (std::size_t i = 0; i < c.inputs.size(); ++i)
    ids.push_back(g.input("in" + std::to_string(i), c.inputs[i]));
  g.set_root(c.build(g, ids));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));

  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor grad = g.gradient("in" + std::to_string(i));
    for (int rep = 0; rep < 3; ++rep) {
      const Tensor dir = random_direction(rng, c.inputs[i], c.dirs[i], c.sym_n);
      const double ad = dot_all(grad, dir);
      const double fd = fd_directional(eval, c.inputs, i, dir);
      INFO(c.name << " input " << i << " rep " << rep);
      CHECK(rel_err(ad, fd) < tol);
    }
  }
}

Tensor away_from_kinks(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    t.data()[k] = sign * rng.uniform(0.15, 2.0);
  }
  return t;
}

}  // namespace

TEST_CASE("half square norm example") {
  Graph g;
  const int x = g.input("x", Tensor::col({1.0, 2.0, 3.0}));
  g.set_root(g.scale(g.square_norm_all(x), 0.5));
  CHECK(g.evaluate().item() == doctest::Approx(7.0).epsilon(1e-14));
  g.backward(Tensor::scalar(1.0));
  const Tensor grad = g.gradient("x");
  CHECK(grad(0, 0) == doctest::Approx(1.0));
  CHECK(grad(1, 0) == doctest::Approx(2.0));
  CHECK(grad(2, 0) == doctest::Approx(3.0));
}

TEST_CASE("softplus at zero is log 2") {
  Graph g;
  const int x = g.input("x", Tensor::scalar(0.0));
  g.set_root(g.softplus(x));
  CHECK(g.evaluate().item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("evaluate is idempotent and rebinding works") {
  Graph g;
  const int x = g.input("x", Tensor::col({2.0}));
  g.set_root(g.square_norm_all(x));
  CHECK(g.evaluate().item() == doctest::Approx(4.0));
  CHECK(g.evaluate().item() == doctest::Approx(4.0));
  g.bind("x", Tensor::col({3.0}));
  CHECK(g.evaluate({}).item() == doctest::Approx(9.0));
  CHECK(g.evaluate({{"x", Tensor::col({5.0})}}).item() == doctest::Approx(25.0));
}

TEST_CASE("a value tensor can seed two graphs") {
  const Tensor x = Tensor::col({1.0, -1.0});
  Graph g1, g2;
  g1.set_root(g1.square_norm_all(g1.input("x", x)));
  g2.set_root(g2.sum_all(g2.input("x", x)));
  CHECK(g1.evaluate().item() == doctest::Approx(2.0));
  CHECK(g2.evaluate().item() == doctest::Approx(0.0));
}

TEST_CASE("usage errors are structured") {
  Graph empty;
  CHECK_THROWS_AS(empty.evaluate(), GraphError);

  Graph g;
  const int x = g.input("x", Tensor::col({1.0, 2.0}));
  CHECK_THROWS_AS(g.backward(Tensor::scalar(1.0)), GraphError);  // before evaluate
  CHECK_THROWS_AS(g.input("x", Tensor::scalar(0.0)), GraphError);
  CHECK_THROWS_AS(g.bind("nope", Tensor::scalar(0.0)), GraphError);
  CHECK_THROWS_AS(g.bind("x", Tensor::scalar(0.0)), GraphError);  // shape mismatch

  // shape mismatch at build names the offending nodes
  const int y = g.input("y", Tensor::zeros(3, 1));
  try {
    g.add(x, y);
    FAIL("expected GraphError");
  } catch (const GraphError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("shape mismatch") != std::string::npos);
  }
  CHECK_THROWS_AS(g.matmul(x, x), GraphError);
  CHECK_THROWS_AS(g.logdet_spd(g.constant(Tensor::zeros(2, 3))), GraphError);
}

TEST_CASE("spd logdet values and errors") {
  CHECK(spd_logdet(Tensor::identity(3)) == doctest::Approx(0.0).epsilon(1e-14));

  Tensor d2 = Tensor::zeros(2, 2);
  d2(0, 0) = 2.0;
  d2(1, 1) = 2.0;
  CHECK(spd_logdet(d2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

  Tensor asym = Tensor::identity(2);
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(spd_logdet(asym), GraphError);

  Tensor indef = Tensor::identity(2);
  indef(1, 1) = -1.0;
  try {
    spd_logdet(indef);
    FAIL("expected FactorizationError");
  } catch (const FactorizationError& e) {
    CHECK(e.pivot == 1);
  }
}

TEST_CASE("logdet adjoint of scaled identity is identity over c") {
  for (double c : {0.5, 2.0, 7.0}) {
    Graph g;
    Tensor h = Tensor::identity(3);
    for (std::size_t i = 0; i < 3; ++i) h(i, i) = c;
    const int hl = g.input("h", h);
    g.set_root(g.logdet_spd(hl));
    g.evaluate();
    g.backward(Tensor::scalar(1.0));
    const Tensor adj = g.gradient("h");
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(adj(i, j) == doctest::Approx(i == j ? 1.0 / c : 0.0).epsilon(1e-12));
  }
}

TEST_CASE("every primitive matches central differences") {
  Rng rng(20260819);
  for (int instance = 0; instance < 100; ++instance) {
    std::vector<OpCase> cases;

    cases.push_back({"transpose",
                     {random_tensor(rng, 3, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.transpose(in[0]));
                     },
                     {DirKind::Dense}});
    cases.push_back({"concat_rows",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 4, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.concat_rows(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"slice_rows",
                     {random_tensor(rng, 5, 2)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.slice_rows(in[0], 1, 4));
                     },
                     {DirKind::Dense}});
    cases.push_back({"pad_rows",
                     {random_tensor(rng, 2, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.pad_rows(in[0], 2, 6));
                     },
                     {DirKind::Dense}});
    cases.push_back({"add",
                     {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.add(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"hadamard",
                     {random_tensor(rng, 3, 2), random_tensor(rng, 3, 2)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.hadamard(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"scale",
                     {random_tensor(rng, 2, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.scale(in[0], -1.7));
                     },
                     {DirKind::Dense}});
    cases.push_back({"scalar_mul",
                     {random_tensor(rng, 1, 1), random_tensor(rng, 3, 2)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.scalar_mul(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"add_colvec",
                     {random_tensor(rng, 3, 4), random_tensor(rng, 3, 1)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.add_colvec(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"row_mul",
                     {random_tensor(rng, 3, 4), random_tensor(rng, 1, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.row_mul(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"matmul",
                     {random_tensor(rng, 3, 2), random_tensor(rng, 2, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.matmul(in[0], in[1]));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"sum_all",
                     {random_tensor(rng, 3, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.sum_all(g.hadamard(in[0], in[0]));
                     },
                     {DirKind::Dense}});
    cases.push_back({"col_sum",
                     {random_tensor(rng, 4, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.col_sum(in[0]));
                     },
                     {DirKind::Dense}});
    cases.push_back({"row_sum",
                     {random_tensor(rng, 4, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.row_sum(in[0]));
                     },
                     {DirKind::Dense}});
    cases.push_back({"square_norm_all",
                     {random_tensor(rng, 3, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.scale(g.square_norm_all(in[0]), 0.5);
                     },
                     {DirKind::Dense}});
    cases.push_back({"col_square_norm",
                     {random_tensor(rng, 3, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.col_square_norm(in[0]));
                     },
                     {DirKind::Dense}});

    for (auto unary : {&Graph::softplus, &Graph::sigmoid, &Graph::log_two_cosh,
                       &Graph::tanh_}) {
      cases.push_back({"smooth unary",
                       {random_tensor(rng, 3, 3)},
                       [unary](Graph& g, const std::vector<int>& in) {
                         return g.square_norm_all((g.*unary)(in[0]));
                       },
                       {DirKind::Dense}});
    }
    for (auto unary : {&Graph::elu, &Graph::elu_grad, &Graph::relu}) {
      cases.push_back({"kinked unary",
                       {away_from_kinks(rng, 3, 3)},
                       [unary](Graph& g, const std::vector<int>& in) {
                         return g.square_norm_all((g.*unary)(in[0]));
                       },
                       {DirKind::Dense}});
    }

    cases.push_back({"logdet_spd",
                     {random_spd(rng, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.logdet_spd(in[0]);
                     },
                     {DirKind::SymSingle}});
    cases.push_back({"spd_inverse",
                     {random_spd(rng, 3)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.spd_inverse(in[0]));
                     },
                     {DirKind::SymSingle}});
    cases.push_back({"batch_logdet_spd",
                     {random_spd_batch(rng, 3, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.sum_all(g.batch_logdet_spd(in[0], 3));
                     },
                     {DirKind::SymBatch},
                     3});
    cases.push_back({"batch_spd_inverse",
                     {random_spd_batch(rng, 3, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.batch_spd_inverse(in[0], 3));
                     },
                     {DirKind::SymBatch},
                     3});
    cases.push_back({"batch_mat_mul",
                     {random_tensor(rng, 9, 4), random_tensor(rng, 9, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.batch_mat_mul(in[0], in[1], 3));
                     },
                     {DirKind::Dense, DirKind::Dense}});
    cases.push_back({"batch_mat_transpose",
                     {random_tensor(rng, 9, 4)},
                     [](Graph& g, const std::vector<int>& in) {
                       return g.square_norm_all(g.batch_mat_transpose(in[0], 3));
                     },
                     {DirKind::Dense}});

    for (const auto& c : cases) check_case(c, rng);
  }
}

TEST_CASE("relu_grad is treated as locally constant") {
  Rng rng(7);
  Graph g;
  const Tensor x = away_from_kinks(rng, 3, 2);
  const int xl = g.input("x", x);
  g.set_root(g.sum_all(g.hadamard(g.relu_grad(xl), g.constant(random_tensor(rng, 3, 2)))));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  CHECK(g.gradient("x").max_abs() == 0.0);
}

TEST_CASE("hvp of half square norm returns the direction") {
  Rng rng(11);
  Graph g;
  const int x = g.input("x", random_tensor(rng, 4, 1));
  g.set_root(g.scale(g.square_norm_all(x), 0.5));
  const Tensor v = random_tensor(rng, 4, 1);
  const Tensor hv = hvp(g, "x", v);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(hv(i, 0) == doctest::Approx(v(i, 0)).epsilon(1e-12));
}

TEST_CASE("hvp matches the quadratic forms matrix and is linear") {
  Rng rng(13);
  const Tensor a = random_tensor(rng, 5, 3);

  auto fresh = [&](Graph& g) {
    const int x = g.input("x", random_tensor(rng, 3, 1));
    g.set_root(g.scale(g.square_norm_all(g.matmul(g.constant(a), x)), 0.5));
  };

  // Hessian is A^T A
  Tensor ata(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a(k, i) * a(k, j);
      ata(i, j) = s;
    }

  const Tensor v = random_tensor(rng, 3, 1);
  const Tensor w = random_tensor(rng, 3, 1);
  Graph g1;
  fresh(g1);
  const Tensor hv = hvp(g1, "x", v);
  for (std::size_t i = 0; i < 3; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 3; ++j) want += ata(i, j) * v(j, 0);
    CHECK(hv(i, 0) == doctest::Approx(want).epsilon(1e-10));
  }

  // linearity to 1e-12: H(av + bw) = a Hv + b Hw
  const double alpha = 1.25, beta = -0.75;
  Tensor vw(3, 1);
  for (std::size_t i = 0; i < 3; ++i) vw(i, 0) = alpha * v(i, 0) + beta * w(i, 0);
  Graph g2, g3, g4;
  fresh(g2);
  fresh(g3);
  fresh(g4);
  const Tensor hvw = hvp(g2, "x", vw);
  const Tensor hv2 = hvp(g3, "x", v);
  const Tensor hw2 = hvp(g4, "x", w);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::fabs(hvw(i, 0) - alpha * hv2(i, 0) - beta * hw2(i, 0)) < 1e-12);
}

TEST_CASE("hvp matches finite differences of the gradient on a smooth composite") {
  Rng rng(17);
  const Tensor w = random_tensor(rng, 4, 3);
  const Tensor x0 = random_tensor(rng, 3, 1);

  auto grad_at = [&](const Tensor& x) {
    Graph g;
    const int xl = g.input("x", x);
    const int y = g.softplus(g.matmul(g.constant(w), xl));
    g.set_root(g.add(g.sum_all(y), g.scale(g.square_norm_all(xl), 0.5)));
    g.evaluate();
    g.backward(Tensor::scalar(1.0));
    return g.gradient("x");
  };

  Graph g;
  const int xl = g.input("x", x0);
  const int y = g.softplus(g.matmul(g.constant(w), xl));
  g.set_root(g.add(g.sum_all(y), g.scale(g.square_norm_all(xl), 0.5)));

  const Tensor v = random_tensor(rng, 3, 1);
  const Tensor hv = hvp(g, "x", v);

  const double h = 1e-6;
  Tensor xp = x0, xm = x0;
  for (std::size_t i = 0; i < 3; ++i) {
    xp(i, 0) += h * v(i, 0);
    xm(i, 0) -= h * v(i, 0);
  }
  const Tensor gp = grad_at(xp);
  const Tensor gm = grad_at(xm);
  for (std::size_t i = 0; i < 3; ++i) {
    const double fd = (gp(i, 0) - gm(i, 0)) / (2.0 * h);
    CHECK(rel_err(hv(i, 0), fd) < 1e-6);
  }
}

TEST_CASE("assembled Hessians are symmetric") {
  Rng rng(19);
  for (int rep = 0; rep < 20; ++rep) {
    Graph g;
    const int x = g.input("x", random_tensor(rng, 4, 1));
    const Tensor w = random_tensor(rng, 5, 4);
    const int hidden = g.softplus(g.matmul(g.constant(w), x));
    g.set_root(g.add(g.sum_all(hidden), g.scale(g.square_norm_all(x), 0.25)));
    const Tensor h = dense_hessian(g, "x");
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(std::fabs(h(i, j) - h(j, i)) < 1e-10);
  }
}

// The training losses differentiate through gradient and tangent extensions;
// this exercises that path in isolation: d/dW of ||grad_x f(x;W)||^2 / 2.
TEST_CASE("parameter gradients flow through a gradient extension") {
  Rng rng(23);
  const Tensor w0 = random_tensor(rng, 4, 3);
  const Tensor x0 = random_tensor(rng, 3, 1);

  auto value = [&](const std::vector<Tensor>& xs) {
    Graph g;
    const int wl = g.input("w", xs[0]);
    const int xl = g.input("x", x0);
    g.set_root(g.sum_all(g.softplus(g.matmul(wl, xl))));
    const auto gx = g.grad_nodes(g.root(), {xl});
    g.set_root(g.scale(g.square_norm_all(gx[0]), 0.5));
    return g.evaluate().item();
  };

  Graph g;
  const int wl = g.input("w", w0);
  const int xl = g.input("x", x0);
  g.set_root(g.sum_all(g.softplus(g.matmul(wl, xl))));
  const auto gx = g.grad_nodes(g.root(), {xl});
  g.set_root(g.scale(g.square_norm_all(gx[0]), 0.5));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  const Tensor grad_w = g.gradient("w");

  for (int rep = 0; rep < 5; ++rep) {
    const Tensor dir = random_tensor(rng, 4, 3);
    const double ad = dot_all(grad_w, dir);
    const double fd = fd_directional(value, {w0}, 0, dir);
    CHECK(rel_err(ad, fd) < 1e-6);
  }
}

// Full second-order pipeline analogous to the density losses: assemble the
// x-Hessian of a scalar network from tangent sweeps, push it through the
// batched logdet, and differentiate the result with respect to the weights.
TEST_CASE("parameter gradients flow through Hessian assembly and logdet") {
  Rng rng(29);
  const std::size_t n = 3;
  const Tensor w0 = random_tensor(rng, 5, n);
  const Tensor x0 = random_tensor(rng, n, 1);

  auto build = [&](Graph& g, const Tensor& wv) {
    const int wl = g.input("w", wv);
    const int xl = g.input("x", x0);
    const int f = g.add(g.sum_all(g.softplus(g.matmul(wl, xl))),
                        g.scale(g.square_norm_all(xl), 0.5));
    g.set_root(f);
    const auto gx = g.grad_nodes(f, {xl});
    std::vector<int> cols;
    for (std::size_t j = 0; j < n; ++j) {
      Tensor e = Tensor::zeros(n, 1);
      e.data()[j] = 1.0;
      cols.push_back(g.jvp_nodes({{xl, g.constant(e)}}, gx)[0]);
    }
    int stacked = cols[0];
    for (std::size_t j = 1; j < n; ++j) stacked = g.concat_rows(stacked, cols[j]);
    const int logdet = g.batch_logdet_spd(stacked, static_cast<int>(n));
    g.set_root(g.add(g.sum_all(logdet), g.scale(g.square_norm_all(gx[0]), 0.5)));
  };

  auto value = [&](const std::vector<Tensor>& xs) {
    Graph g;
    build(g, xs[0]);
    return g.evaluate().item();
  };

  Graph g;
  build(g, w0);
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  const Tensor grad_w = g.gradient("w");

  for (int rep = 0; rep < 5; ++rep) {
    const Tensor dir = random_tensor(rng, 5, n);
    const double ad = dot_all(grad_w, dir);
    const double fd = fd_directional(value, {w0}, 0, dir);
    CHECK(rel_err(ad, fd) < 1e-6);
  }
}

TEST_CASE("gradient of a disconnected leaf is zero") {
  Graph g;
  const int x = g.input("x", Tensor::col({1.0, 2.0}));
  g.input("unused", Tensor::col({3.0}));
  g.set_root(g.square_norm_all(x));
  g.evaluate();
  g.backward(Tensor::scalar(1.0));
  const Tensor gz = g.gradient("unused");
  CHECK(gz.rows() == 1);
  CHECK(gz.max_abs() == 0.0);
}

TEST_CASE("hvp requires a scalar root") {
  Graph g;
  const int x = g.input("x", Tensor::col({1.0, 2.0}));
  g.set_root(g.scale(x, 2.0));
  CHECK_THROWS_AS(hvp(g, "x", Tensor::col({1.0, 0.0})), GraphError);
}
