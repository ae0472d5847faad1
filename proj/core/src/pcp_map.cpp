#include "cotlab/pcp_map.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cotlab/adam.hpp"
#include "train_loop.hpp"
#include "cotlab/lbfgs.hpp"
#include "cotlab/rng.hpp"

namespace cotlab {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Tensor column(const Tensor& t, std::size_t j) {
  Tensor c(t.rows(), 1);
  for (std::size_t i = 0; i < t.rows(); ++i) c(i, 0) = t(i, j);
  return c;
}

Tensor repeat_col(const Tensor& c, std::size_t count) {
  Tensor out(c.rows(), count);
  for (std::size_t j = 0; j < count; ++j)
    for (std::size_t i = 0; i < c.rows(); ++i) out(i, j) = c(i, 0);
  return out;
}

double dot_cols(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
  return s;
}

// per-sample objective of a gradient map: 1/2 ||grad phi||^2 - log det hess phi,
// one column per sample. `pot` must be a (1,B) column-independent node and
// `x_id` the differentiation input.
int density_objective(Graph& g, int pot, int x_id, std::size_t n, std::size_t B) {
  const std::vector<int> gx = g.grad_nodes(pot, {x_id});
  int stacked = -1;
  for (std::size_t j = 0; j < n; ++j) {
    Tensor seed(n, B);
    for (std::size_t b = 0; b < B; ++b) seed(j, b) = 1.0;
    const int seed_id = g.constant(seed);
    const int hcol = g.jvp_nodes({{x_id, seed_id}}, {gx[0]})[0];
    stacked = j == 0 ? hcol : g.concat_rows(stacked, hcol);
  }
  const int ld = g.batch_logdet_spd(stacked, static_cast<int>(n));
  return g.add(g.scale(g.col_square_norm(gx[0]), 0.5), g.scale(ld, -1.0));
}

// reusable loss graph for one batch width
struct LossGraph {
  Graph g;
  int x_id = -1;
  int y_id = -1;  // -1 for the marginal variant
  int per = -1;   // (1,B) per-sample objective
  int loss = -1;  // scalar mean
  std::size_t batch = 0;

  static std::unique_ptr<LossGraph> conditional(const StrictPotentialParams& p, std::size_t B) {
    auto lg = std::make_unique<LossGraph>();
    lg->batch = B;
    const std::size_t n = p.picnn.dims.n, m = p.picnn.dims.m;
    lg->x_id = lg->g.input("x", Tensor(n, B));
    lg->y_id = lg->g.input("y", Tensor(m, B));
    auto& mp = const_cast<StrictPotentialParams&>(p);  // builder only reads
    const int pot = build_strict_potential(lg->g, mp, lg->x_id, lg->y_id);
    lg->per = density_objective(lg->g, pot, lg->x_id, n, B);
    lg->loss = lg->g.scale(lg->g.row_sum(lg->per), 1.0 / static_cast<double>(B));
    lg->g.set_root(lg->loss);
    return lg;
  }

  static std::unique_ptr<LossGraph> marginal(const FicnnParams& p, std::size_t B) {
    auto lg = std::make_unique<LossGraph>();
    lg->batch = B;
    const std::size_t m = p.dims.m;
    lg->x_id = lg->g.input("x", Tensor(m, B));
    auto& mp = const_cast<FicnnParams&>(p);
    const int pot = build_ficnn(lg->g, mp, lg->x_id);
    lg->per = density_objective(lg->g, pot, lg->x_id, m, B);
    lg->loss = lg->g.scale(lg->g.row_sum(lg->per), 1.0 / static_cast<double>(B));
    lg->g.set_root(lg->loss);
    return lg;
  }

  void bind_all(const std::vector<ParamRef>& refs, const Tensor& x, const Tensor* y) {
    for (const auto& r : refs)
      if (r.value->size() > 0) g.bind(r.name, *r.value);
    g.bind("x", x);
    if (y) g.bind("y", *y);
  }

  double value(const std::vector<ParamRef>& refs, const Tensor& x, const Tensor* y) {
    bind_all(refs, x, y);
    return g.evaluate()(0, 0);
  }

  double value_grad(const std::vector<ParamRef>& refs, const Tensor& x, const Tensor* y,
                    std::vector<Tensor>& grads) {
    bind_all(refs, x, y);
    const double v = g.evaluate()(0, 0);
    g.backward();
    grads.clear();
    grads.reserve(refs.size());
    for (const auto& r : refs) grads.push_back(g.gradient(r.name));
    return v;
  }
};

std::vector<ParamRef> refs_of(const StrictPotentialParams& p) {
  return param_refs(const_cast<StrictPotentialParams&>(p));
}

std::vector<ParamRef> refs_of(const FicnnParams& p) {
  return param_refs(const_cast<FicnnParams&>(p));
}

}  // namespace

double nll_loss(const StrictPotentialParams& p, const Tensor& x, const Tensor& y) {
  if (x.cols() == 0 || x.cols() != y.cols()) throw std::invalid_argument("nll_loss: bad batch");
  auto lg = LossGraph::conditional(p, x.cols());
  return lg->value(refs_of(p), x, &y);
}

double nll_loss_grad(StrictPotentialParams& p, const Tensor& x, const Tensor& y,
                     std::vector<Tensor>& grads) {
  if (x.cols() == 0 || x.cols() != y.cols()) throw std::invalid_argument("nll_loss: bad batch");
  auto lg = LossGraph::conditional(p, x.cols());
  return lg->value_grad(param_refs(p), x, &y, grads);
}

double pcp_test_nll(const StrictPotentialParams& p, const Tensor& x, const Tensor& y) {
  return nll_loss(p, x, y) + 0.5 * static_cast<double>(p.picnn.dims.n) * kLog2Pi;
}

double ficnn_nll_loss(const FicnnParams& p, const Tensor& y) {
  if (y.cols() == 0) throw std::invalid_argument("ficnn_nll_loss: empty batch");
  auto lg = LossGraph::marginal(p, y.cols());
  return lg->value(refs_of(p), y, nullptr);
}

double joint_nll(StrictPotentialParams& pot_x, FicnnParams& pot_y, const Tensor& x,
                 const Tensor& y) {
  return nll_loss(pot_x, x, y) + ficnn_nll_loss(pot_y, y);
}

double joint_nll_grad(StrictPotentialParams& pot_x, FicnnParams& pot_y, const Tensor& x,
                      const Tensor& y, std::vector<Tensor>& grads_x, std::vector<Tensor>& grads_y) {
  auto lgx = LossGraph::conditional(pot_x, x.cols());
  auto lgy = LossGraph::marginal(pot_y, y.cols());
  const double a = lgx->value_grad(param_refs(pot_x), x, &y, grads_x);
  const double b = lgy->value_grad(param_refs(pot_y), y, nullptr, grads_y);
  return a + b;
}

double joint_test_nll(const StrictPotentialParams& pot_x, const FicnnParams& pot_y,
                      const Tensor& x, const Tensor& y) {
  const double dim = static_cast<double>(pot_x.picnn.dims.n + pot_y.dims.m);
  return joint_nll(const_cast<StrictPotentialParams&>(pot_x), const_cast<FicnnParams&>(pot_y), x,
                   y) +
         0.5 * dim * kLog2Pi;
}

namespace {

detail::LoopConfig loop_config(const PcpTrainConfig& cfg) {
  return {cfg.batch_size, cfg.learning_rate, cfg.epochs, cfg.seed, cfg.valid_interval,
          cfg.patience};
}

std::string config_json(const PcpTrainConfig& cfg, const char* model, std::size_t n,
                        std::size_t m, std::size_t u) {
  nlohmann::json j;
  j["model"] = model;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["epochs"] = cfg.epochs;
  j["depth"] = cfg.depth;
  j["width"] = cfg.width;
  j["context_width"] = u;
  j["seed"] = cfg.seed;
  j["n"] = n;
  j["m"] = m;
  return j.dump();
}

}  // namespace

PcpTrainResult train(const PcpTrainConfig& cfg, const Dataset& data) {
  const std::size_t n = data.n(), m = data.m();
  const std::size_t u = cfg.context_width
                            ? cfg.context_width
                            : static_cast<std::size_t>(default_context_width(
                                  static_cast<int>(cfg.width), static_cast<int>(m)));
  PicnnDims dims{static_cast<int>(n), static_cast<int>(m), static_cast<int>(cfg.width),
                 static_cast<int>(u), static_cast<int>(cfg.depth)};
  PcpTrainResult out;
  out.params = init_strict_potential(dims, Rng::derive(cfg.seed, 0));
  out.record.config = config_json(cfg, "pcp", n, m, u);

  StrictPotentialParams best = out.params;
  const Tensor xv = cols_of(data.X, data.valid);
  const Tensor yv = cols_of(data.Y, data.valid);
  std::map<std::size_t, std::unique_ptr<LossGraph>> cache;
  auto graph_for = [&](std::size_t B) -> LossGraph& {
    auto& slot = cache[B];
    if (!slot) slot = LossGraph::conditional(out.params, B);
    return *slot;
  };

  detail::TrainLoop tl;
  tl.refs = param_refs(out.params);
  tl.nll_const = 0.5 * static_cast<double>(n) * kLog2Pi;
  tl.batch_loss = [&](const std::vector<int>& rows, std::vector<Tensor>& grads) {
    const Tensor xb = cols_of(data.X, rows);
    const Tensor yb = cols_of(data.Y, rows);
    return graph_for(rows.size()).value_grad(tl.refs, xb, &yb, grads);
  };
  tl.valid_loss = [&] { return graph_for(xv.cols()).value(tl.refs, xv, &yv); };
  tl.snapshot = [&] { best = out.params; };
  tl.restore = [&] { detail::copy_param_values(out.params, best); };
  tl.project = [&] { project_nonneg(out.params); };

  detail::run_train_loop(loop_config(cfg), data, tl, out.record, out.best_valid_nll);
  return out;
}

JointTrainResult train_joint(const PcpTrainConfig& cfg, const Dataset& data) {
  const std::size_t n = data.n(), m = data.m();
  const std::size_t u = cfg.context_width
                            ? cfg.context_width
                            : static_cast<std::size_t>(default_context_width(
                                  static_cast<int>(cfg.width), static_cast<int>(m)));
  PicnnDims dims{static_cast<int>(n), static_cast<int>(m), static_cast<int>(cfg.width),
                 static_cast<int>(u), static_cast<int>(cfg.depth)};
  JointTrainResult out;
  out.pot_x = init_strict_potential(dims, Rng::derive(cfg.seed, 0));
  out.pot_y = init_ficnn(FicnnDims{static_cast<int>(m), static_cast<int>(cfg.width),
                                    static_cast<int>(cfg.depth)},
                          Rng::derive(cfg.seed, 2));
  out.record.config = config_json(cfg, "pcp-joint", n, m, u);

  StrictPotentialParams best_x = out.pot_x;
  FicnnParams best_y = out.pot_y;
  const Tensor xv = cols_of(data.X, data.valid);
  const Tensor yv = cols_of(data.Y, data.valid);
  std::map<std::size_t, std::unique_ptr<LossGraph>> cache_x, cache_y;
  auto graphs_for = [&](std::size_t B) -> std::pair<LossGraph&, LossGraph&> {
    auto& sx = cache_x[B];
    if (!sx) sx = LossGraph::conditional(out.pot_x, B);
    auto& sy = cache_y[B];
    if (!sy) sy = LossGraph::marginal(out.pot_y, B);
    return {*sx, *sy};
  };

  detail::TrainLoop tl;
  tl.refs = param_refs(out.pot_x);
  const std::vector<ParamRef> refs_y = param_refs(out.pot_y);
  tl.refs.insert(tl.refs.end(), refs_y.begin(), refs_y.end());
  const std::size_t nx_refs = tl.refs.size() - refs_y.size();
  tl.nll_const = 0.5 * static_cast<double>(n + m) * kLog2Pi;

  std::vector<Tensor> gx, gy;
  tl.batch_loss = [&](const std::vector<int>& rows, std::vector<Tensor>& grads) {
    auto [lgx, lgy] = graphs_for(rows.size());
    const Tensor xb = cols_of(data.X, rows);
    const Tensor yb = cols_of(data.Y, rows);
    const std::vector<ParamRef> rx(tl.refs.begin(),
                                   tl.refs.begin() + static_cast<std::ptrdiff_t>(nx_refs));
    const std::vector<ParamRef> ry(tl.refs.begin() + static_cast<std::ptrdiff_t>(nx_refs),
                                   tl.refs.end());
    const double a = lgx.value_grad(rx, xb, &yb, gx);
    const double b = lgy.value_grad(ry, yb, nullptr, gy);
    grads = gx;
    grads.insert(grads.end(), gy.begin(), gy.end());
    return a + b;
  };
  tl.valid_loss = [&] {
    auto [lgx, lgy] = graphs_for(xv.cols());
    const std::vector<ParamRef> rx(tl.refs.begin(),
                                   tl.refs.begin() + static_cast<std::ptrdiff_t>(nx_refs));
    const std::vector<ParamRef> ry(tl.refs.begin() + static_cast<std::ptrdiff_t>(nx_refs),
                                   tl.refs.end());
    return lgx.value(rx, xv, &yv) + lgy.value(ry, yv, nullptr);
  };
  tl.snapshot = [&] {
    best_x = out.pot_x;
    best_y = out.pot_y;
  };
  tl.restore = [&] {
    detail::copy_param_values(out.pot_x, best_x);
    detail::copy_param_values(out.pot_y, best_y);
  };
  tl.project = [&] {
    project_nonneg(out.pot_x);
    project_nonneg(out.pot_y);
  };

  detail::run_train_loop(loop_config(cfg), data, tl, out.record, out.best_valid_nll);
  return out;
}

InvertResult invert(const StrictPotentialParams& p, const Tensor& z, const Tensor& y,
                    const SampleConfig& cfg) {
  const std::size_t n = p.picnn.dims.n, m = p.picnn.dims.m;
  if (z.rows() != n || y.rows() != m || z.cols() != y.cols())
    throw std::invalid_argument("invert: shape mismatch");
  if (cfg.tolerance <= 0.0) throw std::invalid_argument("invert: tolerance must be positive");

  Graph g;
  const int x_id = g.input("x", Tensor(n, 1));
  const int y_id = g.input("y", Tensor(m, 1));
  auto& mp = const_cast<StrictPotentialParams&>(p);
  g.set_root(build_strict_potential(g, mp, x_id, y_id));
  for (const auto& r : refs_of(p))
    if (r.value->size() > 0) g.bind(r.name, *r.value);

  LbfgsConfig lcfg;
  lcfg.tol = cfg.tolerance;
  lcfg.max_iters = cfg.max_iterations;
  lcfg.history = cfg.history;

  InvertResult out;
  out.x = Tensor(n, z.cols());
  out.converged.resize(z.cols());
  out.grad_norm.resize(z.cols());
  for (std::size_t b = 0; b < z.cols(); ++b) {
    const Tensor zb = column(z, b);
    g.bind("y", column(y, b));
    auto objective = [&](const Tensor& v, Tensor& grad) {
      g.bind("x", v);
      const double val = g.evaluate()(0, 0);
      g.backward();
      grad = g.gradient("x");
      for (std::size_t i = 0; i < n; ++i) grad(i, 0) -= zb(i, 0);
      return val - dot_cols(zb, v);
    };
    const LbfgsResult r = lbfgs_minimize(objective, zb, lcfg);
    for (std::size_t i = 0; i < n; ++i) out.x(i, b) = r.x(i, 0);
    out.converged[b] = r.converged ? 1 : 0;
    out.grad_norm[b] = r.grad_norm;
  }
  return out;
}

InvertResult ficnn_invert(const FicnnParams& p, const Tensor& z, const SampleConfig& cfg) {
  const auto m = static_cast<std::size_t>(p.dims.m);
  if (z.rows() != m || z.cols() == 0) throw std::invalid_argument("ficnn_invert: shape mismatch");
  if (cfg.tolerance <= 0.0)
    throw std::invalid_argument("ficnn_invert: tolerance must be positive");

  Graph g;
  const int y_id = g.input("y", Tensor(m, 1));
  g.set_root(build_ficnn(g, p, y_id));
  for (const auto& r : refs_of(p))
    if (r.value->size() > 0) g.bind(r.name, *r.value);

  LbfgsConfig lcfg;
  lcfg.tol = cfg.tolerance;
  lcfg.max_iters = cfg.max_iterations;
  lcfg.history = cfg.history;

  InvertResult out;
  out.x = Tensor(m, z.cols());
  out.converged.resize(z.cols());
  out.grad_norm.resize(z.cols());
  for (std::size_t b = 0; b < z.cols(); ++b) {
    const Tensor zb = column(z, b);
    auto objective = [&](const Tensor& v, Tensor& grad) {
      g.bind("y", v);
      const double val = g.evaluate()(0, 0);
      g.backward();
      grad = g.gradient("y");
      for (std::size_t i = 0; i < m; ++i) grad(i, 0) -= zb(i, 0);
      return val - dot_cols(zb, v);
    };
    const LbfgsResult r = lbfgs_minimize(objective, zb, lcfg);
    for (std::size_t i = 0; i < m; ++i) out.x(i, b) = r.x(i, 0);
    out.converged[b] = r.converged ? 1 : 0;
    out.grad_norm[b] = r.grad_norm;
  }
  return out;
}

PosteriorSamples sample_posterior(const StrictPotentialParams& p, const Tensor& y,
                                  std::size_t count, const SampleConfig& cfg, std::uint64_t seed,
                                  std::function<Tensor(const Tensor&)> denormalize) {
  const std::size_t n = p.picnn.dims.n;
  if (y.cols() != 1) throw std::invalid_argument("sample_posterior: y must be one column");
  Rng rng(seed);
  Tensor z(n, count);
  for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] = rng.normal();
  InvertResult inv = invert(p, z, repeat_col(y, count), cfg);
  PosteriorSamples out;
  out.x = std::move(inv.x);
  out.converged = std::move(inv.converged);
  out.denormalize = std::move(denormalize);
  return out;
}

MapPointResult map_point(const StrictPotentialParams& p, const Tensor& y, const Tensor& x0,
                         const SampleConfig& cfg) {
  const std::size_t n = p.picnn.dims.n, m = p.picnn.dims.m;
  if (x0.rows() != n || x0.cols() != 1 || y.rows() != m || y.cols() != 1)
    throw std::invalid_argument("map_point: shape mismatch");

  Graph g;
  const int x_id = g.input("x", Tensor(n, 1));
  const int y_id = g.input("y", Tensor(m, 1));
  auto& mp = const_cast<StrictPotentialParams&>(p);
  const int pot = build_strict_potential(g, mp, x_id, y_id);
  g.set_root(density_objective(g, pot, x_id, n, 1));
  for (const auto& r : refs_of(p))
    if (r.value->size() > 0) g.bind(r.name, *r.value);
  g.bind("y", y);

  LbfgsConfig lcfg;
  lcfg.tol = cfg.tolerance;
  lcfg.max_iters = cfg.max_iterations;
  lcfg.history = cfg.history;
  auto objective = [&](const Tensor& v, Tensor& grad) {
    g.bind("x", v);
    const double val = g.evaluate()(0, 0);
    g.backward();
    grad = g.gradient("x");
    return val;
  };
  const LbfgsResult r = lbfgs_minimize(objective, x0, lcfg);
  return {r.x, r.converged};
}

MapPointResult map_point(const StrictPotentialParams& p, const Tensor& y, const SampleConfig& cfg,
                         std::uint64_t seed, std::size_t init_draws) {
  const PosteriorSamples s = sample_posterior(p, y, init_draws, cfg, seed);
  Tensor x0(p.picnn.dims.n, 1);
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s.x.cols(); ++j) acc += s.x(i, j);
    x0(i, 0) = acc / static_cast<double>(s.x.cols());
  }
  return map_point(p, y, x0, cfg);
}

Tensor PcpSampler::sample(const Tensor& y, std::size_t count, std::uint64_t seed,
                          std::vector<char>* converged) const {
  PosteriorSamples s = sample_posterior(*p_, y, count, cfg_, seed);
  if (converged) *converged = s.converged;
  return s.x;
}

}  // namespace cotlab
