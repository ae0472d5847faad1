// Command-line front end over the library: dataset generation and
// preparation, single training runs, posterior sampling, evaluation, and
// random-search orchestration. Every command reads one versioned JSON config
// (see docs/cli.md); --seed and --out-dir override the matching config keys.
// Exit codes: 0 success, 2 config or input validation error, 3 numerical
// failure.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotlab/checkpoint.hpp"
#include "cotlab/cot_flow.hpp"
#include "cotlab/dataset.hpp"
#include "cotlab/gaussian_bench.hpp"
#include "cotlab/lotka_volterra.hpp"
#include "cotlab/metrics.hpp"
#include "cotlab/pcp_map.hpp"
#include "cotlab/rng.hpp"
#include "cotlab/run_record.hpp"
#include "cotlab/search.hpp"

namespace {

using namespace cotlab;
using nlohmann::json;

constexpr const char* kUsage =
    "usage: cotlab <command> --config <file.json> [--seed <n>] [--out-dir <dir>]\n"
    "\n"
    "commands:\n"
    "  gen-gauss    draw the synthetic gaussian benchmark dataset\n"
    "  simulate-lv  simulate the predator-prey system and summarize it\n"
    "  prepare      preprocess a raw csv table into a normalized dataset\n"
    "  train        train one model and write checkpoint.json + run.json\n"
    "  sample       draw conditional samples from a checkpoint\n"
    "  eval         score a checkpoint on a dataset, write metrics.json\n"
    "  search       pilot + full random search, write report csv files\n"
    "  report       turn saved run records into loss-curve csv files\n"
    "\n"
    "--seed and --out-dir override the config's seed/out_dir keys.\n"
    "Exit codes: 0 ok, 2 bad config or input, 3 numerical failure.\n";

struct Args {
  std::string command;
  std::string config_path;
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string out_dir;
};

Args parse_args(int argc, char** argv) {
  Args a;
  if (argc < 2) throw std::invalid_argument("missing command");
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    const std::string flag = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) throw std::invalid_argument(flag + " needs a value");
      return argv[++i];
    };
    if (flag == "--config") {
      a.config_path = next();
    } else if (flag == "--seed") {
      const std::string v = next();
      char* end = nullptr;
      a.seed = std::strtoull(v.c_str(), &end, 10);
      if (end == v.c_str() || *end != '\0')
        throw std::invalid_argument("--seed wants an unsigned integer, got '" + v + "'");
      a.has_seed = true;
    } else if (flag == "--out-dir") {
      a.out_dir = next();
    } else {
      throw std::invalid_argument("unknown flag '" + flag + "'");
    }
  }
  return a;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json parse_config(const std::string& text, const std::string& path) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument(path + ": config must be a JSON object");
  if (j.value("format_version", 0) != 1)
    throw std::invalid_argument(path + ": unsupported format_version");
  return j;
}

std::string req_str(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string() || j.at(key).get<std::string>().empty())
    throw std::invalid_argument(std::string("config key '") + key + "' (string) is required");
  return j.at(key).get<std::string>();
}

std::string out_dir_of(const json& j) {
  const std::string d = req_str(j, "out_dir");
  std::filesystem::create_directories(d);
  return d;
}

// stable fingerprint of the config text, carried on every metric record
std::string config_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

struct MetricRecord {
  std::string metric;
  double value = 0.0;
  double std_dev = 0.0;
};

void write_metrics(const std::string& dir, const std::vector<MetricRecord>& records,
                   const std::string& hash) {
  json arr = json::array();
  for (const MetricRecord& r : records)
    arr.push_back({{"metric", r.metric},
                   {"value", r.value},
                   {"std", r.std_dev},
                   {"config_hash", hash}});
  std::ofstream out(std::filesystem::path(dir) / "metrics.json");
  if (!out) throw std::invalid_argument("cannot write metrics.json under " + dir);
  out << arr.dump(2) << "\n";
}

Tensor col_from(const std::vector<double>& v) {
  Tensor t(v.size(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t(i, 0) = v[i];
  return t;
}

Tensor normal_block(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = rng.normal();
  return t;
}

Tensor stack_cols(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows() + b.rows(), a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, j);
    for (std::size_t i = 0; i < b.rows(); ++i) out(a.rows() + i, j) = b(i, j);
  }
  return out;
}

Tensor first_cols(const Tensor& t, std::size_t k) {
  Tensor out(t.rows(), k);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < t.rows(); ++i) out(i, j) = t(i, j);
  return out;
}

// ---- gen-gauss ----

int cmd_gen_gauss(const json& j) {
  const auto samples = j.value("samples", std::size_t{8000});
  const auto seed = j.value("seed", std::uint64_t{1});
  const std::string dir = out_dir_of(j);
  const std::string name = j.value("name", std::string("gauss"));
  const Dataset d = gaussian_bench_dataset(default_gauss_bench(), samples, seed);
  const std::string prefix = (std::filesystem::path(dir) / name).string();
  save_dataset(d, prefix);
  std::printf("wrote %s.csv + sidecar: %zu rows, n=%zu, m=%zu\n", prefix.c_str(), d.size(), d.n(),
              d.m());
  return 0;
}

// ---- simulate-lv ----

int cmd_simulate_lv(const json& j) {
  const auto samples = j.value("samples", std::size_t{10000});
  const auto seed = j.value("seed", std::uint64_t{1});
  LvSimConfig sim;
  sim.horizon = j.value("horizon", sim.horizon);
  sim.record_dt = j.value("record_dt", sim.record_dt);
  sim.max_events = j.value("max_events", sim.max_events);
  const std::string dir = out_dir_of(j);
  const std::string name = j.value("name", std::string("lv"));
  const Dataset d = build_lv_dataset(samples, seed, sim);
  const std::string prefix = (std::filesystem::path(dir) / name).string();
  save_dataset(d, prefix);
  std::printf("wrote %s.csv + sidecar: %zu simulations, n=%zu, m=%zu\n", prefix.c_str(), d.size(),
              d.n(), d.m());
  return 0;
}

// ---- prepare ----

int cmd_prepare(const json& j) {
  const std::string input = req_str(j, "input");
  const std::string task = j.value("task", std::string("conditional"));
  if (task != "conditional" && task != "joint")
    throw std::invalid_argument("prepare: task must be 'conditional' or 'joint'");
  const auto seed = j.value("seed", std::uint64_t{1});
  const std::string dir = out_dir_of(j);
  const std::string name =
      j.value("name", std::filesystem::path(input).stem().string());
  const Table t = read_csv_table(input);
  const Dataset d =
      preprocess_uci(t, task == "joint" ? UciTask::Joint : UciTask::Conditional, seed);
  const std::string prefix = (std::filesystem::path(dir) / name).string();
  save_dataset(d, prefix);
  std::printf("wrote %s.csv + sidecar: %zu rows kept, n=%zu, m=%zu\n", prefix.c_str(), d.size(),
              d.n(), d.m());
  return 0;
}

// ---- train ----

int cmd_train(const json& j) {
  const std::string model = req_str(j, "model");
  const Dataset data = load_dataset(req_str(j, "dataset"));
  const std::string dir = out_dir_of(j);
  const std::string ck = (std::filesystem::path(dir) / "checkpoint.json").string();
  const std::string rr = (std::filesystem::path(dir) / "run.json").string();

  RunRecord record;
  double best = std::numeric_limits<double>::quiet_NaN();
  if (model == "pcp" || model == "pcp-joint") {
    PcpTrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.depth = j.value("depth", c.depth);
    c.width = j.value("width", c.width);
    c.context_width = j.value("context_width", c.context_width);
    c.seed = j.value("seed", c.seed);
    c.valid_interval = j.value("valid_interval", c.valid_interval);
    c.patience = j.value("patience", c.patience);
    if (model == "pcp") {
      PcpTrainResult r = train(c, data);
      save_checkpoint(r.params, ck);
      record = std::move(r.record);
      best = r.best_valid_nll;
    } else {
      JointTrainResult r = train_joint(c, data);
      save_checkpoint(r.pot_x, r.pot_y, ck);
      record = std::move(r.record);
      best = r.best_valid_nll;
    }
  } else if (model == "cot-flow") {
    FlowConfig c;
    c.nt = j.value("nt", c.nt);
    c.alpha1 = j.value("alpha1", c.alpha1);
    c.alpha2 = j.value("alpha2", c.alpha2);
    c.width = j.value("width", c.width);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.valid_interval = j.value("valid_interval", c.valid_interval);
    c.patience = j.value("patience", c.patience);
    c.w_y = j.value("w_y", c.w_y);
    c.w_yout = j.value("w_yout", c.w_yout);
    FlowTrainResult r = train_flow(c, data);
    save_checkpoint(r.params, ck);
    record = std::move(r.record);
    best = r.best_valid_nll;
  } else {
    throw std::invalid_argument("train: model must be 'pcp', 'pcp-joint', or 'cot-flow'");
  }

  record.checkpoint_path = ck;
  save_run_record(record, rr);
  std::printf("best validation nll %.6f after %zu intervals%s\n", best, record.valid_loss.size(),
              record.stopped_early ? " (stopped early)" : "");
  if (record.diverged) {
    std::fprintf(stderr, "training diverged; checkpoint holds the last good weights\n");
    return 3;
  }
  return 0;
}

// ---- sample ----

int cmd_sample(const json& j) {
  const std::string ck = req_str(j, "checkpoint");
  const auto count = j.value("count", std::size_t{1000});
  const auto seed = j.value("seed", std::uint64_t{1});
  const std::string dir = out_dir_of(j);
  if (!j.contains("y") || !j.at("y").is_array())
    throw std::invalid_argument("sample: config key 'y' (array of numbers) is required");
  std::vector<double> yv = j.at("y").get<std::vector<double>>();
  Tensor y = col_from(yv);

  // with a dataset reference, y comes in raw units and draws go back out raw
  const std::string ds = j.value("dataset", std::string());
  Dataset data;
  const bool raw_units = !ds.empty();
  if (raw_units) {
    data = load_dataset(ds);
    y = normalize_y(data, y);
  }

  const std::string kind = checkpoint_kind(ck);
  Tensor draws;
  std::vector<char> converged;
  if (kind == "cot-flow") {
    const PhiParams p = load_flow_checkpoint(ck);
    FlowSampler sampler(p, j.value("nt", std::size_t{32}));
    draws = sampler.sample(y, count, seed, &converged);
  } else {
    StrictPotentialParams p;
    if (kind == "pcp-joint") {
      p = load_joint_checkpoint(ck).first;  // conditional block
    } else {
      p = load_pcp_checkpoint(ck);
    }
    SampleConfig sc;
    sc.tolerance = j.value("tolerance", sc.tolerance);
    sc.max_iterations = j.value("max_iterations", sc.max_iterations);
    PosteriorSamples ps = sample_posterior(p, y, count, sc, seed);
    draws = std::move(ps.x);
    converged = std::move(ps.converged);
  }
  if (raw_units) draws = denormalize_x(data, draws);

  const std::string path = (std::filesystem::path(dir) / "samples.csv").string();
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write " + path);
  for (std::size_t i = 0; i < draws.rows(); ++i) out << "x" << i << ",";
  out << "converged\n";
  char buf[40];
  for (std::size_t c = 0; c < draws.cols(); ++c) {
    for (std::size_t i = 0; i < draws.rows(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", draws(i, c));
      out << buf << ",";
    }
    out << int(converged[c]) << "\n";
  }
  std::size_t ok = 0;
  for (char c : converged) ok += c != 0;
  std::printf("wrote %s: %zu draws, %zu converged\n", path.c_str(), draws.cols(), ok);
  return 0;
}

// ---- eval ----

// one model draw per held-out point, stacked against the held-out points
double paired_mmd_eval(const std::string& kind, const StrictPotentialParams& pcp,
                       const FicnnParams& marg, const PhiParams& flow, std::size_t nt,
                       const Tensor& xte, const Tensor& yte, std::size_t mmd_points,
                       std::uint64_t seed) {
  const std::size_t npts = std::min(mmd_points, xte.cols());
  const Tensor xs = first_cols(xte, npts);
  const Tensor ys = first_cols(yte, npts);
  Rng rng(Rng::derive(seed, 1));
  Tensor ymodel = ys;
  if (kind == "pcp-joint") ymodel = ficnn_invert(marg, normal_block(rng, ys.rows(), npts)).x;
  const Tensor zx = normal_block(rng, xs.rows(), npts);
  const Tensor xmodel =
      kind == "cot-flow" ? sample_flow(flow, ymodel, zx, nt) : invert(pcp, zx, ymodel).x;
  return mmd(stack_cols(xmodel, ymodel), stack_cols(xs, ys));
}

// fresh normalized draw from the benchmark's generative process
std::pair<Tensor, Tensor> gauss_joint_draw(const GaussianBenchSpec& spec, const Dataset& d,
                                           std::uint64_t seed) {
  if (spec.m != 1) throw std::invalid_argument("gauss draw: single-context benchmark only");
  Rng rng(seed);
  const std::size_t n = spec.n;
  Tensor y_raw(1, 1);
  y_raw(0, 0) = spec.mu(n, 0) + std::sqrt(spec.sigma(n, n)) * rng.normal();
  const CondGaussian cg = analytic_conditional(spec, y_raw);
  Tensor x_raw(n, 1);
  const Tensor z = normal_block(rng, n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    x_raw(i, 0) = cg.mean(i, 0);
    for (std::size_t k = 0; k < n; ++k) x_raw(i, 0) += cg.sqrt_cov(i, k) * z(k, 0);
  }
  Tensor xn(n, 1), yn(1, 1);
  for (std::size_t i = 0; i < n; ++i) xn(i, 0) = (x_raw(i, 0) - d.x_mean[i]) / d.x_std[i];
  yn(0, 0) = (y_raw(0, 0) - d.y_mean[0]) / d.y_std[0];
  return {xn, yn};
}

int cmd_eval(const json& j, const std::string& raw_config) {
  const std::string ck = req_str(j, "checkpoint");
  const Dataset data = load_dataset(req_str(j, "dataset"));
  const std::string dir = out_dir_of(j);
  const auto seed = j.value("seed", std::uint64_t{1});
  const auto mmd_points = j.value("mmd_points", std::size_t{512});
  const auto nt = j.value("nt", std::size_t{32});
  const std::string hash = config_hash(raw_config);

  const Tensor xte = cols_of(data.X, data.test);
  const Tensor yte = cols_of(data.Y, data.test);
  if (xte.cols() == 0) throw std::invalid_argument("eval: dataset has no test split");

  const std::string kind = checkpoint_kind(ck);
  StrictPotentialParams pcp;
  FicnnParams marg;
  PhiParams flow;
  double test_nll = 0.0;
  if (kind == "pcp") {
    pcp = load_pcp_checkpoint(ck);
    test_nll = pcp_test_nll(pcp, xte, yte);
  } else if (kind == "pcp-joint") {
    auto both = load_joint_checkpoint(ck);
    pcp = std::move(both.first);
    marg = std::move(both.second);
    test_nll = joint_test_nll(pcp, marg, xte, yte);
  } else {
    flow = load_flow_checkpoint(ck);
    test_nll = flow_test_nll(flow, xte, yte, nt);
  }

  std::vector<MetricRecord> metrics;
  metrics.push_back({"test_nll", test_nll, 0.0});
  metrics.push_back(
      {"mmd", paired_mmd_eval(kind, pcp, marg, flow, nt, xte, yte, mmd_points, seed), 0.0});

  // step-count stability of the flow's sample map
  if (kind == "cot-flow") {
    Rng rng(Rng::derive(seed, 2));
    const std::size_t ncheck = std::min<std::size_t>(1000, xte.cols() * 8);
    Tensor y0(yte.rows(), 1);
    for (std::size_t i = 0; i < yte.rows(); ++i) y0(i, 0) = yte(i, 0);
    const Tensor z = normal_block(rng, xte.rows(), ncheck);
    Tensor yb(yte.rows(), ncheck);
    for (std::size_t c = 0; c < ncheck; ++c)
      for (std::size_t i = 0; i < yte.rows(); ++i) yb(i, c) = y0(i, 0);
    const std::vector<std::size_t> steps{1, 2, 4, 8, 16};
    const std::vector<double> errs = nt_consistency(flow, yb, z, steps, 32);
    std::vector<double> xs(steps.begin(), steps.end());
    write_series_csv((std::filesystem::path(dir) / "nt_error.csv").string(),
                     {"nt", "rel_error"}, {xs, errs});
    metrics.push_back({"nt_err_8", errs[3], 0.0});
  }

  // closed-form conditional comparison on the synthetic benchmark
  if (j.value("bench", std::string()) == "gauss") {
    const GaussianBenchSpec spec = default_gauss_bench();
    Tensor y0(yte.rows(), 1);
    for (std::size_t i = 0; i < yte.rows(); ++i) y0(i, 0) = yte(i, 0);
    const CondGaussian cg = analytic_conditional_normalized(spec, data, y0);
    const auto bench_draws = j.value("bench_draws", std::size_t{4000});
    Tensor draws;
    if (kind == "cot-flow") {
      draws = FlowSampler(flow, nt).sample(y0, bench_draws, Rng::derive(seed, 3));
    } else {
      draws = sample_posterior(pcp, y0, bench_draws, SampleConfig{}, Rng::derive(seed, 3)).x;
    }
    metrics.push_back({"cond_mean_err", max_abs_diff(sample_mean(draws), cg.mean), 0.0});
    metrics.push_back({"cond_cov_frob_rel", frob_rel_err(sample_cov(draws), cg.cov), 0.0});

    const auto sbc_trials = j.value("sbc_trials", std::size_t{0});
    if (sbc_trials > 0) {
      SbcConfig sc;
      sc.trials = static_cast<int>(sbc_trials);
      sc.draws = static_cast<int>(j.value("sbc_draws", std::size_t{100}));
      sc.seed = Rng::derive(seed, 4);
      auto draw_joint = [&](std::uint64_t s) { return gauss_joint_draw(spec, data, s); };
      SbcResult sbc;
      if (kind == "cot-flow") {
        FlowSampler sampler(flow, nt);
        sbc = sbc_ranks(draw_joint, sampler, sc);
      } else {
        PcpSampler sampler(pcp, SampleConfig{});
        sbc = sbc_ranks(draw_joint, sampler, sc);
      }
      // empirical rank cdf per coordinate against the uniform reference
      const int L = sbc.draws;
      std::vector<std::string> headers{"rank", "uniform"};
      std::vector<std::vector<double>> cols(2);
      for (int r = 0; r <= L; ++r) {
        cols[0].push_back(r);
        cols[1].push_back(static_cast<double>(r + 1) / (L + 1));
      }
      for (std::size_t d0 = 0; d0 < sbc.ranks.size(); ++d0) {
        headers.push_back("cdf_x" + std::to_string(d0));
        std::vector<double> cdf(L + 1, 0.0);
        for (int rank : sbc.ranks[d0])
          for (int r = rank; r <= L; ++r) cdf[r] += 1.0;
        for (double& v : cdf) v /= static_cast<double>(sbc.ranks[d0].size());
        cols.push_back(std::move(cdf));
        metrics.push_back({"sbc_ks_x" + std::to_string(d0),
                           ks_uniformity(sbc.ranks[d0], L), 0.0});
      }
      write_series_csv((std::filesystem::path(dir) / "sbc_cdf.csv").string(), headers, cols);
    }
  }

  write_metrics(dir, metrics, hash);
  std::printf("wrote %s/metrics.json: test nll %.6f\n", dir.c_str(), test_nll);
  return 0;
}

// ---- search ----

SearchSpace space_from_config(const json& j, const ExperimentConfig& cfg, std::size_t m) {
  const bool is_flow = cfg.model == ModelKind::CotFlow;
  const std::string preset = j.value("space_preset", std::string("main"));
  SearchSpace sp;
  if (preset == "main") {
    sp = is_flow ? flow_search_space(static_cast<int>(m), j.value("high_alpha", false))
                 : pcp_search_space(static_cast<int>(m));
  } else if (preset == "tabular") {
    sp = is_flow ? flow_tabular_space(static_cast<int>(m))
                 : pcp_tabular_space(static_cast<int>(m));
  } else {
    throw std::invalid_argument("search: space_preset must be 'main' or 'tabular'");
  }
  if (j.contains("space")) {
    const json& s = j.at("space");
    if (!s.is_object()) throw std::invalid_argument("search: 'space' must be an object");
    sp.batch_sizes = s.value("batch_sizes", sp.batch_sizes);
    sp.learning_rates = s.value("learning_rates", sp.learning_rates);
    sp.widths = s.value("widths", sp.widths);
    sp.depths = s.value("depths", sp.depths);
    sp.nts = s.value("nts", sp.nts);
    sp.embed_widths = s.value("embed_widths", sp.embed_widths);
    sp.log_alpha_lo = s.value("log_alpha_lo", sp.log_alpha_lo);
    sp.log_alpha_hi = s.value("log_alpha_hi", sp.log_alpha_hi);
  }
  return sp;
}

int cmd_search(const json& j, const std::string& raw_config) {
  ExperimentConfig cfg = experiment_config_from_json(j.dump());
  if (cfg.dataset.empty())
    throw std::invalid_argument("search: config key 'dataset' (string) is required");
  if (cfg.out_dir.empty())
    throw std::invalid_argument("search: config key 'out_dir' (string) is required");
  std::filesystem::create_directories(cfg.out_dir);
  const Dataset data = load_dataset(cfg.dataset);
  const SearchSpace space = space_from_config(j, cfg, data.m());
  const auto seed = j.value("seed", std::uint64_t{1});

  const std::vector<PilotRun> pilot = pilot_search(cfg, space, data, seed);
  std::vector<HyperTuple> top;
  for (const PilotRun& r : pilot) {
    if (r.diverged) continue;
    top.push_back(r.tuple);
    if (top.size() == cfg.top_k) break;
  }
  if (top.empty()) throw std::runtime_error("search: every pilot run diverged");

  const SearchSummary summary = full_training(cfg, top, data, seed);
  emit_report(cfg.out_dir, summary, &pilot);

  const std::string hash = config_hash(raw_config);
  std::vector<MetricRecord> metrics;
  const TupleScore& best = summary.scores[summary.best];
  metrics.push_back({"best_test_nll", best.nll_mean, best.nll_std});
  metrics.push_back({"median_test_nll", summary.scores[summary.median].nll_mean,
                     summary.scores[summary.median].nll_std});
  metrics.push_back({"worst_test_nll", summary.scores[summary.worst].nll_mean,
                     summary.scores[summary.worst].nll_std});
  metrics.push_back({"best_mmd", best.mmd_mean, best.mmd_std});
  write_metrics(cfg.out_dir, metrics, hash);
  std::printf("searched %zu tuples, trained top %zu x%zu: best test nll %.6f (std %.6f)\n",
              pilot.size(), top.size(), cfg.repeats, best.nll_mean, best.nll_std);
  return 0;
}

// ---- report ----

int cmd_report(const json& j) {
  const std::string records_dir = req_str(j, "records");
  const std::string dir = out_dir_of(j);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(records_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::ofstream sum(std::filesystem::path(dir) / "summary.csv");
  if (!sum) throw std::invalid_argument("cannot write summary.csv under " + dir);
  sum << "run,intervals,best_interval,best_valid_nll,diverged,stopped_early,wall_seconds\n";
  std::ofstream idx(std::filesystem::path(dir) / "runs_index.txt");
  char buf[40];
  for (std::size_t k = 0; k < files.size(); ++k) {
    const RunRecord r = load_run_record(files[k].string());
    std::vector<double> iv(r.valid_loss.size());
    for (std::size_t i = 0; i < iv.size(); ++i) iv[i] = static_cast<double>(i);
    const std::string stem = files[k].stem().string();
    if (!r.valid_loss.empty())
      write_series_csv((std::filesystem::path(dir) / ("loss_" + stem + ".csv")).string(),
                       {"interval", "train_nll", "valid_nll"},
                       {iv, r.train_loss, r.valid_loss});
    const double best =
        r.valid_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : r.valid_loss[r.best_interval];
    std::snprintf(buf, sizeof(buf), "%.17g", best);
    sum << k << ',' << r.valid_loss.size() << ',' << r.best_interval << ',' << buf << ','
        << (r.diverged ? 1 : 0) << ',' << (r.stopped_early ? 1 : 0) << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", r.wall_seconds);
    sum << buf << '\n';
    idx << k << ',' << files[k].filename().string() << '\n';
  }
  std::printf("summarized %zu run records into %s\n", files.size(), dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const Args a = parse_args(argc, argv);
    if (a.command == "help" || a.command == "--help" || a.command == "-h") {
      std::fputs(kUsage, stdout);
      return 0;
    }
    if (a.config_path.empty())
      throw std::invalid_argument("--config <file.json> is required");
    const std::string raw = read_text(a.config_path);
    json j = parse_config(raw, a.config_path);
    if (a.has_seed) j["seed"] = a.seed;
    if (!a.out_dir.empty()) j["out_dir"] = a.out_dir;

    if (a.command == "gen-gauss") return cmd_gen_gauss(j);
    if (a.command == "simulate-lv") return cmd_simulate_lv(j);
    if (a.command == "prepare") return cmd_prepare(j);
    if (a.command == "train") return cmd_train(j);
    if (a.command == "sample") return cmd_sample(j);
    if (a.command == "eval") return cmd_eval(j, raw);
    if (a.command == "search") return cmd_search(j, raw);
    if (a.command == "report") return cmd_report(j);
    throw std::invalid_argument("unknown command '" + a.command + "'");
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n%s", e.what(), argc < 2 ? kUsage : "");
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
