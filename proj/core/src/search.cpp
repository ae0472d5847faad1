#include "cotlab/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "cotlab/cot_flow.hpp"
#include "cotlab/metrics.hpp"
#include "cotlab/parallel.hpp"
#include "cotlab/pcp_map.hpp"
#include "cotlab/picnn.hpp"
#include "cotlab/rng.hpp"

namespace cotlab {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> powers(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (std::size_t x = lo; x <= hi; x *= 2) v.push_back(x);
  return v;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& options) {
  return options[rng.uniform_index(options.size())];
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

SearchSpace pcp_search_space(int m) {
  SearchSpace s;
  s.m = m;
  s.batch_sizes = powers(32, 256);
  s.learning_rates = {0.05, 0.01, 1e-3, 1e-4};
  s.widths = powers(32, 512);
  s.depths = {2, 3, 4, 5, 6};
  return s;
}

SearchSpace flow_search_space(int m, bool high_alpha) {
  SearchSpace s;
  s.flow = true;
  s.m = m;
  s.batch_sizes = powers(32, 1024);
  s.learning_rates = {0.05, 0.01, 1e-3, 1e-4};
  s.widths = powers(32, 1024);
  s.nts = {8, 16};
  s.embed_widths = {32, 64, 128};
  if (high_alpha) {
    s.log_alpha_lo = 2.0;
    s.log_alpha_hi = 5.0;
  }
  return s;
}

SearchSpace pcp_tabular_space(int m) {
  SearchSpace s;
  s.m = m;
  s.batch_sizes = {32, 64};
  s.learning_rates = {0.01, 0.005, 0.001};
  s.widths = powers(32, 512);
  s.depths = {2, 3, 4, 5, 6};
  return s;
}

SearchSpace flow_tabular_space(int m) {
  SearchSpace s;
  s.flow = true;
  s.m = m;
  s.batch_sizes = {32, 64};
  s.learning_rates = {0.01, 0.005, 0.001};
  s.widths = powers(32, 512);
  s.nts = {8, 16};
  return s;
}

std::vector<std::size_t> context_width_options(std::size_t w, int m) {
  require(m >= 1, "context_width_options: context dimension must be positive");
  std::vector<std::size_t> opts;
  for (std::size_t v = w; v > static_cast<std::size_t>(m); v /= 2) opts.push_back(v);
  opts.push_back(static_cast<std::size_t>(m));
  return opts;
}

std::vector<HyperTuple> sample_space(const SearchSpace& space, std::size_t count,
                                     std::uint64_t seed) {
  require(!space.batch_sizes.empty(), "sample_space: no batch sizes");
  require(!space.learning_rates.empty(), "sample_space: no learning rates");
  require(!space.widths.empty(), "sample_space: no widths");
  if (space.flow) {
    require(!space.nts.empty(), "sample_space: no step counts");
    require(space.log_alpha_hi >= space.log_alpha_lo, "sample_space: bad penalty range");
  } else {
    require(!space.depths.empty(), "sample_space: no depths");
    require(space.m >= 1, "sample_space: context dimension must be positive");
  }

  std::vector<HyperTuple> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(Rng::derive(seed, i));
    HyperTuple& t = out[i];
    t.batch_size = pick(rng, space.batch_sizes);
    t.learning_rate = pick(rng, space.learning_rates);
    t.width = pick(rng, space.widths);
    if (space.flow) {
      t.depth = 0;
      t.nt = pick(rng, space.nts);
      t.alpha1 = std::pow(10.0, rng.uniform(space.log_alpha_lo, space.log_alpha_hi));
      t.alpha2 = std::pow(10.0, rng.uniform(space.log_alpha_lo, space.log_alpha_hi));
      if (!space.embed_widths.empty()) {
        t.w_y = pick(rng, space.embed_widths);
        t.w_yout = pick(rng, space.embed_widths);
      }
    } else {
      t.depth = pick(rng, space.depths);
      t.context_width = pick(rng, context_width_options(t.width, space.m));
    }
  }
  return out;
}

std::string tuple_json(const HyperTuple& t) {
  nlohmann::json j;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["width"] = t.width;
  j["context_width"] = t.context_width;
  j["depth"] = t.depth;
  j["nt"] = t.nt;
  j["alpha1"] = t.alpha1;
  j["alpha2"] = t.alpha2;
  j["w_y"] = t.w_y;
  j["w_yout"] = t.w_yout;
  return j.dump();
}

namespace {

const char* task_name(Task t) {
  switch (t) {
    case Task::Conditional: return "conditional";
    case Task::Joint: return "joint";
    case Task::Lfi: return "lfi";
  }
  return "conditional";
}

const char* model_name(ModelKind m) {
  return m == ModelKind::CotFlow ? "cot-flow" : "pcp";
}

}  // namespace

void validate(const ExperimentConfig& c) {
  require(c.top_k >= 1, "experiment config: top_k must be at least 1");
  require(c.pilot_count >= c.top_k, "experiment config: pilot budget below top_k");
  require(c.repeats >= 1, "experiment config: repeats must be at least 1");
  if (c.model == ModelKind::CotFlow && c.task == Task::Joint)
    throw std::invalid_argument(
        "experiment config: the flow model trains conditional and simulator tasks only");
}

std::string experiment_config_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["task"] = task_name(c.task);
  j["model"] = model_name(c.model);
  j["dataset"] = c.dataset;
  j["pilot_count"] = c.pilot_count;
  j["pilot_epochs"] = c.pilot_epochs;
  j["top_k"] = c.top_k;
  j["repeats"] = c.repeats;
  j["full_epochs"] = c.full_epochs;
  j["valid_interval"] = c.valid_interval;
  j["patience"] = c.patience;
  j["mmd_points"] = c.mmd_points;
  j["out_dir"] = c.out_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("experiment config: not an object");
  if (j.value("format_version", 0) != 1)
    throw std::invalid_argument("experiment config: unsupported format_version");

  ExperimentConfig c;
  try {
    const std::string task = j.value("task", "conditional");
    if (task == "conditional") c.task = Task::Conditional;
    else if (task == "joint") c.task = Task::Joint;
    else if (task == "lfi") c.task = Task::Lfi;
    else throw std::invalid_argument("experiment config: unknown task '" + task + "'");

    const std::string model = j.value("model", "pcp");
    if (model == "pcp") c.model = ModelKind::PcpMap;
    else if (model == "cot-flow") c.model = ModelKind::CotFlow;
    else throw std::invalid_argument("experiment config: unknown model '" + model + "'");

    c.dataset = j.value("dataset", std::string());
    c.pilot_count = j.value("pilot_count", c.pilot_count);
    c.pilot_epochs = j.value("pilot_epochs", c.pilot_epochs);
    c.top_k = j.value("top_k", c.top_k);
    c.repeats = j.value("repeats", c.repeats);
    c.full_epochs = j.value("full_epochs", c.full_epochs);
    c.valid_interval = j.value("valid_interval", c.valid_interval);
    c.patience = j.value("patience", c.patience);
    c.mmd_points = j.value("mmd_points", c.mmd_points);
    c.out_dir = j.value("out_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("experiment config: ") + e.what());
  }
  validate(c);
  return c;
}

namespace {

// weights plus trace from one training run; exactly one model block is live
struct TrainedModel {
  bool diverged = false;
  double valid_nll = kNan;
  RunRecord record;
  StrictPotentialParams pcp;
  FicnnParams marg;
  PhiParams flow;
};

PcpTrainConfig pcp_config(const ExperimentConfig& cfg, const HyperTuple& t, std::size_t epochs,
                          std::uint64_t seed) {
  PcpTrainConfig c;
  c.batch_size = t.batch_size;
  c.learning_rate = t.learning_rate;
  c.epochs = epochs;
  c.depth = t.depth;
  c.width = t.width;
  c.context_width = t.context_width;
  c.seed = seed;
  c.valid_interval = cfg.valid_interval;
  c.patience = cfg.patience;
  return c;
}

FlowConfig flow_config(const ExperimentConfig& cfg, const HyperTuple& t, std::size_t epochs,
                       std::uint64_t seed) {
  FlowConfig c;
  c.nt = t.nt;
  c.alpha1 = t.alpha1;
  c.alpha2 = t.alpha2;
  c.width = t.width;
  c.batch_size = t.batch_size;
  c.learning_rate = t.learning_rate;
  c.epochs = epochs;
  c.seed = seed;
  c.valid_interval = cfg.valid_interval;
  c.patience = cfg.patience;
  c.w_y = t.w_y;
  c.w_yout = t.w_yout;
  return c;
}

// Any throw is recorded as divergence so one bad draw cannot kill a search.
TrainedModel train_tuple(const ExperimentConfig& cfg, const HyperTuple& t, const Dataset& data,
                         std::size_t epochs, std::uint64_t seed) {
  TrainedModel out;
  try {
    if (cfg.model == ModelKind::CotFlow) {
      FlowTrainResult r = train_flow(flow_config(cfg, t, epochs, seed), data);
      out.flow = std::move(r.params);
      out.record = std::move(r.record);
      out.valid_nll = r.best_valid_nll;
    } else if (cfg.task == Task::Joint) {
      JointTrainResult r = train_joint(pcp_config(cfg, t, epochs, seed), data);
      out.pcp = std::move(r.pot_x);
      out.marg = std::move(r.pot_y);
      out.record = std::move(r.record);
      out.valid_nll = r.best_valid_nll;
    } else {
      PcpTrainResult r = train(pcp_config(cfg, t, epochs, seed), data);
      out.pcp = std::move(r.params);
      out.record = std::move(r.record);
      out.valid_nll = r.best_valid_nll;
    }
    out.diverged = out.record.diverged;
  } catch (const std::exception&) {
    out.record.config = tuple_json(t);
    out.record.seed = seed;
    out.record.diverged = true;
    out.diverged = true;
  }
  if (out.diverged || !std::isfinite(out.valid_nll)) {
    out.diverged = true;
    out.valid_nll = kNan;
  }
  return out;
}

Tensor stack_cols(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows() + b.rows(), a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, j);
    for (std::size_t i = 0; i < b.rows(); ++i) out(a.rows() + i, j) = b(i, j);
  }
  return out;
}

Tensor normal_block(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(i, j) = rng.normal();
  return t;
}

double eval_test_nll(const ExperimentConfig& cfg, const HyperTuple& t, const TrainedModel& tm,
                     const Tensor& xte, const Tensor& yte) {
  if (cfg.model == ModelKind::CotFlow) return flow_test_nll(tm.flow, xte, yte, t.nt);
  if (cfg.task == Task::Joint) return joint_test_nll(tm.pcp, tm.marg, xte, yte);
  return pcp_test_nll(tm.pcp, xte, yte);
}

// One model draw per held-out point, scored against the held-out points in
// the stacked (x, y) space. The joint task draws both blocks from the model.
double paired_mmd(const ExperimentConfig& cfg, const HyperTuple& t, const TrainedModel& tm,
                  const Tensor& xte, const Tensor& yte, std::uint64_t seed) {
  const std::size_t npts = std::min(cfg.mmd_points, xte.cols());
  if (npts == 0) return kNan;
  Tensor xs(xte.rows(), npts), ys(yte.rows(), npts);
  for (std::size_t j = 0; j < npts; ++j) {
    for (std::size_t i = 0; i < xte.rows(); ++i) xs(i, j) = xte(i, j);
    for (std::size_t i = 0; i < yte.rows(); ++i) ys(i, j) = yte(i, j);
  }

  Rng rng(Rng::derive(seed, 1));
  Tensor ymodel = ys;
  if (cfg.task == Task::Joint) {
    const Tensor zy = normal_block(rng, ys.rows(), npts);
    ymodel = ficnn_invert(tm.marg, zy).x;
  }
  const Tensor zx = normal_block(rng, xs.rows(), npts);
  Tensor xmodel;
  if (cfg.model == ModelKind::CotFlow) {
    xmodel = sample_flow(tm.flow, ymodel, zx, t.nt);
  } else {
    xmodel = invert(tm.pcp, zx, ymodel).x;
  }
  return mmd(stack_cols(xmodel, ymodel), stack_cols(xs, ys));
}

void maybe_save_record(const std::string& out_dir, const std::string& name,
                       const RunRecord& rec) {
  if (out_dir.empty()) return;
  std::filesystem::create_directories(out_dir);
  save_run_record(rec, (std::filesystem::path(out_dir) / name).string());
}

}  // namespace

std::vector<PilotRun> pilot_search(const ExperimentConfig& cfg, const SearchSpace& space,
                                   const Dataset& data, std::uint64_t seed) {
  validate(cfg);
  const std::vector<HyperTuple> tuples = sample_space(space, cfg.pilot_count, seed);
  std::vector<PilotRun> runs(tuples.size());
  parallel_for(tuples.size(), [&](std::size_t i) {
    TrainedModel tm =
        train_tuple(cfg, tuples[i], data, cfg.pilot_epochs, Rng::derive(Rng::derive(seed, i), 1));
    runs[i] = PilotRun{i, tuples[i], tm.valid_nll, tm.diverged, std::move(tm.record)};
  });
  for (const PilotRun& r : runs)
    maybe_save_record(cfg.out_dir, "pilot_" + std::to_string(r.index) + ".json", r.record);
  std::stable_sort(runs.begin(), runs.end(), [](const PilotRun& a, const PilotRun& b) {
    if (std::isnan(a.valid_nll)) return false;
    if (std::isnan(b.valid_nll)) return true;
    return a.valid_nll < b.valid_nll;
  });
  return runs;
}

SearchSummary full_training(const ExperimentConfig& cfg, const std::vector<HyperTuple>& tuples,
                            const Dataset& data, std::uint64_t seed) {
  validate(cfg);
  require(!tuples.empty(), "full_training: no tuples");
  const Tensor xte = cols_of(data.X, data.test);
  const Tensor yte = cols_of(data.Y, data.test);

  SearchSummary out;
  out.runs.resize(tuples.size() * cfg.repeats);
  parallel_for(out.runs.size(), [&](std::size_t k) {
    const std::size_t i = k / cfg.repeats;
    const std::size_t r = k % cfg.repeats;
    const std::uint64_t run_seed = Rng::derive(Rng::derive(seed, i), 2 + r);
    TrainedModel tm = train_tuple(cfg, tuples[i], data, cfg.full_epochs, run_seed);
    FullRun fr;
    fr.tuple_index = i;
    fr.repeat = r;
    fr.diverged = tm.diverged;
    fr.test_nll = kNan;
    fr.mmd = kNan;
    if (!tm.diverged) {
      try {
        fr.test_nll = eval_test_nll(cfg, tuples[i], tm, xte, yte);
        fr.mmd = paired_mmd(cfg, tuples[i], tm, xte, yte, run_seed);
      } catch (const std::exception&) {
        fr.diverged = true;
        fr.test_nll = kNan;
        fr.mmd = kNan;
      }
    }
    fr.record = std::move(tm.record);
    out.runs[k] = std::move(fr);
  });
  for (const FullRun& fr : out.runs)
    maybe_save_record(cfg.out_dir,
                      "full_" + std::to_string(fr.tuple_index) + "_" + std::to_string(fr.repeat) +
                          ".json",
                      fr.record);

  out.scores.resize(tuples.size());
  for (std::size_t i = 0; i < tuples.size(); ++i) {
    TupleScore& s = out.scores[i];
    s.tuple = tuples[i];
    double nsum = 0.0, nsq = 0.0, msum = 0.0, msq = 0.0;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      const FullRun& fr = out.runs[i * cfg.repeats + r];
      if (!std::isfinite(fr.test_nll)) continue;
      ++s.completed;
      nsum += fr.test_nll;
      nsq += fr.test_nll * fr.test_nll;
      msum += fr.mmd;
      msq += fr.mmd * fr.mmd;
    }
    if (s.completed == 0) {
      s.nll_mean = s.nll_std = s.mmd_mean = s.mmd_std = kNan;
      continue;
    }
    const double c = static_cast<double>(s.completed);
    s.nll_mean = nsum / c;
    s.mmd_mean = msum / c;
    if (s.completed > 1) {
      s.nll_std = std::sqrt(std::max(0.0, nsq / c - s.nll_mean * s.nll_mean));
      s.mmd_std = std::sqrt(std::max(0.0, msq / c - s.mmd_mean * s.mmd_mean));
    }
  }
  std::stable_sort(out.scores.begin(), out.scores.end(),
                   [](const TupleScore& a, const TupleScore& b) {
                     if (std::isnan(a.nll_mean)) return false;
                     if (std::isnan(b.nll_mean)) return true;
                     return a.nll_mean < b.nll_mean;
                   });
  std::size_t scored = 0;
  for (const TupleScore& s : out.scores)
    if (s.completed > 0) ++scored;
  out.best = 0;
  out.median = scored > 0 ? (scored - 1) / 2 : 0;
  out.worst = scored > 0 ? scored - 1 : 0;
  return out;
}

namespace {

const char* kTupleCols =
    "batch_size,learning_rate,width,context_width,depth,nt,alpha1,alpha2,w_y,w_yout";

void put_tuple(std::ofstream& f, const HyperTuple& t) {
  f << t.batch_size << ',' << fmt(t.learning_rate) << ',' << t.width << ',' << t.context_width
    << ',' << t.depth << ',' << t.nt << ',' << fmt(t.alpha1) << ',' << fmt(t.alpha2) << ','
    << t.w_y << ',' << t.w_yout;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw std::invalid_argument("cannot write " + p.string());
  return f;
}

}  // namespace

void emit_report(const std::string& dir, const SearchSummary& s,
                 const std::vector<PilotRun>* pilot) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);

  {
    std::ofstream f = open_out(root / "results.csv");
    f << "rank," << kTupleCols << ",nll_mean,nll_std,mmd_mean,mmd_std,completed\n";
    for (std::size_t i = 0; i < s.scores.size(); ++i) {
      const TupleScore& sc = s.scores[i];
      f << (i + 1) << ',';
      put_tuple(f, sc.tuple);
      f << ',' << fmt(sc.nll_mean) << ',' << fmt(sc.nll_std) << ',' << fmt(sc.mmd_mean) << ','
        << fmt(sc.mmd_std) << ',' << sc.completed << '\n';
    }
  }
  {
    std::ofstream f = open_out(root / "runs.csv");
    f << "tuple_index,repeat,test_nll,mmd,diverged\n";
    for (const FullRun& r : s.runs)
      f << r.tuple_index << ',' << r.repeat << ',' << fmt(r.test_nll) << ',' << fmt(r.mmd) << ','
        << (r.diverged ? 1 : 0) << '\n';
  }
  if (pilot) {
    std::ofstream f = open_out(root / "pilot.csv");
    f << "rank,index," << kTupleCols << ",valid_nll,diverged\n";
    for (std::size_t i = 0; i < pilot->size(); ++i) {
      const PilotRun& r = (*pilot)[i];
      f << (i + 1) << ',' << r.index << ',';
      put_tuple(f, r.tuple);
      f << ',' << fmt(r.valid_nll) << ',' << (r.diverged ? 1 : 0) << '\n';
    }
  }
  {
    const FullRun* best = nullptr;
    for (const FullRun& r : s.runs)
      if (std::isfinite(r.test_nll) && (!best || r.test_nll < best->test_nll)) best = &r;
    std::ofstream f = open_out(root / "loss_best.csv");
    f << "interval,train_nll,valid_nll\n";
    if (best) {
      const RunRecord& rec = best->record;
      const std::size_t len = std::min(rec.train_loss.size(), rec.valid_loss.size());
      for (std::size_t i = 0; i < len; ++i)
        f << i << ',' << fmt(rec.train_loss[i]) << ',' << fmt(rec.valid_loss[i]) << '\n';
    }
  }
}

void write_series_csv(const std::string& path, const std::vector<std::string>& headers,
                      const std::vector<std::vector<double>>& cols) {
  require(!headers.empty() && headers.size() == cols.size(),
          "write_series_csv: headers and columns must match");
  for (const auto& c : cols)
    require(c.size() == cols[0].size(), "write_series_csv: ragged columns");
  std::ofstream f = open_out(path);
  for (std::size_t j = 0; j < headers.size(); ++j)
    f << headers[j] << (j + 1 < headers.size() ? ',' : '\n');
  for (std::size_t i = 0; i < cols[0].size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      f << fmt(cols[j][i]) << (j + 1 < cols.size() ? ',' : '\n');
}

std::vector<std::size_t> histogram_counts(const std::vector<double>& values, std::size_t nbins,
                                          double lo, double hi) {
  require(nbins >= 1, "histogram_counts: need at least one bin");
  require(hi > lo, "histogram_counts: empty range");
  std::vector<std::size_t> counts(nbins, 0);
  for (double v : values) {
    require(std::isfinite(v), "histogram_counts: non-finite value");
    double pos = (v - lo) / (hi - lo) * static_cast<double>(nbins);
    long idx = static_cast<long>(std::floor(pos));
    idx = std::clamp(idx, 0L, static_cast<long>(nbins) - 1);
    ++counts[static_cast<std::size_t>(idx)];
  }
  return counts;
}

}  // namespace cotlab
