#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cotlab/dataset.hpp"
#include "cotlab/run_record.hpp"

namespace cotlab {

// One random-search draw. Potential-map tuples use context_width and depth;
// flow tuples use nt, the penalty weights, and the optional embedding widths.
// Fields that do not apply to a model stay at zero.
struct HyperTuple {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t width = 32;
  std::size_t context_width = 0;  // u
  std::size_t depth = 2;          // K
  std::size_t nt = 0;
  double alpha1 = 0.0;  // transport weight
  double alpha2 = 0.0;  // infeasibility weight
  std::size_t w_y = 0;  // context embedding widths, 0 keeps the embedding off
  std::size_t w_yout = 0;

  bool operator==(const HyperTuple&) const = default;
};

std::string tuple_json(const HyperTuple& t);

// Candidate lists plus log-uniform penalty ranges for random search. The
// alpha exponents are base 10. `m` is the context dimension and drives the
// context-width rule.
struct SearchSpace {
  bool flow = false;
  int m = 1;
  std::vector<std::size_t> batch_sizes;
  std::vector<double> learning_rates;
  std::vector<std::size_t> widths;
  std::vector<std::size_t> depths;        // potential map only
  std::vector<std::size_t> nts;           // flow only
  std::vector<std::size_t> embed_widths;  // flow only; empty disables the embedding
  double log_alpha_lo = -1.0;
  double log_alpha_hi = 3.0;
};

// Wide spaces for the synthetic benchmarks. The flow variant optionally
// shifts the penalty exponents up to [2, 5] for problems that need a stiff
// transport term.
SearchSpace pcp_search_space(int m);
SearchSpace flow_search_space(int m, bool high_alpha = false);
// Narrower spaces for the tabular suite.
SearchSpace pcp_tabular_space(int m);
SearchSpace flow_tabular_space(int m);

// Context-width candidates {w / 2^i : w / 2^i > m} plus m itself, descending.
std::vector<std::size_t> context_width_options(std::size_t w, int m);

// Draws `count` tuples. Tuple i comes from Rng(Rng::derive(seed, i)), so the
// i-th tuple is independent of count. Context widths are drawn from
// context_width_options at the sampled width; penalty weights are
// exponentiated uniform draws. Throws when a required candidate list is
// empty.
std::vector<HyperTuple> sample_space(const SearchSpace& space, std::size_t count,
                                     std::uint64_t seed);

enum class Task { Conditional, Joint, Lfi };
enum class ModelKind { PcpMap, CotFlow };

// Search-harness settings. The JSON form is versioned so saved configs stay
// readable; see experiment_config_json.
struct ExperimentConfig {
  Task task = Task::Conditional;
  ModelKind model = ModelKind::PcpMap;
  std::string dataset;  // path prefix for load_dataset; empty means in-memory
  std::size_t pilot_count = 100;
  std::size_t pilot_epochs = 15;
  std::size_t top_k = 10;
  std::size_t repeats = 5;
  std::size_t full_epochs = 50;
  std::size_t valid_interval = 0;  // forwarded to the trainers
  int patience = 10;
  std::size_t mmd_points = 512;  // test columns scored by the sample metric
  std::string out_dir;           // run records land here when non-empty
};

// budget >= top_k >= 1, repeats >= 1, and the flow model only trains
// conditional or simulator tasks
void validate(const ExperimentConfig& c);

std::string experiment_config_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const std::string& text);

struct PilotRun {
  std::size_t index = 0;  // position in the sampled tuple list
  HyperTuple tuple;
  double valid_nll = 0.0;  // NaN when the run diverged
  bool diverged = false;
  RunRecord record;
};

// Samples cfg.pilot_count tuples with the master seed, trains each for
// cfg.pilot_epochs with run seed derive(derive(seed, i), 1), and ranks by
// best validation NLL ascending. Divergent runs are kept, ranked at the
// tail in sampling order, so the result is a permutation of the draws.
// Records are written to out_dir as pilot_<index>.json when out_dir is set.
// Runs execute on the worker pool.
std::vector<PilotRun> pilot_search(const ExperimentConfig& cfg, const SearchSpace& space,
                                   const Dataset& data, std::uint64_t seed);

struct FullRun {
  std::size_t tuple_index = 0;  // position in the caller's tuple list
  std::size_t repeat = 0;
  double test_nll = 0.0;  // NaN when the run diverged
  double mmd = 0.0;       // NaN when not scored
  bool diverged = false;
  RunRecord record;
};

struct TupleScore {
  HyperTuple tuple;
  double nll_mean = 0.0;
  double nll_std = 0.0;  // population std over completed repeats
  double mmd_mean = 0.0;
  double mmd_std = 0.0;
  std::size_t completed = 0;  // repeats that finished with a finite test NLL
};

struct SearchSummary {
  std::vector<FullRun> runs;       // tuple-major, repeat-minor
  std::vector<TupleScore> scores;  // ascending mean test NLL, unscored last
  // indices into scores; equal when a single tuple is scored
  std::size_t best = 0;
  std::size_t median = 0;
  std::size_t worst = 0;
};

// Trains every tuple cfg.repeats times with per-run seed
// derive(derive(seed, i), 2 + r), evaluates test NLL, and adds the paired
// conditional-sample MMD against the test split (joint task: both blocks are
// drawn from the model). Scores aggregate per tuple; best/median/worst rank
// the scored tuples by mean test NLL.
SearchSummary full_training(const ExperimentConfig& cfg, const std::vector<HyperTuple>& tuples,
                            const Dataset& data, std::uint64_t seed);

// results.csv (one row per scored tuple), runs.csv (one row per training
// run), pilot.csv when given, and loss_best.csv with the best run's loss
// trace. Empty inputs leave header-only files. Every file reads back with
// read_csv_table.
void emit_report(const std::string& dir, const SearchSummary& s,
                 const std::vector<PilotRun>* pilot = nullptr);

// One column per header, columns of equal length, %.17g cells.
void write_series_csv(const std::string& path, const std::vector<std::string>& headers,
                      const std::vector<std::vector<double>>& cols);

// Equal-width bins over [lo, hi]; values outside the range land in the end
// bins, so the counts always sum to values.size().
std::vector<std::size_t> histogram_counts(const std::vector<double>& values, std::size_t nbins,
                                          double lo, double hi);

}  // namespace cotlab
