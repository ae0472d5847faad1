#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cotlab {

// One training run's trace. Interval losses use the reported NLL convention
// (reference-density constant included). Serialization is exact: doubles
// travel as hexadecimal floats.
struct RunRecord {
  std::string config;  // JSON snapshot of the config that produced the run
  std::uint64_t seed = 0;
  std::size_t interval_steps = 0;  // optimizer steps per validation check
  std::vector<double> train_loss;  // one entry per interval
  std::vector<double> valid_loss;
  std::map<std::string, double> final_metrics;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
  bool diverged = false;
  bool stopped_early = false;
  std::size_t best_interval = 0;  // index into valid_loss backing the returned params

  bool operator==(const RunRecord&) const = default;
};

std::string run_record_to_json(const RunRecord& r);
RunRecord run_record_from_json(const std::string& text);
void save_run_record(const RunRecord& r, const std::string& path);
RunRecord load_run_record(const std::string& path);

}  // namespace cotlab
