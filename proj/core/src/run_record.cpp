#include "cotlab/run_record.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cotlab/hexfloat.hpp"

namespace cotlab {

namespace {

using nlohmann::json;

json hex_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(hex_from_double(x));
  return a;
}

std::vector<double> hex_array_back(const json& a) {
  std::vector<double> v;
  v.reserve(a.size());
  for (const auto& s : a) v.push_back(double_from_hex(s.get<std::string>()));
  return v;
}

}  // namespace

std::string run_record_to_json(const RunRecord& r) {
  json j;
  j["format_version"] = 1;
  j["config"] = r.config;
  j["seed"] = r.seed;
  j["interval_steps"] = r.interval_steps;
  j["train_loss"] = hex_array(r.train_loss);
  j["valid_loss"] = hex_array(r.valid_loss);
  json fm = json::object();
  for (const auto& [k, v] : r.final_metrics) fm[k] = hex_from_double(v);
  j["final_metrics"] = fm;
  j["checkpoint_path"] = r.checkpoint_path;
  j["wall_seconds"] = hex_from_double(r.wall_seconds);
  j["diverged"] = r.diverged;
  j["stopped_early"] = r.stopped_early;
  j["best_interval"] = r.best_interval;
  return j.dump(2);
}

RunRecord run_record_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("run record parse: ") + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1)
    throw std::invalid_argument("run record: unsupported format version");
  RunRecord r;
  try {
    r.config = j.at("config").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.interval_steps = j.at("interval_steps").get<std::size_t>();
    r.train_loss = hex_array_back(j.at("train_loss"));
    r.valid_loss = hex_array_back(j.at("valid_loss"));
    for (const auto& [k, v] : j.at("final_metrics").items())
      r.final_metrics[k] = double_from_hex(v.get<std::string>());
    r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    r.wall_seconds = double_from_hex(j.at("wall_seconds").get<std::string>());
    r.diverged = j.at("diverged").get<bool>();
    r.stopped_early = j.at("stopped_early").get<bool>();
    r.best_interval = j.at("best_interval").get<std::size_t>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("run record fields: ") + e.what());
  }
  return r;
}

void save_run_record(const RunRecord& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("cannot open for write: " + path);
  f << run_record_to_json(r) << "\n";
}

RunRecord load_run_record(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return run_record_from_json(text);
}

}  // namespace cotlab
