#include "cotlab/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotlab/hexfloat.hpp"
#include "cotlab/rng.hpp"

namespace cotlab {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json tensor_list(std::vector<ParamRef> refs) {
  json a = json::array();
  for (const ParamRef& r : refs) {
    json t;
    t["name"] = r.name;
    t["rows"] = r.value->rows();
    t["cols"] = r.value->cols();
    json d = json::array();
    for (std::size_t k = 0; k < r.value->size(); ++k)
      d.push_back(hex_from_double(r.value->data()[k]));
    t["data"] = d;
    a.push_back(t);
  }
  return a;
}

// fills refs in order; the file must carry exactly these names and shapes
void fill_tensors(std::vector<ParamRef> refs, const json& a) {
  if (a.size() != refs.size()) throw std::invalid_argument("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const json& t = a[i];
    if (t.at("name").get<std::string>() != refs[i].name)
      throw std::invalid_argument("checkpoint: tensor order mismatch at " + refs[i].name);
    Tensor& dst = *refs[i].value;
    if (t.at("rows").get<std::size_t>() != dst.rows() ||
        t.at("cols").get<std::size_t>() != dst.cols())
      throw std::invalid_argument("checkpoint: shape mismatch at " + refs[i].name);
    const json& d = t.at("data");
    if (d.size() != dst.size())
      throw std::invalid_argument("checkpoint: length mismatch at " + refs[i].name);
    for (std::size_t k = 0; k < dst.size(); ++k)
      dst.data()[k] = double_from_hex(d[k].get<std::string>());
  }
}

void write_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("checkpoint: cannot write " + path);
  out << j.dump(2) << "\n";
}

json read_file(const std::string& path, const std::string& want_kind) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("checkpoint: cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("checkpoint parse: ") + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion)
    throw std::invalid_argument("checkpoint: unsupported format version");
  const std::string kind = j.at("model").get<std::string>();
  if (!want_kind.empty() && kind != want_kind)
    throw std::invalid_argument("checkpoint: model kind is '" + kind + "', expected '" +
                                want_kind + "'");
  return j;
}

json picnn_dims_json(const PicnnDims& d) {
  return json{{"n", d.n}, {"m", d.m}, {"w", d.w}, {"u", d.u}, {"K", d.K}};
}

PicnnDims picnn_dims_back(const json& j) {
  return PicnnDims{j.at("n").get<int>(), j.at("m").get<int>(), j.at("w").get<int>(),
                   j.at("u").get<int>(), j.at("K").get<int>()};
}

}  // namespace

void save_checkpoint(const StrictPotentialParams& p, const std::string& path) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = "pcp";
  j["dims"] = picnn_dims_json(p.picnn.dims);
  j["tensors"] = tensor_list(param_refs(const_cast<StrictPotentialParams&>(p)));
  write_file(j, path);
}

void save_checkpoint(const StrictPotentialParams& pot_x, const FicnnParams& pot_y,
                     const std::string& path) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = "pcp-joint";
  j["dims"] = picnn_dims_json(pot_x.picnn.dims);
  j["marginal_dims"] =
      json{{"m", pot_y.dims.m}, {"w", pot_y.dims.w}, {"K", pot_y.dims.K}};
  j["tensors"] = tensor_list(param_refs(const_cast<StrictPotentialParams&>(pot_x), "x."));
  j["marginal_tensors"] = tensor_list(param_refs(const_cast<FicnnParams&>(pot_y), "y."));
  write_file(j, path);
}

void save_checkpoint(const PhiParams& p, const std::string& path) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = "cot-flow";
  j["dims"] = json{{"n", p.n},
                   {"m", p.m},
                   {"width", p.a.cols()},
                   {"w_y", p.embed.enabled() ? p.embed.W0.rows() : 0},
                   {"w_yout", p.embed.enabled() ? p.embed.W2.rows() : 0},
                   {"alpha1", hex_from_double(p.alpha1)}};
  j["tensors"] = tensor_list(param_refs(const_cast<PhiParams&>(p)));
  write_file(j, path);
}

std::string checkpoint_kind(const std::string& path) {
  return read_file(path, "").at("model").get<std::string>();
}

StrictPotentialParams load_pcp_checkpoint(const std::string& path) {
  const json j = read_file(path, "pcp");
  StrictPotentialParams p = init_strict_potential(picnn_dims_back(j.at("dims")), 0);
  fill_tensors(param_refs(p), j.at("tensors"));
  return p;
}

std::pair<StrictPotentialParams, FicnnParams> load_joint_checkpoint(const std::string& path) {
  const json j = read_file(path, "pcp-joint");
  StrictPotentialParams px = init_strict_potential(picnn_dims_back(j.at("dims")), 0);
  const json& md = j.at("marginal_dims");
  FicnnParams py = init_ficnn(
      FicnnDims{md.at("m").get<int>(), md.at("w").get<int>(), md.at("K").get<int>()}, 0);
  fill_tensors(param_refs(px, "x."), j.at("tensors"));
  fill_tensors(param_refs(py, "y."), j.at("marginal_tensors"));
  return {std::move(px), std::move(py)};
}

PhiParams load_flow_checkpoint(const std::string& path) {
  const json j = read_file(path, "cot-flow");
  const json& d = j.at("dims");
  PhiParams p = init_phi(d.at("n").get<int>(), d.at("m").get<int>(),
                         d.at("width").get<int>(), d.at("w_y").get<int>(),
                         d.at("w_yout").get<int>(), 0);
  p.alpha1 = double_from_hex(d.at("alpha1").get<std::string>());
  fill_tensors(param_refs(p), j.at("tensors"));
  return p;
}

}  // namespace cotlab
