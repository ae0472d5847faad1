#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cotlab/checkpoint.hpp"
#include "cotlab/cot_flow.hpp"
#include "cotlab/parallel.hpp"
#include "cotlab/picnn.hpp"

using namespace cotlab;

namespace {

std::string temp_path(const char* name) { return std::string("/tmp/cotlab_test_") + name; }

// largest elementwise gap across two aligned parameter lists; shape or count
// mismatches count as infinite
double max_ref_diff(const std::vector<ParamRef>& a, const std::vector<ParamRef>& b) {
  if (a.size() != b.size()) return 1e300;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor& x = *a[i].value;
    const Tensor& y = *b[i].value;
    if (x.rows() != y.rows() || x.cols() != y.cols() || a[i].name != b[i].name) return 1e300;
    for (std::size_t k = 0; k < x.size(); ++k)
      m = std::max(m, std::abs(x.data()[k] - y.data()[k]));
  }
  return m;
}

}  // namespace

TEST_CASE("potential map weights survive the save and load cycle bit for bit") {
  StrictPotentialParams p = init_strict_potential({2, 1, 8, 4, 3}, 5);
  p.gamma1 = Tensor::scalar(0.3125);
  const std::string path = temp_path("ck_pcp.json");
  save_checkpoint(p, path);

  CHECK(checkpoint_kind(path) == "pcp");
  StrictPotentialParams q = load_pcp_checkpoint(path);
  CHECK(max_ref_diff(param_refs(p), param_refs(q)) == 0.0);
  CHECK(q.picnn.dims.n == 2);
  CHECK(q.picnn.dims.m == 1);
  CHECK(q.picnn.dims.w == 8);
  CHECK(q.picnn.dims.u == 4);
  CHECK(q.picnn.dims.K == 3);
  std::remove(path.c_str());
}

TEST_CASE("a joint checkpoint carries both potentials exactly") {
  StrictPotentialParams px = init_strict_potential({2, 3, 8, 4, 3}, 5);
  FicnnParams py = init_ficnn({3, 8, 2}, 7);
  const std::string path = temp_path("ck_joint.json");
  save_checkpoint(px, py, path);

  CHECK(checkpoint_kind(path) == "pcp-joint");
  auto [qx, qy] = load_joint_checkpoint(path);
  CHECK(max_ref_diff(param_refs(px), param_refs(qx)) == 0.0);
  CHECK(max_ref_diff(param_refs(py), param_refs(qy)) == 0.0);
  CHECK(qy.dims.m == 3);
  CHECK(qy.dims.K == 2);
  std::remove(path.c_str());
}

TEST_CASE("a flow checkpoint restores weights, penalty, and embedding") {
  PhiParams p = init_phi(2, 3, 16, 8, 4, 11);
  p.alpha1 = 0.37;
  const std::string path = temp_path("ck_flow.json");
  save_checkpoint(p, path);

  CHECK(checkpoint_kind(path) == "cot-flow");
  PhiParams q = load_flow_checkpoint(path);
  CHECK(max_ref_diff(param_refs(p), param_refs(q)) == 0.0);
  CHECK(q.alpha1 == 0.37);
  CHECK(q.n == 2);
  CHECK(q.m == 3);
  CHECK(q.embed.enabled());
  CHECK(q.embed.out_dim(q.m) == 4);
  CHECK(param_refs(q).size() == 14);

  // the embedding stays off when it was off at save time
  PhiParams plain = init_phi(2, 3, 16, 11);
  save_checkpoint(plain, path);
  PhiParams qp = load_flow_checkpoint(path);
  CHECK_FALSE(qp.embed.enabled());
  CHECK(max_ref_diff(param_refs(plain), param_refs(qp)) == 0.0);
  std::remove(path.c_str());
}

TEST_CASE("mismatched model kinds are refused with a clear message") {
  StrictPotentialParams p = init_strict_potential({2, 1, 8, 4, 2}, 5);
  const std::string pcp_path = temp_path("ck_kind_pcp.json");
  save_checkpoint(p, pcp_path);
  PhiParams f = init_phi(2, 1, 8, 3);
  const std::string flow_path = temp_path("ck_kind_flow.json");
  save_checkpoint(f, flow_path);

  CHECK_THROWS_WITH_AS(load_flow_checkpoint(pcp_path),
                       "checkpoint: model kind is 'pcp', expected 'cot-flow'",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(load_pcp_checkpoint(flow_path),
                       "checkpoint: model kind is 'cot-flow', expected 'pcp'",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(load_joint_checkpoint(pcp_path),
                       "checkpoint: model kind is 'pcp', expected 'pcp-joint'",
                       std::invalid_argument);
  std::remove(pcp_path.c_str());
  std::remove(flow_path.c_str());
}

TEST_CASE("damaged, missing, or future-versioned files raise structured errors") {
  StrictPotentialParams p = init_strict_potential({2, 1, 8, 4, 2}, 5);
  const std::string path = temp_path("ck_damage.json");
  save_checkpoint(p, path);

  std::string all;
  {
    std::ifstream in(path);
    all.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const std::string trunc = temp_path("ck_trunc.json");
  {
    std::ofstream out(trunc);
    out << all.substr(0, all.size() / 2);
  }
  CHECK_THROWS_AS(load_pcp_checkpoint(trunc), std::invalid_argument);
  CHECK_THROWS_AS(checkpoint_kind(temp_path("ck_nowhere.json")), std::invalid_argument);

  const std::string future = temp_path("ck_future.json");
  {
    std::ofstream out(future);
    out << "{\"format_version\": 2, \"model\": \"pcp\"}\n";
  }
  CHECK_THROWS_WITH_AS(load_pcp_checkpoint(future), "checkpoint: unsupported format version",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(checkpoint_kind(future), "checkpoint: unsupported format version",
                       std::invalid_argument);
  std::remove(path.c_str());
  std::remove(trunc.c_str());
  std::remove(future.c_str());
}

TEST_CASE("the worker pool covers every index once and respects the env override") {
  std::atomic<long> sum{0};
  std::atomic<std::size_t> calls{0};
  parallel_for(1000, [&](std::size_t i) {
    sum += static_cast<long>(i);
    ++calls;
  });
  CHECK(sum.load() == 499500);
  CHECK(calls.load() == 1000);

  setenv("COTLAB_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  sum = 0;
  parallel_for(100, [&](std::size_t i) { sum += static_cast<long>(i); });
  CHECK(sum.load() == 4950);

  setenv("COTLAB_WORKERS", "0", 1);
  CHECK(worker_count() == 1);  // nonsense values clamp to a single worker
  unsetenv("COTLAB_WORKERS");

  std::size_t ran = 0;
  parallel_for(0, [&](std::size_t) { ++ran; });
  CHECK(ran == 0);
}

TEST_CASE("a failing task surfaces its exception after the pool drains") {
  setenv("COTLAB_WORKERS", "3", 1);
  CHECK_THROWS_WITH_AS(parallel_for(32, [&](std::size_t i) {
                         if (i == 7) throw std::runtime_error("boom at 7");
                       }),
                       "boom at 7", std::runtime_error);
  unsetenv("COTLAB_WORKERS");
}
