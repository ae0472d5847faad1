#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cotlab/picnn.hpp"
#include "cotlab/tensor.hpp"

namespace cotlab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment state is indexed positionally, so the ParamRef list must
// keep one order across steps (param_refs guarantees that for a fixed struct).
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<ParamRef>& refs, const std::vector<Tensor>& grads) {
    if (refs.size() != grads.size()) throw std::invalid_argument("adam: refs/grads size mismatch");
    if (m_.empty()) {
      for (const auto& r : refs) {
        m_.push_back(Tensor::zeros(r.value->rows(), r.value->cols()));
        v_.push_back(Tensor::zeros(r.value->rows(), r.value->cols()));
      }
    }
    if (m_.size() != refs.size()) throw std::invalid_argument("adam: parameter count changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Tensor& p = *refs[i].value;
      const Tensor& g = grads[i];
      if (!p.same_shape(g)) throw std::invalid_argument("adam: gradient shape mismatch");
      for (std::size_t k = 0; k < p.size(); ++k) {
        double& m = m_[i].data()[k];
        double& v = v_[i].data()[k];
        const double gk = g.data()[k];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gk;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gk * gk;
        p.data()[k] -= cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
      }
    }
  }

  int steps_taken() const { return t_; }

private:
  AdamConfig cfg_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace cotlab
