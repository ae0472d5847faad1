#pragma once

// Shared minibatch trainer used by the static-map and flow modules. Internal
// to the library; the public surface is the per-model train functions.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cotlab/adam.hpp"
#include "cotlab/dataset.hpp"
#include "cotlab/graph.hpp"
#include "cotlab/picnn.hpp"
#include "cotlab/rng.hpp"
#include "cotlab/run_record.hpp"

namespace cotlab::detail {

struct LoopConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::size_t valid_interval = 0;  // optimizer steps per validation check; 0 = once per epoch
  int patience = 10;               // validation checks without improvement; <= 0 disables
};

// The loss closure returns the batch objective and fills gradients aligned
// with refs; snapshot/restore capture the full parameter state.
struct TrainLoop {
  std::function<double(const std::vector<int>& rows, std::vector<Tensor>& grads)> batch_loss;
  std::function<double()> valid_loss;  // objective over the validation split
  std::function<void()> snapshot;      // remember current params as best
  std::function<void()> restore;       // roll back to the snapshot
  std::function<void()> project;
  std::vector<ParamRef> refs;
  double nll_const = 0.0;  // reported-NLL shift added to recorded losses
};

// writes src's weights into dst without disturbing the addresses of dst's
// tensors (optimizer refs alias them)
template <class Params>
void copy_param_values(Params& dst, const Params& src) {
  auto rd = param_refs(dst);
  auto rs = param_refs(const_cast<Params&>(src));
  for (std::size_t i = 0; i < rd.size(); ++i) *rd[i].value = *rs[i].value;
}

inline void run_train_loop(const LoopConfig& cfg, const Dataset& data, TrainLoop& tl,
                           RunRecord& rec, double& best_valid) {
  const auto t0 = std::chrono::steady_clock::now();
  if (data.train.empty() || data.valid.empty())
    throw std::invalid_argument("training requires non-empty train and validation splits");
  if (cfg.batch_size < 1 || cfg.learning_rate <= 0.0)
    throw std::invalid_argument("bad training config");

  best_valid = tl.valid_loss() + tl.nll_const;
  tl.snapshot();
  rec.seed = cfg.seed;
  const std::size_t steps_per_epoch = (data.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t interval = cfg.valid_interval ? cfg.valid_interval : steps_per_epoch;
  rec.interval_steps = interval;

  if (cfg.epochs == 0) {
    rec.final_metrics["valid_nll"] = best_valid;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return;
  }

  Adam opt({cfg.learning_rate});
  Rng shuffle_rng(Rng::derive(cfg.seed, 1));
  std::vector<int> order = data.train;
  std::vector<Tensor> grads;
  double acc = 0.0;
  std::size_t acc_n = 0, step = 0;
  int since_best = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    for (std::size_t at = 0; at < order.size() && !stop; at += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), at + cfg.batch_size);
      const std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(at),
                                  order.begin() + static_cast<std::ptrdiff_t>(hi));
      // a failed Hessian factorization mid-run is a divergence signal, same
      // as an overflowed loss
      double l;
      try {
        l = tl.batch_loss(rows, grads);
      } catch (const FactorizationError&) {
        l = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(l)) {
        tl.restore();
        rec.diverged = true;
        stop = true;
        break;
      }
      opt.step(tl.refs, grads);
      tl.project();
      acc += l + tl.nll_const;
      acc_n += 1;
      step += 1;
      if (step % interval == 0) {
        double vl;
        try {
          vl = tl.valid_loss() + tl.nll_const;
        } catch (const FactorizationError&) {
          vl = std::numeric_limits<double>::quiet_NaN();
        }
        rec.train_loss.push_back(acc / static_cast<double>(acc_n));
        rec.valid_loss.push_back(vl);
        acc = 0.0;
        acc_n = 0;
        if (!std::isfinite(vl)) {
          tl.restore();
          rec.diverged = true;
          stop = true;
          break;
        }
        if (vl < best_valid) {
          best_valid = vl;
          rec.best_interval = rec.valid_loss.size() - 1;
          tl.snapshot();
          since_best = 0;
        } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
          rec.stopped_early = true;
          stop = true;
        }
      }
    }
  }
  tl.restore();  // hand back the best-validation weights
  rec.final_metrics["valid_nll"] = best_valid;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace cotlab::detail
