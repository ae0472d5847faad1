#pragma once

#include <cstdint>
#include <vector>

#include "cotlab/tensor.hpp"

namespace cotlab {

// Anything that can draw x given a conditioning vector y. Coordinates are the
// model's own (normalized) ones; callers de-normalize if they need raw units.
class ConditionalSampler {
 public:
  virtual ~ConditionalSampler();
  virtual std::size_t xdim() const = 0;
  virtual std::size_t ydim() const = 0;
  // y is (ydim, 1); returns (xdim, count). When `converged` is non-null it is
  // filled with one flag per draw (samplers that cannot fail report all-true).
  virtual Tensor sample(const Tensor& y, std::size_t count, std::uint64_t seed,
                        std::vector<char>* converged = nullptr) const = 0;
};

}  // namespace cotlab
