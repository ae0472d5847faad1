#include "cotlab/model.hpp"

namespace cotlab {

ConditionalSampler::~ConditionalSampler() = default;

}  // namespace cotlab
