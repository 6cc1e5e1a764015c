#pragma once

#include "arw/numerics.hpp"

namespace arw {

// Per-speaker adversarial weights for one batch. When produced by any of
// the normalized schemes the batch mean is 2 by construction.
struct SpeakerWeights {
  Vector values;
  std::size_t batch_size() const { return values.size(); }
};

// Symmetric per-pair weights, lambda(j,k) = lambda_j + lambda_k.
struct PairWeights {
  Matrix values;
};

}  // namespace arw
