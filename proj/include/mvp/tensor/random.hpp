#pragma once

#include <cstdint>
#include <random>

#include "mvp/tensor/tensor.hpp"

namespace mvp {

using Rng = std::mt19937_64;

Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);
Tensor randu(Shape shape, double lo, double hi, Rng& rng, bool requires_grad = false);

/// splitmix64 finalizer; derives independent stream seeds from (seed, salt).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace mvp
