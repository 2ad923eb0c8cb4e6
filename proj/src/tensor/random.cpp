#include "mvp/tensor/random.hpp"

namespace mvp {

Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor randu(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace mvp
