#include "mvp/trainer/synthetic.hpp"

#include <cmath>

#include "mvp/errors.hpp"
#include "mvp/tensor/random.hpp"

namespace mvp {

namespace {

std::vector<double> gaussian(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

}  // namespace

void SyntheticTaskConfig::validate() const {
  if (tokens_per_level.empty()) throw ConfigError("task: no levels");
  for (auto l : tokens_per_level) {
    if (l == 0) throw ConfigError("task: every level needs at least one token");
  }
  if (d == 0 || output_tokens == 0 || d_out == 0 || latent_rank == 0) {
    throw ConfigError("task: d, output_tokens, d_out and latent_rank must be positive");
  }
  if (!(level_noise >= 0.0)) throw ConfigError("task: level_noise must be non-negative");
  if (n_train == 0) throw ConfigError("task: n_train must be positive");
}

SyntheticTask::SyntheticTask(SyntheticTaskConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto r = config_.latent_rank;
  const double load_sd = 1.0 / std::sqrt(static_cast<double>(r));
  Rng rng(mix_seed(config_.seed, 0));
  for (auto l : config_.tokens_per_level) loadings_.push_back(gaussian(l * r, load_sd, rng));
  target_rows_ = gaussian(config_.output_tokens * r, load_sd, rng);
  target_map_ = gaussian(config_.d * config_.d_out, 1.0 / std::sqrt(static_cast<double>(config_.d)), rng);
}

Sample SyntheticTask::train(std::size_t index) const {
  if (index >= config_.n_train) throw ContractError("task: train index out of range");
  return sample(index);
}

Sample SyntheticTask::val(std::size_t index) const {
  if (index >= config_.n_val) throw ContractError("task: validation index out of range");
  return sample(config_.n_train + index);
}

Sample SyntheticTask::sample(std::size_t sample_id) const {
  const auto r = config_.latent_rank, d = config_.d, d_out = config_.d_out, t_out = config_.output_tokens;
  Rng rng(mix_seed(config_.seed, 1000 + sample_id));
  const auto z = gaussian(r * d, 1.0, rng);

  Sample s;
  for (std::size_t i = 0; i < loadings_.size(); ++i) {
    const auto l = config_.tokens_per_level[i];
    auto x = gaussian(l * d, config_.level_noise, rng);
    const auto& c = loadings_[i];
    for (std::size_t row = 0; row < l; ++row)
      for (std::size_t k = 0; k < r; ++k)
        for (std::size_t col = 0; col < d; ++col) x[row * d + col] += c[row * r + k] * z[k * d + col];
    s.features.levels.emplace_back(Shape{l, d}, std::move(x));
  }

  // Y = P·(Z·M)
  std::vector<double> zm(r * d_out, 0.0);
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t col = 0; col < d; ++col)
      for (std::size_t o = 0; o < d_out; ++o) zm[k * d_out + o] += z[k * d + col] * target_map_[col * d_out + o];
  std::vector<double> y(t_out * d_out, 0.0);
  for (std::size_t t = 0; t < t_out; ++t)
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t o = 0; o < d_out; ++o) y[t * d_out + o] += target_rows_[t * r + k] * zm[k * d_out + o];
  s.target = Tensor({t_out, d_out}, std::move(y));
  return s;
}

}  // namespace mvp
