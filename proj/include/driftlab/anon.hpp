#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/ndmath/tensor.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

struct AnonConfig {
  int K = 30;
  int K_star = 15;
  std::uint64_t rng_seed = 7;
  double lambda = 1.0;

  void validate(std::size_t pool_size) const {
    if (K_star < 1 || K_star > K) throw ConfigError("anon config: need 1 <= K_star <= K");
    if (static_cast<std::size_t>(K) > pool_size) {
      throw ConfigError("anon config: K = " + std::to_string(K) + " exceeds the pool size " +
                        std::to_string(pool_size));
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("anon config: lambda must lie in [0, 1]");
  }
};

struct PseudoSpeaker {
  Tensor x_p;                      // unit norm
  Tensor raw_mean;                 // mean of the selected pool vectors before renormalisation
  std::vector<std::size_t> indices;  // selected pool indices, in draw order
};

/// Pool indices ordered by decreasing cosine distance to x_o; equal distances keep ascending index.
inline std::vector<std::size_t> furthest_first(const Tensor& x_o, const std::vector<Tensor>& pool) {
  std::vector<double> dist(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) dist[i] = cosine_distance(x_o, pool[i]);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&dist](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  return order;
}

/**
 * A(x_o): take the K pool vectors furthest from x_o, draw K_star of them
 * without replacement, average and renormalise.
 */
inline PseudoSpeaker anonymise(const Tensor& x_o, const std::vector<Tensor>& pool, const AnonConfig& cfg) {
  if (pool.size() < static_cast<std::size_t>(std::max(cfg.K, 0))) {
    throw ConfigError("anonymise: pool has " + std::to_string(pool.size()) + " vectors, K = " +
                      std::to_string(cfg.K));
  }
  cfg.validate(pool.size());
  std::vector<std::size_t> candidates = furthest_first(x_o, pool);
  candidates.resize(static_cast<std::size_t>(cfg.K));

  // Partial Fisher-Yates: the first K_star slots become a uniform draw without replacement.
  Rng rng(cfg.rng_seed);
  const auto k_star = static_cast<std::size_t>(cfg.K_star);
  for (std::size_t i = 0; i < k_star; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k_star);

  PseudoSpeaker out;
  out.indices = candidates;
  out.raw_mean = Tensor(x_o.rows(), x_o.cols());
  for (std::size_t idx : candidates) out.raw_mean = kernels::add(out.raw_mean, pool[idx]);
  out.raw_mean = kernels::scale(out.raw_mean, 1.0 / static_cast<double>(k_star));
  if (!(kernels::norm(out.raw_mean) > 0.0)) {
    throw DomainError("anonymise: the selected pool vectors average to zero");
  }
  out.x_p = kernels::normalized(out.raw_mean);
  return out;
}

/// x_o + lambda (x_p - x_o), not renormalised. Evaluated as (1 - lambda) x_o + lambda x_p so
/// that both endpoints are reproduced exactly.
inline Tensor interpolate(const Tensor& x_o, const Tensor& x_p, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("interpolate: lambda must lie in [0, 1]");
  require_same_shape(x_o, x_p, "interpolate");
  Tensor out(x_o.rows(), x_o.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * x_o[i] + lambda * x_p[i];
  return out;
}

/// m x N matrix whose columns all equal x.
inline Tensor duplicate_frames(const Tensor& x, std::size_t frames) { return kernels::repeat_columns(x, frames); }

}  // namespace driftlab
