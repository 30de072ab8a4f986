#pragma once

// Shared test helpers: seeded random generators and a central finite-difference
// gradient oracle that knows nothing about the tape.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "driftlab/ndmath/ops.hpp"
#include "driftlab/rng.hpp"

namespace testing_support {

using driftlab::Rng;
using driftlab::Tensor;

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = scale * rng.normal();
  return t;
}

inline Tensor random_unit(Rng& rng, std::size_t m) {
  Tensor t = random_tensor(rng, m, 1);
  return driftlab::kernels::normalized(t);
}

inline std::size_t random_dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// d f / d x by central differences, one coordinate at a time.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-6) {
  Tensor g(x.rows(), x.cols());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|) in the Euclidean norm; 0 when both vanish below `floor`.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-9) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), floor});
  return std::sqrt(diff) / denom;
}

/**
 * Builds `graph` on a fresh tape with every input as a leaf, and compares the
 * tape gradient of each input with central differences. Returns the worst
 * relative error.
 */
inline double gradient_check(const std::vector<Tensor>& inputs,
                             const std::function<driftlab::Var(driftlab::Tape&, const std::vector<driftlab::Var>&)>& graph,
                             double h = 1e-6) {
  using driftlab::Tape;
  using driftlab::Var;
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  const Var out = graph(tape, leaves);
  const auto grads = tape.backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& xk) {
      Tape t2;
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(t2.leaf(j == k ? xk : inputs[j]));
      return graph(t2, vs).value()[0];
    };
    worst = std::max(worst, relative_error(grads[leaves[k]], numeric_gradient(f, inputs[k], h)));
  }
  return worst;
}

/// Reduces any tensor-valued node to a scalar through a fixed random weighting.
inline driftlab::Var weighted_sum(driftlab::Tape& tape, driftlab::Var v, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(rng, v.value().rows(), v.value().cols());
  return driftlab::ad::dot(v, tape.constant(w));
}

}  // namespace testing_support
