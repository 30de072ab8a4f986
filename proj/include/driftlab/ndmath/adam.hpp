#pragma once

#include <cmath>

#include "driftlab/ndmath/tensor.hpp"

namespace driftlab {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter Adam moments. Moments start at zero; step_count counts applied updates.
struct AdamState {
  AdamState() = default;
  AdamState(const Tensor& like, AdamHyper h)
      : hyper(h), first_moment(like.rows(), like.cols()), second_moment(like.rows(), like.cols()) {}

  AdamHyper hyper;
  long step_count = 0;
  Tensor first_moment;
  Tensor second_moment;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
  require_same_shape(params, grads, "adam_step");
  if (state.first_moment.empty() && state.step_count == 0) {
    state.first_moment = Tensor(params.rows(), params.cols());
    state.second_moment = Tensor(params.rows(), params.cols());
  }
  require_same_shape(params, state.first_moment, "adam_step");
  require_same_shape(params, state.second_moment, "adam_step");

  const AdamHyper& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    params[i] -= h.learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
  }
}

}  // namespace driftlab
