#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/models.hpp"
#include "driftlab/ndmath/adam.hpp"
#include "driftlab/ndmath/ops.hpp"

namespace driftlab {

enum class OptimizeMode { full_matrix, shared_vector };

inline std::string_view to_string(OptimizeMode m) {
  return m == OptimizeMode::full_matrix ? "full-matrix" : "shared-vector";
}

inline OptimizeMode optimize_mode_from_string(std::string_view s) {
  if (s == "full-matrix") return OptimizeMode::full_matrix;
  if (s == "shared-vector") return OptimizeMode::shared_vector;
  throw ConfigError("unknown optimize_mode '" + std::string(s) + "' (expected full-matrix or shared-vector)");
}

struct CompensationConfig {
  double learning_rate = 5e-3;
  int max_steps = 150;
  double stop_threshold = 0.05;
  OptimizeMode optimize_mode = OptimizeMode::full_matrix;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("compensation: learning_rate must be > 0");
    if (max_steps < 1) throw ConfigError("compensation: max_steps must be >= 1");
    if (!(stop_threshold >= 0.0)) throw ConfigError("compensation: stop_threshold must be >= 0");
  }
};

struct CompensationTrace {
  std::vector<double> drift;  // drift before each update, plus the final one
  int steps_taken = 0;
  bool converged = false;
  Tensor x_matrix;  // X_i*, m x N
  Tensor x_a;       // f(V(f, G, X_i*)), unit norm

  double initial_drift() const { return drift.front(); }
  double final_drift() const { return drift.back(); }
};

/// d(x_target, x_measured): cosine distance between the vocoder's input embedding and the re-extracted one.
inline double drift_of(const Tensor& x_target, const Tensor& x_measured) {
  return cosine_distance(x_target, x_measured);
}

/// x_a = f(V(f, G, X)).
inline Tensor reextract(const ModelBundle& models, const Tensor& f0, const Tensor& features, const Tensor& xmat) {
  return extract(models.extractor, synthesize(models.vocoder, f0, features, xmat));
}

/**
 * Minimises d(f(V(f, G, X)), x_p) over X with Adam, the networks frozen.
 * The stop test runs after every forward pass and before the update it would
 * trigger, so an initialisation that already satisfies it costs no updates.
 */
inline CompensationTrace compensate(const Tensor& f0, const Tensor& features, const Tensor& x_init,
                                    const Tensor& x_p, const ModelBundle& models, const CompensationConfig& cfg) {
  cfg.validate();
  if (x_p.cols() != 1 || x_p.rows() != x_init.rows()) {
    throw ShapeError("compensate: x_p must be an m-vector matching X, got " + x_p.shape() + " vs " + x_init.shape());
  }
  const std::size_t frames = x_init.cols();
  const bool shared = cfg.optimize_mode == OptimizeMode::shared_vector;

  // Shared mode optimises one column (the frame mean of X_init) and repeats it.
  Tensor params = shared ? kernels::mean_over_frames(x_init) : x_init;
  AdamState state(params, AdamHyper{cfg.learning_rate});
  CompensationTrace trace;

  for (int step = 0;; ++step) {
    Tape tape;
    Var p = tape.leaf(params);
    Var xmat = shared ? ad::repeat_columns(p, frames) : p;
    Var signal = synthesize(tape, models.vocoder, tape.constant(f0), tape.constant(features), xmat);
    Var x_a = extract(tape, models.extractor, signal);
    Var loss = ad::cosine_distance(x_a, tape.constant(x_p));
    const double d = loss.value()[0];
    if (!std::isfinite(d)) throw NumericalError("compensation loss is not finite", step);
    trace.drift.push_back(d);

    const bool done = d < cfg.stop_threshold;
    if (done || step == cfg.max_steps) {
      trace.steps_taken = step;
      trace.converged = done;
      trace.x_matrix = xmat.value();
      trace.x_a = x_a.value();
      return trace;
    }
    const Gradients g = tape.backward(loss);
    adam_step(params, g[p], state);
  }
}

}  // namespace driftlab
