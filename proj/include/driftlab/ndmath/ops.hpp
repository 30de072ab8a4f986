#pragma once

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "driftlab/ndmath/tape.hpp"

// Recorded (differentiable) operations. The primitive set is matmul, add, sub,
// scale, mul, div, tanh, concat_rows, mean_over_frames, dot and norm; everything
// else in the library is composed from these.
//
// Gradient rules read operand values back through the tape by node id: node
// storage can reallocate while the graph is being built.

namespace driftlab::ad {

namespace detail {

inline Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw std::invalid_argument("operation on an unbound Var");
  return *a.tape();
}

inline Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return tape_of(a);
}

inline void accumulate(Tensor* into, const Tensor& g) {
  if (into == nullptr) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*into)[i] += g[i];
}

inline void accumulate_scaled(Tensor* into, const Tensor& g, double k) {
  if (into == nullptr) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*into)[i] += k * g[i];
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(kernels::matmul(a.value(), b.value()), {ia, ib},
                  [&t, ia, ib](const Tensor& g, std::span<Tensor* const> gin) {
                    if (gin[0]) detail::accumulate(gin[0], kernels::matmul_nt(g, t.value_at(ib)));
                    if (gin[1]) detail::accumulate(gin[1], kernels::matmul_tn(t.value_at(ia), g));
                  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.record(kernels::add(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g, std::span<Tensor* const> gin) {
                    detail::accumulate(gin[0], g);
                    detail::accumulate(gin[1], g);
                  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  return t.record(kernels::sub(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g, std::span<Tensor* const> gin) {
                    detail::accumulate(gin[0], g);
                    detail::accumulate_scaled(gin[1], g, -1.0);
                  });
}

inline Var scale(Var a, double k) {
  Tape& t = detail::tape_of(a);
  return t.record(kernels::scale(a.value(), k), {a.id()},
                  [k](const Tensor& g, std::span<Tensor* const> gin) {
                    detail::accumulate_scaled(gin[0], g, k);
                  });
}

/// Elementwise product; either operand may be a 1x1 scalar that broadcasts.
inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_s = av.is_scalar() && !bv.is_scalar();
  const bool b_s = bv.is_scalar() && !av.is_scalar();
  if (!a_s && !b_s) require_same_shape(av, bv, "mul");
  Tensor out = a_s ? bv : av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (a_s ? av[0] : av[i]) * (b_s ? bv[0] : bv[i]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib},
                  [&t, ia, ib, a_s, b_s](const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& x = t.value_at(ia);
                    const Tensor& y = t.value_at(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (gin[0]) (*gin[0])[a_s ? 0 : i] += g[i] * (b_s ? y[0] : y[i]);
                      if (gin[1]) (*gin[1])[b_s ? 0 : i] += g[i] * (a_s ? x[0] : x[i]);
                    }
                  });
}

/// Elementwise quotient a / b; b may be a 1x1 scalar that broadcasts.
inline Var div(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool b_s = bv.is_scalar();
  if (!b_s) require_same_shape(av, bv, "div");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = b_s ? bv[0] : bv[i];
    if (d == 0.0) throw DomainError("div: division by zero");
    out[i] = av[i] / d;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib},
                  [&t, ia, ib, b_s](const Tensor& g, std::span<Tensor* const> gin) {
                    const Tensor& x = t.value_at(ia);
                    const Tensor& y = t.value_at(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const double yi = b_s ? y[0] : y[i];
                      if (gin[0]) (*gin[0])[i] += g[i] / yi;
                      if (gin[1]) (*gin[1])[b_s ? 0 : i] -= g[i] * x[i] / (yi * yi);
                    }
                  });
}

inline Var tanh(Var a) {
  Tape& t = detail::tape_of(a);
  const std::size_t self = t.next_id();
  return t.record(kernels::tanh(a.value()), {a.id()},
                  [&t, self](const Tensor& g, std::span<Tensor* const> gin) {
                    if (!gin[0]) return;
                    const Tensor& y = t.value_at(self);
                    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (1.0 - y[i] * y[i]);
                  });
}

/// Vertical stack of blocks sharing one frame count, e.g. f (1xN), G (cxN), X (mxN).
inline Var concat_rows(std::initializer_list<Var> blocks) {
  if (blocks.size() == 0) throw ShapeError("concat_rows: no blocks");
  Tape& t = detail::tape_of(*blocks.begin());
  std::vector<const Tensor*> values;
  std::vector<std::size_t> ids;
  for (Var b : blocks) {
    if (b.tape() != &t) throw std::invalid_argument("operands recorded on different tapes");
    values.push_back(&b.value());
    ids.push_back(b.id());
  }
  Tensor out = kernels::concat_rows(values);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor* v : values) {
    offsets.push_back(off);
    off += v->size();
  }
  return t.record(std::move(out), std::move(ids),
                  [offsets](const Tensor& g, std::span<Tensor* const> gin) {
                    for (std::size_t k = 0; k < gin.size(); ++k) {
                      if (!gin[k]) continue;
                      Tensor& dst = *gin[k];
                      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
                    }
                  });
}

/// Per-row mean over frames: (r x N) -> (r x 1).
inline Var mean_over_frames(Var a) {
  Tape& t = detail::tape_of(a);
  const std::size_t n = a.value().cols();
  return t.record(kernels::mean_over_frames(a.value()), {a.id()},
                  [n](const Tensor& g, std::span<Tensor* const> gin) {
                    if (!gin[0]) return;
                    Tensor& dst = *gin[0];
                    const double w = 1.0 / static_cast<double>(n);
                    for (std::size_t r = 0; r < dst.rows(); ++r)
                      for (std::size_t j = 0; j < n; ++j) dst(r, j) += g[r] * w;
                  });
}

/// Frobenius inner product -> 1x1.
inline Var dot(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Tensor::scalar(kernels::dot(a.value(), b.value())), {ia, ib},
                  [&t, ia, ib](const Tensor& g, std::span<Tensor* const> gin) {
                    detail::accumulate_scaled(gin[0], t.value_at(ib), g[0]);
                    detail::accumulate_scaled(gin[1], t.value_at(ia), g[0]);
                  });
}

/// Euclidean (Frobenius) norm -> 1x1. Gradient at the origin is taken as zero.
inline Var norm(Var a) {
  Tape& t = detail::tape_of(a);
  const std::size_t ia = a.id();
  const double n = kernels::norm(a.value());
  return t.record(Tensor::scalar(n), {ia},
                  [&t, ia, n](const Tensor& g, std::span<Tensor* const> gin) {
                    if (n == 0.0) return;
                    detail::accumulate_scaled(gin[0], t.value_at(ia), g[0] / n);
                  });
}

// ---- composed helpers ----------------------------------------------------

/// Every column set to x (m x 1): x * 1^T.
inline Var repeat_columns(Var x, std::size_t frames) {
  if (x.value().cols() != 1) throw ShapeError("repeat_columns: expected column vector, got " + x.value().shape());
  if (frames < 1) throw ShapeError("repeat_columns: frame count must be >= 1");
  return matmul(x, x.tape()->constant(Tensor(1, frames, 1.0)));
}

/// a + b * 1^T for a column bias b.
inline Var add_bias(Var a, Var bias) {
  if (bias.value().cols() != 1 || bias.value().rows() != a.value().rows()) {
    throw ShapeError("add_bias: shape mismatch " + a.value().shape() + " vs " + bias.value().shape());
  }
  return add(a, repeat_columns(bias, a.value().cols()));
}

inline Var normalize(Var a) { return div(a, norm(a)); }

/// 1 - <a,b> / (|a||b|).
inline Var cosine_distance(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  if (a.value().size() != b.value().size() || a.value().size() == 0) {
    throw ShapeError("cosine_distance: shape mismatch " + a.value().shape() + " vs " + b.value().shape());
  }
  Var na = norm(a);
  Var nb = norm(b);
  if (!(na.value()[0] > 0.0)) throw DomainError("cosine_distance: first argument has zero norm");
  if (!(nb.value()[0] > 0.0)) throw DomainError("cosine_distance: second argument has zero norm");
  Var cosine = div(dot(a, b), mul(na, nb));
  return sub(t.constant(Tensor::scalar(1.0)), cosine);
}

/// Mean of squared entries of (a - b).
inline Var mean_squared_error(Var a, Var b) {
  Var d = sub(a, b);
  return scale(dot(d, d), 1.0 / static_cast<double>(d.value().size()));
}

}  // namespace driftlab::ad
