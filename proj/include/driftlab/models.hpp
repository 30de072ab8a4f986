#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/errors.hpp"
#include "driftlab/io.hpp"
#include "driftlab/ndmath/adam.hpp"
#include "driftlab/ndmath/ops.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/world.hpp"

namespace driftlab {

/// Two-layer framewise perceptron: W2 tanh(W1 u + b1) + b2.
struct Mlp {
  Tensor w1, b1, w2, b2;

  std::size_t input_dim() const { return w1.cols(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  std::size_t output_dim() const { return w2.rows(); }

  std::vector<Tensor*> parameters() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Tensor*> parameters() const { return {&w1, &b1, &w2, &b2}; }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Glorot-uniform weights, zero biases.
inline Mlp init_mlp(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  Rng rng(seed);
  auto glorot = [&rng](std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor w(rows, cols);
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    return w;
  };
  Mlp net;
  net.w1 = glorot(hidden, in);
  net.b1 = Tensor(hidden, 1);
  net.w2 = glorot(out, hidden);
  net.b2 = Tensor(out, 1);
  return net;
}

/// V(f, G, X): (1 + c + m) x N -> d_sig x N.
struct Vocoder {
  Mlp net;
  std::size_t content_dim = 0;
  std::size_t embed_dim = 0;
};

/// f(S): d_sig x N -> unit m-vector; framewise layer, mean pooling, normalisation.
struct Extractor {
  Mlp net;
};

namespace models_detail {

inline Tensor forward(const Mlp& net, const Tensor& input) {
  const Tensor hidden = kernels::tanh(kernels::add_column(kernels::matmul(net.w1, input), net.b1));
  return kernels::add_column(kernels::matmul(net.w2, hidden), net.b2);
}

struct BoundMlp {
  Var w1, b1, w2, b2;
};

inline BoundMlp bind(Tape& tape, const Mlp& net, bool trainable) {
  auto put = [&tape, trainable](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  return {put(net.w1), put(net.b1), put(net.w2), put(net.b2)};
}

inline Var forward(const BoundMlp& p, Var input) {
  Var hidden = ad::tanh(ad::add_bias(ad::matmul(p.w1, input), p.b1));
  return ad::add_bias(ad::matmul(p.w2, hidden), p.b2);
}

inline void check_inputs(const Vocoder& v, const Tensor& f0, const Tensor& features, const Tensor& xmat) {
  if (f0.rows() != 1 || features.rows() != v.content_dim || xmat.rows() != v.embed_dim) {
    throw ShapeError("synthesize: expected f0 1xN, G " + std::to_string(v.content_dim) + "xN, X " +
                     std::to_string(v.embed_dim) + "xN; got " + f0.shape() + ", " + features.shape() + ", " +
                     xmat.shape());
  }
  if (f0.cols() == 0 || features.cols() != f0.cols() || xmat.cols() != f0.cols()) {
    throw ShapeError("synthesize: frame counts differ or are zero (" + f0.shape() + ", " + features.shape() +
                     ", " + xmat.shape() + ")");
  }
}

inline void check_signal(const Extractor& e, const Tensor& signal) {
  if (signal.rows() != e.net.input_dim()) {
    throw ShapeError("extract: expected " + std::to_string(e.net.input_dim()) + " signal rows, got " +
                     signal.shape());
  }
  if (signal.cols() == 0) throw ShapeError("extract: signal has zero frames");
}

}  // namespace models_detail

inline Vocoder make_vocoder(const WorldConfig& w, std::size_t hidden, std::uint64_t seed) {
  const auto c = static_cast<std::size_t>(w.content_dim);
  const auto m = static_cast<std::size_t>(w.embed_dim);
  return Vocoder{init_mlp(1 + c + m, hidden, static_cast<std::size_t>(w.signal_dim), seed), c, m};
}

inline Extractor make_extractor(const WorldConfig& w, std::size_t hidden, std::uint64_t seed) {
  return Extractor{
      init_mlp(static_cast<std::size_t>(w.signal_dim), hidden, static_cast<std::size_t>(w.embed_dim), seed)};
}

inline Tensor synthesize(const Vocoder& v, const Tensor& f0, const Tensor& features, const Tensor& xmat) {
  models_detail::check_inputs(v, f0, features, xmat);
  const Tensor* blocks[] = {&f0, &features, &xmat};
  return models_detail::forward(v.net, kernels::concat_rows(blocks));
}

inline Var synthesize(Tape& tape, const Vocoder& v, Var f0, Var features, Var xmat) {
  models_detail::check_inputs(v, f0.value(), features.value(), xmat.value());
  const auto params = models_detail::bind(tape, v.net, false);
  return models_detail::forward(params, ad::concat_rows({f0, features, xmat}));
}

inline Tensor extract(const Extractor& e, const Tensor& signal) {
  models_detail::check_signal(e, signal);
  const Tensor hidden = kernels::tanh(kernels::add_column(kernels::matmul(e.net.w1, signal), e.net.b1));
  const Tensor pooled = kernels::mean_over_frames(hidden);
  const Tensor out = kernels::add(kernels::matmul(e.net.w2, pooled), e.net.b2);
  return kernels::normalized(out, "extractor output");
}

namespace models_detail {

// The output layer is affine, so pooling the hidden layer first gives the same
// embedding at a fraction of the cost.
inline Var extract(const BoundMlp& p, Var signal) {
  Var hidden = ad::tanh(ad::add_bias(ad::matmul(p.w1, signal), p.b1));
  Var out = ad::add(ad::matmul(p.w2, ad::mean_over_frames(hidden)), p.b2);
  return ad::normalize(out);
}

}  // namespace models_detail

inline Var extract(Tape& tape, const Extractor& e, Var signal) {
  models_detail::check_signal(e, signal.value());
  return models_detail::extract(models_detail::bind(tape, e.net, false), signal);
}

/// SHA-256 over every parameter value, in declaration order.
inline std::string parameter_hash(const Mlp& net) {
  io::Sha256 h;
  for (const Tensor* p : net.parameters()) {
    h.update(static_cast<std::uint64_t>(p->rows()));
    h.update(static_cast<std::uint64_t>(p->cols()));
    h.update(p->values());
  }
  return h.hex();
}

// ---- training --------------------------------------------------------------

struct TrainConfig {
  long steps = 5000;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;  // 0: every training utterance in every step
  std::size_t hidden = 64;
  std::uint64_t seed = 7;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;  // full training-set loss after the last step
  long steps = 0;
};

namespace models_detail {

enum TrainTag : std::uint64_t { kVocoderInit = 11, kExtractorInit = 12, kVocoderOrder = 13, kExtractorOrder = 14 };

/// Epoch-wise shuffled mini-batches: every utterance once per epoch.
class BatchOrder {
 public:
  BatchOrder(std::size_t count, std::size_t batch, std::uint64_t seed)
      : order_(count), batch_(batch == 0 || batch > count ? count : batch), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = count;
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) shuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  Rng rng_;
  std::size_t pos_ = 0;
};

inline std::vector<const Utterance*> training_set(const Dataset& ds) {
  auto train = ds.in(Partition::train);
  if (train.empty()) throw ConfigError("training: the train partition is empty");
  return train;
}

/// Frames of several utterances side by side, with x_o repeated over each utterance.
inline Tensor vocoder_input(const std::vector<const Utterance*>& utts, const std::vector<std::size_t>& pick) {
  const std::size_t c = utts.front()->features.rows();
  const std::size_t m = utts.front()->xvector.rows();
  std::size_t total = 0;
  for (std::size_t i : pick) total += utts[i]->f0.cols();
  Tensor in(1 + c + m, total);
  std::size_t col = 0;
  for (std::size_t i : pick) {
    const Utterance& u = *utts[i];
    for (std::size_t t = 0; t < u.f0.cols(); ++t, ++col) {
      in(0, col) = u.f0[t];
      for (std::size_t r = 0; r < c; ++r) in(1 + r, col) = u.features(r, t);
      for (std::size_t r = 0; r < m; ++r) in(1 + c + r, col) = u.xvector[r];
    }
  }
  return in;
}

inline Tensor signal_target(const std::vector<const Utterance*>& utts, const std::vector<std::size_t>& pick) {
  const std::size_t d = utts.front()->signal.rows();
  std::size_t total = 0;
  for (std::size_t i : pick) total += utts[i]->signal.cols();
  Tensor out(d, total);
  std::size_t col = 0;
  for (std::size_t i : pick) {
    const Tensor& s = utts[i]->signal;
    for (std::size_t t = 0; t < s.cols(); ++t, ++col)
      for (std::size_t r = 0; r < d; ++r) out(r, col) = s(r, t);
  }
  return out;
}

inline void check_finite(double loss, long step, const char* what) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(what) + " training diverged: loss is not finite", step);
}

}  // namespace models_detail

/// Mean squared reconstruction error of the vocoder over the given utterances.
inline double reconstruction_mse(const Vocoder& v, const std::vector<const Utterance*>& utts) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Utterance* u : utts) {
    const Tensor s = synthesize(v, u->f0, u->features, kernels::repeat_columns(u->xvector, u->f0.cols()));
    const Tensor diff = kernels::sub(s, u->signal);
    sum += kernels::dot(diff, diff);
    count += diff.size();
  }
  return sum / static_cast<double>(count);
}

/// Mean over utterances of the squared distance between f(S) and x_o, divided by m.
inline double extractor_mse(const Extractor& e, const std::vector<const Utterance*>& utts) {
  double sum = 0.0;
  for (const Utterance* u : utts) {
    const Tensor diff = kernels::sub(extract(e, u->signal), u->xvector);
    sum += kernels::dot(diff, diff) / static_cast<double>(diff.size());
  }
  return sum / static_cast<double>(utts.size());
}

inline Vocoder train_vocoder(const Dataset& ds, const TrainConfig& cfg, TrainReport* report = nullptr) {
  using namespace models_detail;
  const auto utts = training_set(ds);
  Vocoder v = make_vocoder(ds.config, cfg.hidden, derive_seed(cfg.seed, {kVocoderInit}));
  BatchOrder order(utts.size(), cfg.batch_size, derive_seed(cfg.seed, {kVocoderOrder}));
  std::vector<AdamState> states;
  for (Tensor* p : v.net.parameters()) states.emplace_back(*p, AdamHyper{cfg.learning_rate});

  TrainReport r;
  r.initial_loss = reconstruction_mse(v, utts);
  check_finite(r.initial_loss, 0, "vocoder");
  for (long step = 0; step < cfg.steps; ++step) {
    const auto pick = order.next();
    Tape tape;
    const BoundMlp p = bind(tape, v.net, true);
    Var input = tape.constant(vocoder_input(utts, pick));
    Var target = tape.constant(signal_target(utts, pick));
    Var loss = ad::mean_squared_error(forward(p, input), target);
    check_finite(loss.value()[0], step, "vocoder");
    const Gradients g = tape.backward(loss);
    const Var leaves[] = {p.w1, p.b1, p.w2, p.b2};
    auto params = v.net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) adam_step(*params[k], g[leaves[k]], states[k]);
  }
  r.steps = cfg.steps;
  r.final_loss = reconstruction_mse(v, utts);
  check_finite(r.final_loss, cfg.steps, "vocoder");
  if (report) *report = r;
  return v;
}

inline Extractor train_extractor(const Dataset& ds, const TrainConfig& cfg, TrainReport* report = nullptr) {
  using namespace models_detail;
  const auto utts = training_set(ds);
  Extractor e = make_extractor(ds.config, cfg.hidden, derive_seed(cfg.seed, {kExtractorInit}));
  BatchOrder order(utts.size(), cfg.batch_size, derive_seed(cfg.seed, {kExtractorOrder}));
  std::vector<AdamState> states;
  for (Tensor* p : e.net.parameters()) states.emplace_back(*p, AdamHyper{cfg.learning_rate});

  TrainReport r;
  r.initial_loss = extractor_mse(e, utts);
  check_finite(r.initial_loss, 0, "extractor");
  for (long step = 0; step < cfg.steps; ++step) {
    const auto pick = order.next();
    Tape tape;
    const BoundMlp p = bind(tape, e.net, true);
    Var total;
    for (std::size_t k = 0; k < pick.size(); ++k) {
      const Utterance& u = *utts[pick[k]];
      Var x = extract(p, tape.constant(u.signal));
      Var l = ad::mean_squared_error(x, tape.constant(u.xvector));
      total = k == 0 ? l : ad::add(total, l);
    }
    Var loss = ad::scale(total, 1.0 / static_cast<double>(pick.size()));
    check_finite(loss.value()[0], step, "extractor");
    const Gradients g = tape.backward(loss);
    const Var leaves[] = {p.w1, p.b1, p.w2, p.b2};
    auto params = e.net.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) adam_step(*params[k], g[leaves[k]], states[k]);
  }
  r.steps = cfg.steps;
  r.final_loss = extractor_mse(e, utts);
  check_finite(r.final_loss, cfg.steps, "extractor");
  if (report) *report = r;
  return e;
}

// ---- persistence -----------------------------------------------------------

struct ModelBundle {
  Vocoder vocoder;
  Extractor extractor;
  std::string world_fingerprint;
  TrainConfig vocoder_training;
  TrainConfig extractor_training;
  TrainReport vocoder_report;
  TrainReport extractor_report;

  std::string parameter_hash() const {
    io::Sha256 h;
    h.update(driftlab::parameter_hash(vocoder.net));
    h.update(driftlab::parameter_hash(extractor.net));
    return h.hex();
  }
};

namespace models_detail {

inline nlohmann::json tensor_json(const Tensor& t) {
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.storage()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline nlohmann::json mlp_json(const Mlp& net) {
  return {{"w1", tensor_json(net.w1)}, {"b1", tensor_json(net.b1)}, {"w2", tensor_json(net.w2)},
          {"b2", tensor_json(net.b2)}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  return Mlp{tensor_from_json(j.at("w1")), tensor_from_json(j.at("b1")), tensor_from_json(j.at("w2")),
             tensor_from_json(j.at("b2"))};
}

inline nlohmann::json training_json(const TrainConfig& c, const TrainReport& r) {
  return {{"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"hidden", c.hidden},
          {"seed", c.seed},
          {"init", "glorot-uniform weights, zero biases"},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss}};
}

inline void training_from_json(const nlohmann::json& j, TrainConfig& c, TrainReport& r) {
  c.steps = j.at("steps").get<long>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  r.steps = c.steps;
  r.initial_loss = j.at("initial_loss").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
}

}  // namespace models_detail

/// JSON text; doubles are written in shortest round-trip form, so loading restores them exactly.
inline std::string to_json_text(const ModelBundle& b) {
  using namespace models_detail;
  nlohmann::json j = {
      {"format", "driftlab-models/1"},
      {"world_fingerprint", b.world_fingerprint},
      {"parameter_hash", b.parameter_hash()},
      {"vocoder",
       {{"content_dim", b.vocoder.content_dim},
        {"embed_dim", b.vocoder.embed_dim},
        {"params", mlp_json(b.vocoder.net)},
        {"training", training_json(b.vocoder_training, b.vocoder_report)}}},
      {"extractor",
       {{"params", mlp_json(b.extractor.net)},
        {"training", training_json(b.extractor_training, b.extractor_report)}}},
  };
  return j.dump(1) + "\n";
}

inline ModelBundle bundle_from_json_text(const std::string& text) {
  using namespace models_detail;
  const nlohmann::json j = nlohmann::json::parse(text);
  ModelBundle b;
  b.world_fingerprint = j.at("world_fingerprint").get<std::string>();
  const auto& v = j.at("vocoder");
  b.vocoder.content_dim = v.at("content_dim").get<std::size_t>();
  b.vocoder.embed_dim = v.at("embed_dim").get<std::size_t>();
  b.vocoder.net = mlp_from_json(v.at("params"));
  training_from_json(v.at("training"), b.vocoder_training, b.vocoder_report);
  const auto& e = j.at("extractor");
  b.extractor.net = mlp_from_json(e.at("params"));
  training_from_json(e.at("training"), b.extractor_training, b.extractor_report);
  if (b.parameter_hash() != j.at("parameter_hash").get<std::string>()) {
    throw ProvenanceError("model bundle parameters do not match their recorded hash");
  }
  return b;
}

}  // namespace driftlab
