#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <exception>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/anon.hpp"
#include "driftlab/compensate.hpp"
#include "driftlab/eval.hpp"
#include "driftlab/models.hpp"
#include "driftlab/world.hpp"
#include "driftlab/world_io.hpp"

namespace driftlab {

struct EvalConfig {
  EnrollMode enroll_mode = EnrollMode::matched;
  std::size_t max_trials = 2000;
  std::uint64_t trial_seed = 7;
  double condition_lambda = 1.0;  // the sweep point whose x_a / x_a* enter the EER table
};

struct ExperimentConfig {
  WorldConfig world;
  TrainConfig vocoder_training;
  TrainConfig extractor_training;
  AnonConfig anon;
  CompensationConfig compensation;
  std::vector<double> lambdas{0.0, 1.0 / 3.0, 0.5, 1.0};
  EvalConfig evaluation;

  void validate() const {
    world.validate();
    for (const TrainConfig* t : {&vocoder_training, &extractor_training}) {
      if (t->steps < 0) throw ConfigError("training: steps must be >= 0");
      if (!(t->learning_rate > 0.0)) throw ConfigError("training: learning_rate must be > 0");
      if (t->hidden < 1) throw ConfigError("training: hidden must be >= 1");
    }
    anon.validate(static_cast<std::size_t>(world.pool_speakers));
    compensation.validate();
    if (lambdas.empty()) throw ConfigError("lambdas: need at least one value");
    for (double l : lambdas)
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambdas: every value must lie in [0, 1]");
    if (std::find(lambdas.begin(), lambdas.end(), evaluation.condition_lambda) == lambdas.end()) {
      throw ConfigError("evaluation.condition_lambda must be one of the swept lambdas");
    }
  }

  /// Points every seed at `seed`.
  void reseed(std::uint64_t seed) {
    world.master_seed = seed;
    vocoder_training.seed = seed;
    extractor_training.seed = seed;
    anon.rng_seed = seed;
    evaluation.trial_seed = seed;
  }
};

// ---- config serialisation ------------------------------------------------

namespace experiment_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }) == known.end()) {
      throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
    }
  }
}

template <class T>
void get(const nlohmann::json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + where + "." + key + "': " + e.what());
  }
}

inline nlohmann::json train_json(const TrainConfig& t) {
  return {{"steps", t.steps}, {"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
          {"hidden", t.hidden}, {"seed", t.seed}};
}

inline void train_from(const nlohmann::json& j, TrainConfig& t, const std::string& where) {
  reject_unknown(j, {"steps", "learning_rate", "batch_size", "hidden", "seed"}, where);
  get(j, "steps", t.steps, where);
  get(j, "learning_rate", t.learning_rate, where);
  get(j, "batch_size", t.batch_size, where);
  get(j, "hidden", t.hidden, where);
  get(j, "seed", t.seed, where);
}

}  // namespace experiment_detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using namespace experiment_detail;
  return {
      {"world", to_json(c.world)},
      {"training", {{"vocoder", train_json(c.vocoder_training)}, {"extractor", train_json(c.extractor_training)}}},
      {"anon", {{"K", c.anon.K}, {"K_star", c.anon.K_star}, {"rng_seed", c.anon.rng_seed}}},
      {"compensation",
       {{"learning_rate", c.compensation.learning_rate},
        {"max_steps", c.compensation.max_steps},
        {"stop_threshold", c.compensation.stop_threshold},
        {"optimize_mode", std::string(to_string(c.compensation.optimize_mode))}}},
      {"lambdas", c.lambdas},
      {"evaluation",
       {{"enroll_mode", std::string(to_string(c.evaluation.enroll_mode))},
        {"max_trials", c.evaluation.max_trials},
        {"trial_seed", c.evaluation.trial_seed},
        {"condition_lambda", c.evaluation.condition_lambda}}},
  };
}

/// Missing keys keep their defaults.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using namespace experiment_detail;
  ExperimentConfig c;
  reject_unknown(j, {"world", "training", "anon", "compensation", "lambdas", "evaluation"}, "config");
  try {
    if (j.contains("world")) from_json(j.at("world"), c.world);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("world config: ") + e.what());
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    reject_unknown(t, {"vocoder", "extractor"}, "training");
    if (t.contains("vocoder")) train_from(t.at("vocoder"), c.vocoder_training, "training.vocoder");
    if (t.contains("extractor")) train_from(t.at("extractor"), c.extractor_training, "training.extractor");
  }
  if (j.contains("anon")) {
    const auto& a = j.at("anon");
    reject_unknown(a, {"K", "K_star", "rng_seed"}, "anon");
    get(a, "K", c.anon.K, "anon");
    get(a, "K_star", c.anon.K_star, "anon");
    get(a, "rng_seed", c.anon.rng_seed, "anon");
  }
  if (j.contains("compensation")) {
    const auto& a = j.at("compensation");
    reject_unknown(a, {"learning_rate", "max_steps", "stop_threshold", "optimize_mode"}, "compensation");
    get(a, "learning_rate", c.compensation.learning_rate, "compensation");
    get(a, "max_steps", c.compensation.max_steps, "compensation");
    get(a, "stop_threshold", c.compensation.stop_threshold, "compensation");
    std::string mode(to_string(c.compensation.optimize_mode));
    get(a, "optimize_mode", mode, "compensation");
    c.compensation.optimize_mode = optimize_mode_from_string(mode);
  }
  get(j, "lambdas", c.lambdas, "config");
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    reject_unknown(e, {"enroll_mode", "max_trials", "trial_seed", "condition_lambda"}, "evaluation");
    std::string mode(to_string(c.evaluation.enroll_mode));
    get(e, "enroll_mode", mode, "evaluation");
    c.evaluation.enroll_mode = enroll_mode_from_string(mode);
    get(e, "max_trials", c.evaluation.max_trials, "evaluation");
    get(e, "trial_seed", c.evaluation.trial_seed, "evaluation");
    get(e, "condition_lambda", c.evaluation.condition_lambda, "evaluation");
  }
  c.validate();
  return c;
}

/**
 * Applies one `key=value` override, e.g. `world.leakage=0` or `lambdas=[0,1]`.
 * The value is read as JSON when it parses, otherwise as a string.
 */
inline ExperimentConfig apply_override(const ExperimentConfig& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json j = to_json(base);
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
  return experiment_from_json(j);
}

// ---- the sweep -------------------------------------------------------------

struct UtteranceRun {
  UtteranceKey key;
  Partition partition = Partition::enroll;
  double lambda = 0.0;
  PseudoSpeaker pseudo;
  double target = 0.0;       // d(x_o, x_i)
  double x_i_norm = 0.0;     // |x_i|, below 1 once lambda > 0
  Tensor x_a;                // f(V(f, G, X_i))
  double drift = 0.0;        // d(x_i, x_a)
  bool compensated = false;
  CompensationTrace trace;   // set when compensated
};

enum ExperimentTag : std::uint64_t { kAnonDraw = 21 };

/// Per-utterance anonymisation: each utterance draws its own subset, the same for every lambda.
inline PseudoSpeaker pseudo_for(const Utterance& u, const std::vector<Tensor>& pool, const AnonConfig& cfg) {
  AnonConfig local = cfg;
  local.rng_seed = derive_seed(cfg.rng_seed, {kAnonDraw, static_cast<std::uint64_t>(u.speaker_id),
                                              static_cast<std::uint64_t>(u.utterance_id)});
  return anonymise(u.xvector, pool, local);
}

inline UtteranceRun run_utterance(const Utterance& u, const std::vector<Tensor>& pool, const ModelBundle& models,
                                  const ExperimentConfig& cfg, double lambda, bool with_compensation) {
  UtteranceRun r;
  r.key = {u.speaker_id, u.utterance_id};
  r.partition = u.partition;
  r.lambda = lambda;
  r.pseudo = pseudo_for(u, pool, cfg.anon);
  const Tensor x_i = interpolate(u.xvector, r.pseudo.x_p, lambda);
  r.target = target_distance(u.xvector, x_i);
  r.x_i_norm = kernels::norm(x_i);
  const Tensor x_init = duplicate_frames(x_i, u.f0.cols());
  r.x_a = reextract(models, u.f0, u.features, x_init);
  r.drift = drift_of(x_i, r.x_a);
  if (with_compensation) {
    r.compensated = true;
    r.trace = compensate(u.f0, u.features, x_init, kernels::normalized(x_i, "x_i"), models, cfg.compensation);
  }
  return r;
}

/// Runs `work(i)` for i in [0, n) on `jobs` threads. Results must go to per-index slots.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& work) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::vector<std::jthread> threads;
  for (std::size_t t = 0; t < jobs; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  threads.clear();
  if (error) std::rethrow_exception(error);
}

/// Progress hook: (first index, one past last, runs so far).
using BatchLogger = std::function<void(std::size_t, std::size_t, const std::vector<UtteranceRun>&)>;

/// One lambda over every eval utterance, in dataset order.
inline std::vector<UtteranceRun> run_lambda(const Dataset& ds, const std::vector<Tensor>& pool,
                                            const ModelBundle& models, const ExperimentConfig& cfg, double lambda,
                                            bool with_compensation, std::size_t jobs = 1,
                                            const BatchLogger& log = {}, std::size_t batch = 20) {
  if (models.world_fingerprint != ds.fingerprint) {
    throw ProvenanceError("models were trained on a different world; rerun `train`");
  }
  const auto utts = ds.evaluation();
  std::vector<UtteranceRun> out(utts.size());
  for (std::size_t first = 0; first < utts.size(); first += batch) {
    const std::size_t last = std::min(utts.size(), first + batch);
    parallel_for(last - first, jobs, [&](std::size_t i) {
      out[first + i] = run_utterance(*utts[first + i], pool, models, cfg, lambda, with_compensation);
    });
    if (log) log(first, last, out);
  }
  return out;
}

// ---- summaries -------------------------------------------------------------

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("pearson: need two equally long series");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

/// Least-squares slope of y against x.
inline double slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("slope: need two equally long series");
  const double mx = mean_of(x), my = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw DomainError("slope: x has no spread");
  return sxy / sxx;
}

struct LambdaSummary {
  double lambda = 0.0;
  std::size_t count = 0;
  double target = 0.0;
  double drift = 0.0;
  double drift_compensated = std::nan("");
  double converged_fraction = std::nan("");
  double below_008_fraction = std::nan("");
};

struct EerRow {
  Condition condition;
  EnrollMode enroll_mode;
  double eer = 0.0;
};

struct Summary {
  std::vector<LambdaSummary> per_lambda;
  double pearson_target_drift = std::nan("");  // pooled over lambda > 0
  double drift_slope = std::nan("");           // mean drift against lambda
  std::vector<EerRow> eer;
  std::map<Condition, double> dispersion;
  std::map<Condition, double> projected_spread;  // mean within-speaker variance in the 2-D projection
};

/// Embedding sets for the four conditions, taken from the runs at `lambda`.
inline std::map<Condition, EmbeddingMap> condition_embeddings(const Dataset& ds,
                                                              const std::vector<UtteranceRun>& runs) {
  std::map<Condition, EmbeddingMap> sets;
  for (const Utterance* u : ds.evaluation()) sets[Condition::original][{u->speaker_id, u->utterance_id}] = u->xvector;
  for (const UtteranceRun& r : runs) {
    sets[Condition::pseudo][r.key] = r.pseudo.x_p;
    sets[Condition::anonymised][r.key] = r.x_a;
    if (r.compensated) sets[Condition::compensated][r.key] = r.trace.x_a;
  }
  return sets;
}

inline double mean_projected_spread(const EmbeddingMap& emb, const Projection& p, std::size_t offset) {
  std::map<int, std::vector<std::array<double, 2>>> by_speaker;
  std::size_t i = offset;
  for (const auto& [k, x] : emb) by_speaker[k.speaker_id].push_back(p.coords[i++]);
  double total = 0.0;
  for (const auto& [id, pts] : by_speaker) {
    std::array<double, 2> mean{};
    for (const auto& q : pts)
      for (int a = 0; a < 2; ++a) mean[a] += q[a] / static_cast<double>(pts.size());
    double var = 0.0;
    for (const auto& q : pts)
      for (int a = 0; a < 2; ++a) var += (q[a] - mean[a]) * (q[a] - mean[a]);
    total += var / static_cast<double>(pts.size());
  }
  return total / static_cast<double>(by_speaker.size());
}

/// Pools every condition present into one PCA; rows follow kConditions order, then utterance order.
inline Projection project_conditions(const std::map<Condition, EmbeddingMap>& sets) {
  std::vector<Tensor> points;
  for (Condition c : kConditions) {
    auto it = sets.find(c);
    if (it == sets.end()) continue;
    for (const auto& [k, x] : it->second) points.push_back(x);
  }
  return pca_project(points);
}

inline Summary summarize(const Dataset& ds, const ExperimentConfig& cfg,
                         const std::map<double, std::vector<UtteranceRun>>& runs) {
  Summary s;
  std::vector<double> pooled_target, pooled_drift, lam, mean_drift;
  for (const auto& [lambda, rs] : runs) {
    LambdaSummary ls;
    ls.lambda = lambda;
    ls.count = rs.size();
    std::vector<double> t, d, dc;
    std::size_t conv = 0, below = 0;
    for (const UtteranceRun& r : rs) {
      t.push_back(r.target);
      d.push_back(r.drift);
      if (r.compensated) {
        dc.push_back(r.trace.final_drift());
        conv += r.trace.converged ? 1 : 0;
        below += r.trace.final_drift() < 0.08 ? 1 : 0;
      }
      if (lambda > 0.0) {
        pooled_target.push_back(r.target);
        pooled_drift.push_back(r.drift);
      }
    }
    ls.target = mean_of(t);
    ls.drift = mean_of(d);
    if (!dc.empty()) {
      ls.drift_compensated = mean_of(dc);
      ls.converged_fraction = static_cast<double>(conv) / static_cast<double>(dc.size());
      ls.below_008_fraction = static_cast<double>(below) / static_cast<double>(dc.size());
    }
    lam.push_back(lambda);
    mean_drift.push_back(ls.drift);
    s.per_lambda.push_back(ls);
  }
  if (pooled_target.size() >= 2) s.pearson_target_drift = pearson(pooled_target, pooled_drift);
  if (lam.size() >= 2) s.drift_slope = slope(lam, mean_drift);

  auto it = runs.find(cfg.evaluation.condition_lambda);
  if (it == runs.end()) return s;
  const auto sets = condition_embeddings(ds, it->second);
  const TrialList trials = build_trials(ds, cfg.evaluation.max_trials, cfg.evaluation.trial_seed);
  for (EnrollMode mode : {cfg.evaluation.enroll_mode,
                          cfg.evaluation.enroll_mode == EnrollMode::matched ? EnrollMode::original
                                                                            : EnrollMode::matched}) {
    for (Condition c : kConditions) {
      auto found = sets.find(c);
      if (found == sets.end()) continue;
      s.eer.push_back({c, mode, condition_eer(ds, trials, sets.at(Condition::original), found->second, mode)});
    }
  }
  for (const auto& [c, emb] : sets) s.dispersion[c] = dispersion(emb);
  const Projection p = project_conditions(sets);
  std::size_t offset = 0;
  for (Condition c : kConditions) {
    auto found = sets.find(c);
    if (found == sets.end()) continue;
    s.projected_spread[c] = mean_projected_spread(found->second, p, offset);
    offset += found->second.size();
  }
  return s;
}

}  // namespace driftlab
