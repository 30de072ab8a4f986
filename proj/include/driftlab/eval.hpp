#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/ndmath/tensor.hpp"
#include "driftlab/rng.hpp"
#include "driftlab/world.hpp"

namespace driftlab {

/// d(x_o, x_i). Cosine distance ignores scale, so an off-sphere x_i needs no renormalisation.
inline double target_distance(const Tensor& x_o, const Tensor& x_i) { return cosine_distance(x_o, x_i); }

/**
 * Equal error rate with scores where higher means "same speaker".
 *
 * Thresholds are the distinct scores. At threshold t, FRR = fraction of genuine
 * scores below t and FAR = fraction of impostor scores at or above t, so
 * FAR - FRR never increases with t. If it hits zero at a threshold the EER is
 * the common value there. If it changes sign between adjacent thresholds both
 * curves are interpolated linearly to the crossing. Otherwise the EER is
 * (FAR + FRR) / 2 at the threshold where |FAR - FRR| is smallest.
 */
inline double compute_eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw DomainError("compute_eer: need genuine and impostor scores");
  std::vector<double> g(genuine.begin(), genuine.end());
  std::vector<double> im(impostor.begin(), impostor.end());
  for (double s : g)
    if (!std::isfinite(s)) throw DomainError("compute_eer: non-finite genuine score");
  for (double s : im)
    if (!std::isfinite(s)) throw DomainError("compute_eer: non-finite impostor score");
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());

  std::vector<double> thresholds;
  thresholds.reserve(g.size() + im.size());
  std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double ng = static_cast<double>(g.size());
  const double ni = static_cast<double>(im.size());
  std::vector<double> frr(thresholds.size()), far(thresholds.size());
  std::size_t below_g = 0, below_i = 0;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double t = thresholds[k];
    while (below_g < g.size() && g[below_g] < t) ++below_g;
    while (below_i < im.size() && im[below_i] < t) ++below_i;
    frr[k] = static_cast<double>(below_g) / ng;
    far[k] = static_cast<double>(im.size() - below_i) / ni;
  }

  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double d = far[k] - frr[k];
    if (d == 0.0) return frr[k];
    if (k + 1 < thresholds.size()) {
      const double d_next = far[k + 1] - frr[k + 1];
      if (d > 0.0 && d_next < 0.0) {
        const double alpha = d / (d - d_next);
        return frr[k] + alpha * (frr[k + 1] - frr[k]);
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < thresholds.size(); ++k) {
    if (std::abs(far[k] - frr[k]) < std::abs(far[best] - frr[best])) best = k;
  }
  return 0.5 * (far[best] + frr[best]);
}

// ---- trials ------------------------------------------------------------------

struct Trial {
  int enroll_speaker = 0;
  UtteranceKey utterance;
  bool genuine = false;
};

struct TrialList {
  std::vector<Trial> trials;

  std::size_t genuine_count() const {
    return static_cast<std::size_t>(std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.genuine; }));
  }
};

/**
 * Every eval speaker against every trial utterance: its own are genuine, the
 * rest impostors. Above `max_trials`, all genuine trials are kept and the
 * impostors are subsampled without replacement; the list stays in canonical
 * (speaker, utterance, enrolment speaker) order.
 */
inline TrialList build_trials(const Dataset& ds, std::size_t max_trials, std::uint64_t seed) {
  std::vector<int> speakers;
  for (const Speaker& s : ds.speakers)
    if (s.group == SpeakerGroup::eval) speakers.push_back(s.id);
  const auto trial_utts = ds.in(Partition::trial);
  if (speakers.size() < 2 || trial_utts.empty()) throw ConfigError("build_trials: need two eval speakers with trials");

  TrialList all;
  for (const Utterance* u : trial_utts) {
    for (int s : speakers) all.trials.push_back({s, {u->speaker_id, u->utterance_id}, s == u->speaker_id});
  }
  if (all.trials.size() <= max_trials) return all;

  const std::size_t genuine = all.genuine_count();
  if (genuine >= max_trials) throw ConfigError("build_trials: max_trials leaves no room for impostor trials");
  std::vector<std::size_t> impostors;
  for (std::size_t i = 0; i < all.trials.size(); ++i)
    if (!all.trials[i].genuine) impostors.push_back(i);
  const std::size_t keep = max_trials - genuine;
  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(impostors.size() - i));
    std::swap(impostors[i], impostors[j]);
  }
  std::vector<bool> chosen(all.trials.size(), false);
  for (std::size_t i = 0; i < keep; ++i) chosen[impostors[i]] = true;
  TrialList out;
  for (std::size_t i = 0; i < all.trials.size(); ++i)
    if (all.trials[i].genuine || chosen[i]) out.trials.push_back(all.trials[i]);
  return out;
}

using EmbeddingMap = std::map<UtteranceKey, Tensor>;

enum class Condition { original, pseudo, anonymised, compensated };

inline constexpr Condition kConditions[] = {Condition::original, Condition::pseudo, Condition::anonymised,
                                            Condition::compensated};

inline std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::original: return "original";
    case Condition::pseudo: return "pseudo";
    case Condition::anonymised: return "anonymised";
    case Condition::compensated: return "compensated";
  }
  return "?";
}

/// Which embeddings the attacker enrols with.
enum class EnrollMode { matched, original };

inline std::string_view to_string(EnrollMode m) { return m == EnrollMode::matched ? "matched" : "original"; }

inline EnrollMode enroll_mode_from_string(std::string_view s) {
  if (s == "matched") return EnrollMode::matched;
  if (s == "original") return EnrollMode::original;
  throw ConfigError("unknown enroll_mode '" + std::string(s) + "' (expected matched or original)");
}

inline const Tensor& lookup(const EmbeddingMap& emb, UtteranceKey k, std::string_view what) {
  auto it = emb.find(k);
  if (it == emb.end()) {
    throw std::out_of_range(std::string(what) + ": no embedding for utterance (" + std::to_string(k.speaker_id) +
                            ", " + std::to_string(k.utterance_id) + ")");
  }
  return it->second;
}

/// Renormalised mean of each eval speaker's enrolment embeddings.
inline std::map<int, Tensor> enrollment_centroids(const Dataset& ds, const EmbeddingMap& emb) {
  std::map<int, Tensor> sums;
  for (const Utterance* u : ds.in(Partition::enroll)) {
    const Tensor& x = lookup(emb, {u->speaker_id, u->utterance_id}, "enrolment");
    auto [it, fresh] = sums.try_emplace(u->speaker_id, x);
    if (!fresh) it->second = kernels::add(it->second, x);
  }
  for (auto& [id, v] : sums) v = kernels::normalized(v, "enrolment centroid");
  return sums;
}

struct Scores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

inline Scores score_trials(const TrialList& trials, const std::map<int, Tensor>& centroids,
                           const EmbeddingMap& trial_embeddings) {
  Scores s;
  for (const Trial& t : trials.trials) {
    auto c = centroids.find(t.enroll_speaker);
    if (c == centroids.end()) {
      throw std::out_of_range("score_trials: no enrolment for speaker " + std::to_string(t.enroll_speaker));
    }
    const double score = cosine_similarity(c->second, lookup(trial_embeddings, t.utterance, "trial"));
    (t.genuine ? s.genuine : s.impostor).push_back(score);
  }
  return s;
}

inline double condition_eer(const Dataset& ds, const TrialList& trials, const EmbeddingMap& original,
                            const EmbeddingMap& condition, EnrollMode mode) {
  const auto centroids = enrollment_centroids(ds, mode == EnrollMode::matched ? condition : original);
  const Scores s = score_trials(trials, centroids, condition);
  return compute_eer(s.genuine, s.impostor);
}

/// Mean cosine distance from each embedding to its speaker's renormalised centroid.
inline double dispersion(const EmbeddingMap& emb) {
  if (emb.empty()) throw DomainError("dispersion: no embeddings");
  std::map<int, Tensor> sums;
  for (const auto& [k, x] : emb) {
    auto [it, fresh] = sums.try_emplace(k.speaker_id, x);
    if (!fresh) it->second = kernels::add(it->second, x);
  }
  for (auto& [id, v] : sums) v = kernels::normalized(v, "speaker centroid");
  double total = 0.0;
  for (const auto& [k, x] : emb) total += cosine_distance(x, sums.at(k.speaker_id));
  return total / static_cast<double>(emb.size());
}

// ---- projection --------------------------------------------------------------

struct Projection {
  std::vector<std::array<double, 2>> coords;  // one per input row, same order
  std::array<double, 2> variance{};           // eigenvalues of the two kept axes
  std::vector<Tensor> axes;                   // 2 unit m-vectors
  bool degenerate = false;                    // fewer than two axes carry variance
};

/// Flips v so that its first nonzero entry is positive.
inline void canonical_sign(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) {
      if (v[i] < 0.0) v = -v;
      return;
    }
  }
}

/// Top-2 principal component coordinates of the rows of `points` (each an m-vector).
inline Projection pca_project(const std::vector<Tensor>& points) {
  if (points.size() < 3) throw DomainError("pca_project: need at least 3 embeddings");
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto m = static_cast<Eigen::Index>(points.front().size());
  if (m < 2) throw ShapeError("pca_project: embeddings must have at least 2 dimensions");
  Eigen::MatrixXd data(n, m);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Tensor& p = points[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(p.size()) != m) throw ShapeError("pca_project: embeddings differ in size");
    for (Eigen::Index c = 0; c < m; ++c) data(r, c) = p[static_cast<std::size_t>(c)];
  }
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;
  const Eigen::MatrixXd cov = (data.transpose() * data) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("pca_project: eigen-decomposition failed", 0);

  Projection out;
  const double scale = std::max(1.0, solver.eigenvalues().cwiseAbs().maxCoeff());
  for (int k = 0; k < 2; ++k) {
    // Eigen sorts eigenvalues ascending.
    Eigen::VectorXd v = solver.eigenvectors().col(m - 1 - k);
    canonical_sign(v);
    const double lambda = std::max(0.0, solver.eigenvalues()[m - 1 - k]);
    out.variance[static_cast<std::size_t>(k)] = lambda;
    if (lambda <= 1e-12 * scale) {
      out.degenerate = true;
      v.setZero();
    }
    Tensor axis(static_cast<std::size_t>(m), 1);
    for (Eigen::Index c = 0; c < m; ++c) axis[static_cast<std::size_t>(c)] = v[c];
    out.axes.push_back(std::move(axis));
  }
  out.coords.resize(points.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int k = 0; k < 2; ++k) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < m; ++c) s += data(r, c) * out.axes[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
      out.coords[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] = s;
    }
  }
  return out;
}

}  // namespace driftlab
