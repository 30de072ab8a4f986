#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "driftlab/errors.hpp"
#include "driftlab/io.hpp"
#include "driftlab/ndmath/tensor.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

/**
 * Synthetic speech world.
 *
 * Each speaker has a unit identity latent z. Each utterance carries an F0 curve
 * f (1 x N, positive), content features G (c x N), a signal S (d_sig x N) and an
 * x-vector x_o (m x 1, unit norm). Speaker information leaks into G through
 *
 *     G = C + leakage * (W_leak z) 1^T
 *
 * and S is produced by a frozen, seeded two-layer tanh network applied framewise
 * to the stacked (1 + c + m) column [f_t; G_t; x_o].
 */
struct WorldConfig {
  int train_speakers = 40;
  int pool_speakers = 60;
  int eval_speakers = 20;
  int utterances_per_speaker = 10;
  int enroll_per_speaker = 3;    // eval speakers: utterances [0, k) enrol, the rest are trials
  int heldout_per_speaker = 1;   // train speakers: last k utterances never seen by training
  int frames = 50;
  int content_dim = 16;
  int embed_dim = 32;
  int signal_dim = 24;
  double leakage = 0.5;
  double within_speaker_noise = 0.05;
  std::uint64_t master_seed = 7;

  // Shape of the hidden generator.
  int generator_hidden = 64;
  double generator_gain = 1.5;
  double speaker_gain = 3.0;      // extra weight on the x-vector block of the generator input
  double leak_scale = 2.0;        // entry scale of W_leak
  double content_offset = 0.75;   // std of the per-utterance content mean
  double f0_step = 0.05;          // std of the log-F0 random-walk increments
  double f0_speaker_coupling = 0.3;

  int total_speakers() const { return train_speakers + pool_speakers + eval_speakers; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError("world config: " + msg);
    };
    need(frames >= 1 && content_dim >= 1 && embed_dim >= 1 && signal_dim >= 1 && generator_hidden >= 1,
         "all dimensions must be >= 1");
    need(utterances_per_speaker >= 2, "utterances_per_speaker must be >= 2");
    need(train_speakers >= 1, "need at least one train speaker");
    need(pool_speakers >= 1, "need at least one pool speaker");
    need(eval_speakers >= 2, "need at least two eval speakers for impostor trials");
    need(enroll_per_speaker >= 1 && enroll_per_speaker < utterances_per_speaker,
         "enroll_per_speaker must leave at least one trial utterance");
    need(heldout_per_speaker >= 0 && heldout_per_speaker < utterances_per_speaker,
         "heldout_per_speaker must leave at least one training utterance");
    need(leakage >= 0.0, "leakage must be >= 0");
    need(within_speaker_noise >= 0.0, "within_speaker_noise must be >= 0");
    need(generator_gain >= 0.0 && speaker_gain >= 0.0 && leak_scale >= 0.0 && content_offset >= 0.0 &&
             f0_step >= 0.0,
         "generator scales must be >= 0");
  }
};

enum class Partition { train, heldout, pool, enroll, trial };

inline std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::heldout: return "heldout";
    case Partition::pool: return "pool";
    case Partition::enroll: return "enroll";
    case Partition::trial: return "trial";
  }
  return "?";
}

inline Partition partition_from_string(std::string_view s) {
  for (Partition p : {Partition::train, Partition::heldout, Partition::pool, Partition::enroll, Partition::trial}) {
    if (to_string(p) == s) return p;
  }
  throw std::runtime_error("unknown partition '" + std::string(s) + "'");
}

/// Speaker groups. heldout utterances belong to train speakers; enroll/trial to eval speakers.
enum class SpeakerGroup { train, pool, eval };

struct Speaker {
  int id = 0;
  SpeakerGroup group = SpeakerGroup::train;
  Tensor identity;  // m x 1, unit norm
};

struct Utterance {
  int speaker_id = 0;
  int utterance_id = 0;
  Partition partition = Partition::train;
  Tensor f0;        // 1 x N, all > 0
  Tensor features;  // c x N
  Tensor signal;    // d_sig x N
  Tensor xvector;   // m x 1, unit norm
};

struct UtteranceKey {
  int speaker_id = 0;
  int utterance_id = 0;
  friend auto operator<=>(const UtteranceKey&, const UtteranceKey&) = default;
};

struct Dataset {
  WorldConfig config;
  std::vector<Speaker> speakers;
  std::vector<Utterance> utterances;  // speaker-major, utterance-minor order
  std::string fingerprint;

  std::vector<const Utterance*> in(Partition p) const {
    std::vector<const Utterance*> out;
    for (const Utterance& u : utterances)
      if (u.partition == p) out.push_back(&u);
    return out;
  }

  /// enroll + trial utterances.
  std::vector<const Utterance*> evaluation() const {
    std::vector<const Utterance*> out;
    for (const Utterance& u : utterances)
      if (u.partition == Partition::enroll || u.partition == Partition::trial) out.push_back(&u);
    return out;
  }

  const Utterance& at(UtteranceKey k) const {
    const auto per = static_cast<std::size_t>(config.utterances_per_speaker);
    const std::size_t idx = static_cast<std::size_t>(k.speaker_id) * per + static_cast<std::size_t>(k.utterance_id);
    if (k.speaker_id < 0 || k.utterance_id < 0 || idx >= utterances.size() ||
        utterances[idx].speaker_id != k.speaker_id || utterances[idx].utterance_id != k.utterance_id) {
      throw std::out_of_range("no utterance (" + std::to_string(k.speaker_id) + ", " +
                              std::to_string(k.utterance_id) + ")");
    }
    return utterances[idx];
  }
};

namespace world_detail {

enum StreamTag : std::uint64_t { kGenerator = 1, kSpeaker = 2, kUtterance = 3 };

/// The frozen "true" speech generator and the fixed leakage/pitch projections.
struct Generator {
  Tensor w1, b1, w2, b2;  // (h x (1+c+m)), (h x 1), (d x h), (d x 1)
  Tensor leak;            // c x m
  Tensor pitch_axis;      // m x 1, unit norm

  static Generator make(const WorldConfig& cfg) {
    Rng rng(derive_seed(cfg.master_seed, {kGenerator}));
    const auto c = static_cast<std::size_t>(cfg.content_dim);
    const auto m = static_cast<std::size_t>(cfg.embed_dim);
    const auto d = static_cast<std::size_t>(cfg.signal_dim);
    const auto h = static_cast<std::size_t>(cfg.generator_hidden);
    const std::size_t in = 1 + c + m;
    Generator g;
    g.leak = Tensor(c, m);
    for (double& v : g.leak.values()) v = cfg.leak_scale * rng.normal();
    g.pitch_axis = Tensor(m, 1);
    for (double& v : g.pitch_axis.values()) v = rng.normal();
    g.pitch_axis = kernels::normalized(g.pitch_axis, "pitch axis");
    g.w1 = Tensor(h, in);
    const double s1 = cfg.generator_gain / std::sqrt(static_cast<double>(in));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t k = 0; k < in; ++k) g.w1(r, k) = s1 * rng.normal() * (k >= 1 + c ? cfg.speaker_gain : 1.0);
    g.b1 = Tensor(h, 1);
    for (double& v : g.b1.values()) v = 0.1 * rng.normal();
    g.w2 = Tensor(d, h);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (double& v : g.w2.values()) v = s2 * rng.normal();
    g.b2 = Tensor(d, 1);
    for (double& v : g.b2.values()) v = 0.1 * rng.normal();
    return g;
  }

  Tensor synthesize(const Tensor& f0, const Tensor& features, const Tensor& xmat) const {
    const Tensor* blocks[] = {&f0, &features, &xmat};
    const Tensor input = kernels::concat_rows(blocks);
    const Tensor hidden = kernels::tanh(kernels::add_column(kernels::matmul(w1, input), b1));
    return kernels::add_column(kernels::matmul(w2, hidden), b2);
  }
};

inline Tensor random_unit(Rng& rng, std::size_t m) {
  Tensor z(m, 1);
  for (double& v : z.values()) v = rng.normal();
  return kernels::normalized(z, "identity draw");
}

}  // namespace world_detail

/// SHA-256 over the config and every generated value.
inline std::string fingerprint_of(const Dataset& ds);

/**
 * Deterministic world generation. Speakers [0, train) are training speakers,
 * [train, train+pool) pool speakers, the rest evaluation speakers. Every
 * utterance draws from its own stream derived from (master_seed, speaker,
 * utterance), so the result does not depend on generation order.
 */
inline Dataset generate_world(const WorldConfig& cfg) {
  cfg.validate();
  using namespace world_detail;
  const Generator gen = Generator::make(cfg);
  const auto n = static_cast<std::size_t>(cfg.frames);
  const auto c = static_cast<std::size_t>(cfg.content_dim);
  const auto m = static_cast<std::size_t>(cfg.embed_dim);

  Dataset ds;
  ds.config = cfg;
  const int total = cfg.total_speakers();
  ds.speakers.reserve(static_cast<std::size_t>(total));
  ds.utterances.reserve(static_cast<std::size_t>(total * cfg.utterances_per_speaker));

  for (int s = 0; s < total; ++s) {
    Speaker spk;
    spk.id = s;
    spk.group = s < cfg.train_speakers                         ? SpeakerGroup::train
                : s < cfg.train_speakers + cfg.pool_speakers ? SpeakerGroup::pool
                                                               : SpeakerGroup::eval;
    Rng srng(derive_seed(cfg.master_seed, {kSpeaker, static_cast<std::uint64_t>(s)}));
    spk.identity = random_unit(srng, m);
    const Tensor leak_offset = kernels::scale(kernels::matmul(gen.leak, spk.identity), cfg.leakage);
    const double base_log_f0 = cfg.f0_speaker_coupling * kernels::dot(gen.pitch_axis, spk.identity);

    for (int k = 0; k < cfg.utterances_per_speaker; ++k) {
      Rng rng(derive_seed(cfg.master_seed,
                          {kUtterance, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(k)}));
      Utterance u;
      u.speaker_id = s;
      u.utterance_id = k;
      switch (spk.group) {
        case SpeakerGroup::train:
          u.partition = k >= cfg.utterances_per_speaker - cfg.heldout_per_speaker ? Partition::heldout
                                                                                  : Partition::train;
          break;
        case SpeakerGroup::pool: u.partition = Partition::pool; break;
        case SpeakerGroup::eval:
          u.partition = k < cfg.enroll_per_speaker ? Partition::enroll : Partition::trial;
          break;
      }

      Tensor x(m, 1);
      for (std::size_t i = 0; i < m; ++i) x[i] = spk.identity[i] + cfg.within_speaker_noise * rng.normal();
      u.xvector = kernels::normalized(x, "x-vector draw");

      u.f0 = Tensor(1, n);
      double walk = base_log_f0;
      for (std::size_t t = 0; t < n; ++t) {
        walk += cfg.f0_step * rng.normal();
        u.f0[t] = std::exp(walk);
      }

      u.features = Tensor(c, n);
      for (std::size_t r = 0; r < c; ++r) {
        const double offset = cfg.content_offset * rng.normal();
        for (std::size_t t = 0; t < n; ++t) u.features(r, t) = offset + rng.normal() + leak_offset[r];
      }

      u.signal = gen.synthesize(u.f0, u.features, kernels::repeat_columns(u.xvector, n));
      ds.utterances.push_back(std::move(u));
    }
    ds.speakers.push_back(std::move(spk));
  }
  ds.fingerprint = fingerprint_of(ds);
  return ds;
}

/// Canonical JSON-free text form of the config, used for hashing.
inline std::string canonical_string(const WorldConfig& c) {
  std::string s;
  auto kv = [&s](std::string_view k, const std::string& v) {
    s += k;
    s += '=';
    s += v;
    s += ';';
  };
  kv("train_speakers", std::to_string(c.train_speakers));
  kv("pool_speakers", std::to_string(c.pool_speakers));
  kv("eval_speakers", std::to_string(c.eval_speakers));
  kv("utterances_per_speaker", std::to_string(c.utterances_per_speaker));
  kv("enroll_per_speaker", std::to_string(c.enroll_per_speaker));
  kv("heldout_per_speaker", std::to_string(c.heldout_per_speaker));
  kv("frames", std::to_string(c.frames));
  kv("content_dim", std::to_string(c.content_dim));
  kv("embed_dim", std::to_string(c.embed_dim));
  kv("signal_dim", std::to_string(c.signal_dim));
  kv("leakage", io::format_double(c.leakage));
  kv("within_speaker_noise", io::format_double(c.within_speaker_noise));
  kv("master_seed", std::to_string(c.master_seed));
  kv("generator_hidden", std::to_string(c.generator_hidden));
  kv("generator_gain", io::format_double(c.generator_gain));
  kv("speaker_gain", io::format_double(c.speaker_gain));
  kv("leak_scale", io::format_double(c.leak_scale));
  kv("content_offset", io::format_double(c.content_offset));
  kv("f0_step", io::format_double(c.f0_step));
  kv("f0_speaker_coupling", io::format_double(c.f0_speaker_coupling));
  return s;
}

inline std::string fingerprint_of(const Dataset& ds) {
  io::Sha256 h;
  h.update(canonical_string(ds.config));
  for (const Speaker& s : ds.speakers) {
    h.update(static_cast<std::uint64_t>(s.id));
    h.update(s.identity.values());
  }
  for (const Utterance& u : ds.utterances) {
    h.update(static_cast<std::uint64_t>(u.speaker_id));
    h.update(static_cast<std::uint64_t>(u.utterance_id));
    h.update(to_string(u.partition));
    h.update(u.f0.values());
    h.update(u.features.values());
    h.update(u.signal.values());
    h.update(u.xvector.values());
  }
  return h.hex();
}

/// Pool of external x-vectors: one entry per vector group, the renormalized mean.
inline std::vector<Tensor> pool_from_groups(const std::vector<std::vector<Tensor>>& groups) {
  if (groups.empty()) throw ConfigError("build_pool: empty pool partition");
  std::vector<Tensor> pool;
  pool.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("build_pool: pool speaker without utterances");
    Tensor acc(g.front().rows(), g.front().cols());
    for (const Tensor& x : g) acc = kernels::add(acc, x);
    pool.push_back(kernels::normalized(kernels::scale(acc, 1.0 / static_cast<double>(g.size())), "pool mean"));
  }
  return pool;
}

/// One pool entry per pool speaker, in ascending speaker id.
inline std::vector<Tensor> build_pool(const Dataset& ds) {
  std::map<int, std::vector<Tensor>> by_speaker;
  for (const Utterance* u : ds.in(Partition::pool)) by_speaker[u->speaker_id].push_back(u->xvector);
  std::vector<std::vector<Tensor>> groups;
  for (auto& [id, xs] : by_speaker) groups.push_back(std::move(xs));
  return pool_from_groups(groups);
}

}  // namespace driftlab
