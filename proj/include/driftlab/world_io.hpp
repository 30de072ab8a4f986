#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "driftlab/io.hpp"
#include "driftlab/world.hpp"

namespace driftlab {

inline nlohmann::json to_json(const WorldConfig& c) {
  return {
      {"train_speakers", c.train_speakers},
      {"pool_speakers", c.pool_speakers},
      {"eval_speakers", c.eval_speakers},
      {"utterances_per_speaker", c.utterances_per_speaker},
      {"enroll_per_speaker", c.enroll_per_speaker},
      {"heldout_per_speaker", c.heldout_per_speaker},
      {"frames", c.frames},
      {"content_dim", c.content_dim},
      {"embed_dim", c.embed_dim},
      {"signal_dim", c.signal_dim},
      {"leakage", c.leakage},
      {"within_speaker_noise", c.within_speaker_noise},
      {"master_seed", c.master_seed},
      {"generator_hidden", c.generator_hidden},
      {"generator_gain", c.generator_gain},
      {"speaker_gain", c.speaker_gain},
      {"leak_scale", c.leak_scale},
      {"content_offset", c.content_offset},
      {"f0_step", c.f0_step},
      {"f0_speaker_coupling", c.f0_speaker_coupling},
  };
}

/// Missing keys keep their defaults; unknown keys are a config error.
inline void from_json(const nlohmann::json& j, WorldConfig& c) {
  static const char* known[] = {"train_speakers", "pool_speakers", "eval_speakers", "utterances_per_speaker",
                                "enroll_per_speaker", "heldout_per_speaker", "frames", "content_dim",
                                "embed_dim", "signal_dim", "leakage", "within_speaker_noise", "master_seed",
                                "generator_hidden", "generator_gain", "speaker_gain", "leak_scale",
                                "content_offset", "f0_step", "f0_speaker_coupling"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known)) {
      throw ConfigError("unknown world config key '" + it.key() + "'");
    }
  }
  auto get = [&j](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::remove_reference_t<decltype(field)>>();
  };
  get("train_speakers", c.train_speakers);
  get("pool_speakers", c.pool_speakers);
  get("eval_speakers", c.eval_speakers);
  get("utterances_per_speaker", c.utterances_per_speaker);
  get("enroll_per_speaker", c.enroll_per_speaker);
  get("heldout_per_speaker", c.heldout_per_speaker);
  get("frames", c.frames);
  get("content_dim", c.content_dim);
  get("embed_dim", c.embed_dim);
  get("signal_dim", c.signal_dim);
  get("leakage", c.leakage);
  get("within_speaker_noise", c.within_speaker_noise);
  get("master_seed", c.master_seed);
  get("generator_hidden", c.generator_hidden);
  get("generator_gain", c.generator_gain);
  get("speaker_gain", c.speaker_gain);
  get("leak_scale", c.leak_scale);
  get("content_offset", c.content_offset);
  get("f0_step", c.f0_step);
  get("f0_speaker_coupling", c.f0_speaker_coupling);
}

inline constexpr const char* kWorldFiles[] = {"world.json", "speakers.csv", "utterances.csv", "xvectors.csv",
                                              "tensors.csv"};

/// Writes the dataset directory: world.json, speakers.csv, utterances.csv,
/// xvectors.csv and tensors.csv (one row per tensor row, roles f0/G/S).
inline void save_world(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const WorldConfig& cfg = ds.config;
  nlohmann::json meta = {{"format", "driftlab-world/1"}, {"config", to_json(cfg)}, {"fingerprint", ds.fingerprint}};
  io::write_text(dir / "world.json", meta.dump(2) + "\n");

  {
    io::CsvWriter w(dir / "speakers.csv");
    w.field("speaker_id").field("group");
    for (int i = 0; i < cfg.embed_dim; ++i) w.field("z_" + std::to_string(i));
    w.end_row();
    for (const Speaker& s : ds.speakers) {
      w.field(s.id).field(s.group == SpeakerGroup::train  ? "train"
                          : s.group == SpeakerGroup::pool ? "pool"
                                                          : "eval");
      w.fields(s.identity.values()).end_row();
    }
    w.close();
  }
  {
    io::CsvWriter w(dir / "utterances.csv");
    w.field("speaker_id").field("utterance_id").field("partition").end_row();
    for (const Utterance& u : ds.utterances) {
      w.field(u.speaker_id).field(u.utterance_id).field(to_string(u.partition)).end_row();
    }
    w.close();
  }
  {
    io::CsvWriter w(dir / "xvectors.csv");
    w.field("speaker_id").field("utterance_id");
    for (int i = 0; i < cfg.embed_dim; ++i) w.field("x_" + std::to_string(i));
    w.end_row();
    for (const Utterance& u : ds.utterances) w.field(u.speaker_id).field(u.utterance_id).fields(u.xvector.values()).end_row();
    w.close();
  }
  {
    io::CsvWriter w(dir / "tensors.csv");
    w.field("speaker_id").field("utterance_id").field("role").field("row");
    for (int t = 0; t < cfg.frames; ++t) w.field("t_" + std::to_string(t));
    w.end_row();
    auto rows = [&w](const Utterance& u, std::string_view role, const Tensor& m) {
      for (std::size_t r = 0; r < m.rows(); ++r) {
        w.field(u.speaker_id).field(u.utterance_id).field(role).field(r).fields(m.row(r)).end_row();
      }
    };
    for (const Utterance& u : ds.utterances) {
      rows(u, "f0", u.f0);
      rows(u, "G", u.features);
      rows(u, "S", u.signal);
    }
    w.close();
  }
}

/// Reads a dataset directory and checks its fingerprint.
inline Dataset load_world(const std::filesystem::path& dir) {
  const nlohmann::json meta = nlohmann::json::parse(io::read_text(dir / "world.json"));
  Dataset ds;
  from_json(meta.at("config"), ds.config);
  const WorldConfig& cfg = ds.config;
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.frames);
  const auto c = static_cast<std::size_t>(cfg.content_dim);
  const auto m = static_cast<std::size_t>(cfg.embed_dim);
  const auto d = static_cast<std::size_t>(cfg.signal_dim);

  io::read_csv(dir / "speakers.csv", [&](const auto&, const auto& row) {
    Speaker s;
    s.id = static_cast<int>(io::parse_int(row[0]));
    s.group = row[1] == "train" ? SpeakerGroup::train : row[1] == "pool" ? SpeakerGroup::pool : SpeakerGroup::eval;
    s.identity = Tensor(m, 1);
    for (std::size_t i = 0; i < m; ++i) s.identity[i] = io::parse_double(row[2 + i]);
    ds.speakers.push_back(std::move(s));
  });
  io::read_csv(dir / "utterances.csv", [&](const auto&, const auto& row) {
    Utterance u;
    u.speaker_id = static_cast<int>(io::parse_int(row[0]));
    u.utterance_id = static_cast<int>(io::parse_int(row[1]));
    u.partition = partition_from_string(row[2]);
    u.f0 = Tensor(1, n);
    u.features = Tensor(c, n);
    u.signal = Tensor(d, n);
    u.xvector = Tensor(m, 1);
    ds.utterances.push_back(std::move(u));
  });
  auto find = [&ds](std::string_view s, std::string_view k) -> Utterance& {
    return const_cast<Utterance&>(ds.at({static_cast<int>(io::parse_int(s)), static_cast<int>(io::parse_int(k))}));
  };
  io::read_csv(dir / "xvectors.csv", [&](const auto&, const auto& row) {
    Utterance& u = find(row[0], row[1]);
    for (std::size_t i = 0; i < m; ++i) u.xvector[i] = io::parse_double(row[2 + i]);
  });
  io::read_csv(dir / "tensors.csv", [&](const auto&, const auto& row) {
    Utterance& u = find(row[0], row[1]);
    Tensor& target = row[2] == "f0" ? u.f0 : row[2] == "G" ? u.features : u.signal;
    const auto r = static_cast<std::size_t>(io::parse_int(row[3]));
    if (r >= target.rows()) throw std::runtime_error("tensors.csv: row index out of range");
    for (std::size_t t = 0; t < n; ++t) target(r, t) = io::parse_double(row[4 + t]);
  });

  ds.fingerprint = fingerprint_of(ds);
  const std::string recorded = meta.at("fingerprint").get<std::string>();
  if (ds.fingerprint != recorded) {
    throw ProvenanceError("world at " + dir.string() + " does not match its recorded fingerprint; rerun `world`");
  }
  return ds;
}

}  // namespace driftlab
