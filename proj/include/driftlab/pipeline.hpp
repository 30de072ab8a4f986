#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/experiment.hpp"
#include "driftlab/io.hpp"

// Staged, resumable experiment runs on disk:
//
//   <root>/world/    generated dataset
//   <root>/models/   trained vocoder + extractor
//   <root>/runs/     one directory per lambda
//   <root>/reports/  tables, embeddings, projection
//   <root>/manifest.json
//
// Every stage records a key derived from its inputs and the hash of every file
// it wrote. A stage whose key and files are unchanged is skipped.

namespace driftlab {

inline constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;

inline fs::path default_output_root() {
  if (const char* env = std::getenv("DRIFTLAB_OUT"); env != nullptr && *env != '\0') return env;
  return "driftlab-out";
}

struct PipelineOptions {
  fs::path root = default_output_root();
  std::size_t jobs = 1;
  std::ostream* log = &std::cerr;  // null silences progress lines
};

namespace pipeline_detail {

inline std::string hash_text(std::string_view s) { return io::Sha256().update(s).hex(); }

inline std::string lambda_label(double lambda) { return "lambda_" + io::format_double(lambda); }

inline void log_line(const PipelineOptions& opt, const std::string& line) {
  if (opt.log) *opt.log << "[driftlab] " << line << '\n';
}

class Manifest {
 public:
  explicit Manifest(fs::path root) : path_(std::move(root) / "manifest.json") {
    if (fs::exists(path_)) {
      data_ = nlohmann::json::parse(io::read_text(path_));
    } else {
      data_ = {{"tool_version", kToolVersion}, {"stages", nlohmann::json::object()}, {"history", nlohmann::json::array()}};
    }
  }

  const nlohmann::json* stage(const std::string& name) const {
    const auto& s = data_.at("stages");
    return s.contains(name) ? &s.at(name) : nullptr;
  }

  /// True when `name` completed with this key and all its files still hash to the recorded values.
  bool up_to_date(const std::string& name, const std::string& key, const fs::path& root) const {
    const nlohmann::json* s = stage(name);
    if (!s || !s->value("complete", false) || s->value("key", "") != key) return false;
    for (auto it = s->at("files").begin(); it != s->at("files").end(); ++it) {
      const fs::path p = root / it.key();
      if (!fs::exists(p) || io::sha256_file(p) != it.value().get<std::string>()) return false;
    }
    return true;
  }

  void begin(const std::string& name) {
    data_["stages"][name] = {{"complete", false}};
    save();
  }

  void complete(const std::string& name, const std::string& key, const std::vector<fs::path>& files,
                const fs::path& root, double seconds, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json hashes = nlohmann::json::object();
    for (const fs::path& f : files) hashes[fs::relative(f, root).generic_string()] = io::sha256_file(f);
    nlohmann::json entry = {{"complete", true}, {"key", key}, {"files", hashes}, {"seconds", seconds}};
    entry.update(extra);
    data_["stages"][name] = entry;
    record(name, "ran", seconds);
  }

  void record(const std::string& name, const std::string& action, double seconds = 0.0) {
    data_["history"].push_back({{"stage", name}, {"action", action}, {"seconds", seconds},
                                {"tool_version", kToolVersion}});
    save();
  }

  void set_config(const nlohmann::json& config) {
    data_["config"] = config;
    save();
  }

 private:
  void save() const {
    fs::create_directories(path_.parent_path());
    io::write_text(path_, data_.dump(2) + "\n");
  }

  fs::path path_;
  nlohmann::json data_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string world_key(const ExperimentConfig& c) { return hash_text(canonical_string(c.world)); }

inline std::string train_key(const ExperimentConfig& c, const std::string& world_fingerprint) {
  using namespace experiment_detail;
  return hash_text(world_fingerprint + train_json(c.vocoder_training).dump() + train_json(c.extractor_training).dump());
}

inline std::string run_key(const ExperimentConfig& c, const std::string& model_hash, double lambda, bool comp) {
  const nlohmann::json j = to_json(c);
  return hash_text(model_hash + j.at("anon").dump() + (comp ? j.at("compensation").dump() : std::string("none")) +
                   io::format_double(lambda));
}

/// Requires an upstream stage to be complete and current.
inline const nlohmann::json& require_stage(const Manifest& m, const std::string& name, const std::string& key,
                                           const fs::path& root, const std::string& command) {
  const nlohmann::json* s = m.stage(name);
  if (!s || !s->value("complete", false)) {
    throw StageOrderError("stage '" + name + "' has not completed under " + root.string() + "; run `" + command +
                          "` first");
  }
  if (s->value("key", "") != key) {
    throw ProvenanceError("stage '" + name + "' was produced from a different configuration; rerun `" + command +
                          "`");
  }
  if (!m.up_to_date(name, key, root)) {
    throw ProvenanceError("outputs of stage '" + name + "' were modified or removed; rerun `" + command + "`");
  }
  return *s;
}

// ---- run directories -------------------------------------------------------

inline void write_run(const fs::path& dir, const std::vector<UtteranceRun>& runs, std::size_t m) {
  fs::create_directories(dir);
  io::CsvWriter w(dir / "run.csv");
  w.field("speaker_id").field("utterance_id").field("partition").field("lambda").field("target").field("x_i_norm")
      .field("drift").field("compensated").field("steps_taken").field("converged").field("drift_compensated")
      .field("pool_indices");
  for (const char* prefix : {"p_", "a_", "c_"})
    for (std::size_t i = 0; i < m; ++i) w.field(prefix + std::to_string(i));
  w.end_row();
  for (const UtteranceRun& r : runs) {
    std::string idx;
    for (std::size_t k = 0; k < r.pseudo.indices.size(); ++k) idx += (k ? ";" : "") + std::to_string(r.pseudo.indices[k]);
    w.field(r.key.speaker_id).field(r.key.utterance_id).field(to_string(r.partition)).field(r.lambda).field(r.target)
        .field(r.x_i_norm).field(r.drift).field(r.compensated ? "1" : "0");
    if (r.compensated) {
      w.field(r.trace.steps_taken).field(r.trace.converged ? "1" : "0").field(r.trace.final_drift());
    } else {
      w.field("").field("").field("");
    }
    w.field(idx).fields(r.pseudo.x_p.values()).fields(r.x_a.values());
    if (r.compensated) {
      w.fields(r.trace.x_a.values());
    } else {
      for (std::size_t i = 0; i < m; ++i) w.field("");
    }
    w.end_row();
  }
  w.close();

  io::CsvWriter t(dir / "trace.csv");
  t.field("speaker_id").field("utterance_id").field("step").field("drift").end_row();
  for (const UtteranceRun& r : runs) {
    if (!r.compensated) continue;
    for (std::size_t s = 0; s < r.trace.drift.size(); ++s)
      t.field(r.key.speaker_id).field(r.key.utterance_id).field(s).field(r.trace.drift[s]).end_row();
  }
  t.close();
}

inline std::vector<UtteranceRun> read_run(const fs::path& dir, std::size_t m) {
  std::vector<UtteranceRun> runs;
  std::map<UtteranceKey, std::size_t> where;
  io::read_csv(dir / "run.csv", [&](const auto&, const auto& row) {
    UtteranceRun r;
    r.key = {static_cast<int>(io::parse_int(row[0])), static_cast<int>(io::parse_int(row[1]))};
    r.partition = partition_from_string(row[2]);
    r.lambda = io::parse_double(row[3]);
    r.target = io::parse_double(row[4]);
    r.x_i_norm = io::parse_double(row[5]);
    r.drift = io::parse_double(row[6]);
    r.compensated = row[7] == "1";
    if (r.compensated) {
      r.trace.steps_taken = static_cast<int>(io::parse_int(row[8]));
      r.trace.converged = row[9] == "1";
    }
    std::string_view idx = row[11];
    while (!idx.empty()) {
      const auto semi = idx.find(';');
      r.pseudo.indices.push_back(static_cast<std::size_t>(io::parse_int(idx.substr(0, semi))));
      idx = semi == std::string_view::npos ? std::string_view{} : idx.substr(semi + 1);
    }
    auto vec = [&row, m](std::size_t first) {
      Tensor v(m, 1);
      for (std::size_t i = 0; i < m; ++i) v[i] = io::parse_double(row[first + i]);
      return v;
    };
    r.pseudo.x_p = vec(12);
    r.x_a = vec(12 + m);
    if (r.compensated) r.trace.x_a = vec(12 + 2 * m);
    where[r.key] = runs.size();
    runs.push_back(std::move(r));
  });
  io::read_csv(dir / "trace.csv", [&](const auto&, const auto& row) {
    const UtteranceKey k{static_cast<int>(io::parse_int(row[0])), static_cast<int>(io::parse_int(row[1]))};
    runs.at(where.at(k)).trace.drift.push_back(io::parse_double(row[3]));
  });
  return runs;
}

// ---- reports ---------------------------------------------------------------

inline std::string fmt_or_empty(double v) { return std::isnan(v) ? std::string() : io::format_double(v); }

inline std::vector<fs::path> write_reports(const fs::path& dir, const Dataset& ds, const ExperimentConfig& cfg,
                                           const std::map<double, std::vector<UtteranceRun>>& runs,
                                           const Summary& summary) {
  fs::create_directories(dir);
  const std::size_t m = static_cast<std::size_t>(ds.config.embed_dim);
  std::vector<fs::path> written;
  auto open = [&](const std::string& name) {
    written.push_back(dir / name);
    return io::CsvWriter(dir / name);
  };

  {
    auto w = open("drift_report.csv");
    w.field("partition").field("lambda").field("count").field("target").field("drift").field("drift_compensated")
        .field("converged_fraction").end_row();
    for (const LambdaSummary& l : summary.per_lambda) {
      w.field("eval").field(l.lambda).field(l.count).field(l.target).field(l.drift)
          .field(fmt_or_empty(l.drift_compensated)).field(fmt_or_empty(l.converged_fraction)).end_row();
    }
    w.close();
  }
  {
    auto w = open("drift_raw.csv");
    w.field("partition").field("speaker_id").field("utterance_id").field("lambda").field("target").field("x_i_norm")
        .field("drift").field("drift_compensated").field("steps_taken").field("converged").end_row();
    for (const auto& [lambda, rs] : runs) {
      for (const UtteranceRun& r : rs) {
        w.field(to_string(r.partition)).field(r.key.speaker_id).field(r.key.utterance_id).field(lambda)
            .field(r.target).field(r.x_i_norm).field(r.drift);
        if (r.compensated) {
          w.field(r.trace.final_drift()).field(r.trace.steps_taken).field(r.trace.converged ? "1" : "0");
        } else {
          w.field("").field("").field("");
        }
        w.end_row();
      }
    }
    w.close();
  }
  {
    auto w = open("eer_report.csv");
    w.field("partition").field("lambda").field("condition").field("enroll_mode").field("eer").end_row();
    for (const EerRow& e : summary.eer) {
      w.field("eval").field(cfg.evaluation.condition_lambda).field(to_string(e.condition))
          .field(to_string(e.enroll_mode)).field(e.eer).end_row();
    }
    w.close();
  }

  const auto& at_lambda = runs.at(cfg.evaluation.condition_lambda);
  const auto sets = condition_embeddings(ds, at_lambda);
  std::map<UtteranceKey, Partition> partition_of;
  for (const Utterance* u : ds.evaluation()) partition_of[{u->speaker_id, u->utterance_id}] = u->partition;
  for (const auto& [cond, emb] : sets) {
    auto w = open("embeddings_" + std::string(to_string(cond)) + ".csv");
    w.field("speaker_id").field("utterance_id").field("partition");
    for (std::size_t i = 0; i < m; ++i) w.field("x_" + std::to_string(i));
    w.end_row();
    for (const auto& [k, x] : emb)
      w.field(k.speaker_id).field(k.utterance_id).field(to_string(partition_of.at(k))).fields(x.values()).end_row();
    w.close();
  }
  {
    const Projection p = project_conditions(sets);
    auto w = open("projection.csv");
    w.field("condition").field("speaker_id").field("utterance_id").field("pc1").field("pc2").end_row();
    std::size_t i = 0;
    for (Condition c : kConditions) {
      auto it = sets.find(c);
      if (it == sets.end()) continue;
      for (const auto& [k, x] : it->second) {
        w.field(to_string(c)).field(k.speaker_id).field(k.utterance_id).field(p.coords[i][0]).field(p.coords[i][1])
            .end_row();
        ++i;
      }
    }
    w.close();
  }
  {
    auto w = open("pseudo.csv");
    w.field("speaker_id").field("utterance_id").field("lambda").field("pool_indices");
    for (std::size_t i = 0; i < m; ++i) w.field("p_" + std::to_string(i));
    w.end_row();
    for (const auto& [lambda, rs] : runs) {
      for (const UtteranceRun& r : rs) {
        std::string idx;
        for (std::size_t k = 0; k < r.pseudo.indices.size(); ++k)
          idx += (k ? ";" : "") + std::to_string(r.pseudo.indices[k]);
        w.field(r.key.speaker_id).field(r.key.utterance_id).field(lambda).field(idx).fields(r.pseudo.x_p.values())
            .end_row();
      }
    }
    w.close();
  }
  {
    auto w = open("compensation_trace.csv");
    w.field("lambda").field("speaker_id").field("utterance_id").field("step").field("drift").end_row();
    for (const auto& [lambda, rs] : runs)
      for (const UtteranceRun& r : rs)
        if (r.compensated)
          for (std::size_t s = 0; s < r.trace.drift.size(); ++s)
            w.field(lambda).field(r.key.speaker_id).field(r.key.utterance_id).field(s).field(r.trace.drift[s])
                .end_row();
    w.close();
  }
  {
    nlohmann::json j;
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    j["pearson_target_drift"] = num(summary.pearson_target_drift);
    j["drift_slope"] = num(summary.drift_slope);
    for (const LambdaSummary& l : summary.per_lambda) {
      j["lambdas"].push_back({{"lambda", l.lambda},
                              {"target", l.target},
                              {"drift", l.drift},
                              {"drift_compensated", num(l.drift_compensated)},
                              {"converged_fraction", num(l.converged_fraction)},
                              {"below_0.08_fraction", num(l.below_008_fraction)}});
    }
    for (const EerRow& e : summary.eer)
      j["eer"][std::string(to_string(e.enroll_mode))][std::string(to_string(e.condition))] = e.eer;
    for (const auto& [c, v] : summary.dispersion) j["dispersion"][std::string(to_string(c))] = v;
    for (const auto& [c, v] : summary.projected_spread) j["projected_spread"][std::string(to_string(c))] = v;
    written.push_back(dir / "summary.json");
    io::write_text(dir / "summary.json", j.dump(2) + "\n");
  }
  return written;
}

}  // namespace pipeline_detail

// ---- commands ----------------------------------------------------------------

inline Dataset cmd_world(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  using namespace pipeline_detail;
  cfg.validate();
  Manifest manifest(opt.root);
  manifest.set_config(to_json(cfg));
  const std::string key = world_key(cfg);
  const fs::path dir = opt.root / "world";
  if (manifest.up_to_date("world", key, opt.root)) {
    manifest.record("world", "skipped");
    log_line(opt, "stage=world action=skipped");
    return load_world(dir);
  }
  const auto t0 = std::chrono::steady_clock::now();
  manifest.begin("world");
  if (fs::exists(dir)) fs::remove_all(dir);
  Dataset ds = generate_world(cfg.world);
  save_world(ds, dir);
  manifest.complete("world", key, files_in(dir), opt.root, seconds_since(t0), {{"fingerprint", ds.fingerprint}});
  log_line(opt, "stage=world action=ran utterances=" + std::to_string(ds.utterances.size()) +
                    " fingerprint=" + ds.fingerprint);
  return ds;
}

inline Dataset load_current_world(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  using namespace pipeline_detail;
  Manifest manifest(opt.root);
  require_stage(manifest, "world", world_key(cfg), opt.root, "world");
  return load_world(opt.root / "world");
}

inline ModelBundle cmd_train(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  using namespace pipeline_detail;
  cfg.validate();
  const Dataset ds = load_current_world(cfg, opt);
  Manifest manifest(opt.root);
  const std::string key = train_key(cfg, ds.fingerprint);
  const fs::path file = opt.root / "models" / "bundle.json";
  if (manifest.up_to_date("train", key, opt.root)) {
    manifest.record("train", "skipped");
    log_line(opt, "stage=train action=skipped");
    return bundle_from_json_text(io::read_text(file));
  }
  const auto t0 = std::chrono::steady_clock::now();
  manifest.begin("train");
  ModelBundle b;
  b.world_fingerprint = ds.fingerprint;
  b.vocoder_training = cfg.vocoder_training;
  b.extractor_training = cfg.extractor_training;
  b.vocoder = train_vocoder(ds, cfg.vocoder_training, &b.vocoder_report);
  log_line(opt, "stage=train model=vocoder initial_loss=" + io::format_double(b.vocoder_report.initial_loss) +
                    " final_loss=" + io::format_double(b.vocoder_report.final_loss));
  b.extractor = train_extractor(ds, cfg.extractor_training, &b.extractor_report);
  log_line(opt, "stage=train model=extractor initial_loss=" + io::format_double(b.extractor_report.initial_loss) +
                    " final_loss=" + io::format_double(b.extractor_report.final_loss));
  fs::create_directories(file.parent_path());
  io::write_text(file, to_json_text(b));
  manifest.complete("train", key, {file}, opt.root, seconds_since(t0), {{"parameter_hash", b.parameter_hash()}});
  return b;
}

inline ModelBundle load_current_models(const ExperimentConfig& cfg, const Dataset& ds, const PipelineOptions& opt) {
  using namespace pipeline_detail;
  Manifest manifest(opt.root);
  require_stage(manifest, "train", train_key(cfg, ds.fingerprint), opt.root, "train");
  ModelBundle b = bundle_from_json_text(io::read_text(opt.root / "models" / "bundle.json"));
  if (b.world_fingerprint != ds.fingerprint) throw ProvenanceError("models belong to another world; rerun `train`");
  return b;
}

inline std::vector<UtteranceRun> cmd_run(const ExperimentConfig& cfg, double lambda, bool with_compensation,
                                         const PipelineOptions& opt) {
  using namespace pipeline_detail;
  cfg.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("--lambda must lie in [0, 1]");
  const Dataset ds = load_current_world(cfg, opt);
  const ModelBundle models = load_current_models(cfg, ds, opt);
  const std::size_t m = static_cast<std::size_t>(ds.config.embed_dim);
  const std::string label = lambda_label(lambda);
  const std::string stage = "run/" + label;
  const fs::path dir = opt.root / "runs" / label;
  Manifest manifest(opt.root);
  const std::string model_hash = models.parameter_hash();

  // A compensated run also carries the uncompensated values.
  const std::vector<bool> reusable = with_compensation ? std::vector<bool>{true} : std::vector<bool>{false, true};
  for (bool comp : reusable) {
    if (manifest.up_to_date(stage, run_key(cfg, model_hash, lambda, comp), opt.root)) {
      manifest.record(stage, "skipped");
      log_line(opt, "stage=run lambda=" + io::format_double(lambda) + " action=skipped");
      return read_run(dir, m);
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  manifest.begin(stage);
  const std::vector<Tensor> pool = build_pool(ds);
  auto logger = [&](std::size_t first, std::size_t last, const std::vector<UtteranceRun>& rs) {
    double d = 0.0, dc = 0.0;
    for (std::size_t i = first; i < last; ++i) {
      d += rs[i].drift;
      if (rs[i].compensated) dc += rs[i].trace.final_drift();
    }
    const double n = static_cast<double>(last - first);
    std::ostringstream os;
    os << "stage=run lambda=" << io::format_double(lambda) << " utterances=" << first << "-" << last
       << " mean_drift=" << io::format_double(d / n);
    if (with_compensation) os << " mean_drift_compensated=" << io::format_double(dc / n);
    log_line(opt, os.str());
  };
  auto runs = run_lambda(ds, pool, models, cfg, lambda, with_compensation, opt.jobs, logger);
  if (models.parameter_hash() != model_hash) throw ProvenanceError("model parameters changed during a run");
  if (fs::exists(dir)) fs::remove_all(dir);
  write_run(dir, runs, m);
  manifest.complete(stage, run_key(cfg, model_hash, lambda, with_compensation), files_in(dir), opt.root,
                    seconds_since(t0), {{"lambda", lambda}, {"compensated", with_compensation}});
  return runs;
}

inline Summary cmd_evaluate(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  using namespace pipeline_detail;
  cfg.validate();
  const Dataset ds = load_current_world(cfg, opt);
  const ModelBundle models = load_current_models(cfg, ds, opt);
  const std::size_t m = static_cast<std::size_t>(ds.config.embed_dim);
  const std::string model_hash = models.parameter_hash();
  Manifest manifest(opt.root);

  std::map<double, std::vector<UtteranceRun>> runs;
  std::string key_material = to_json(cfg).at("evaluation").dump();
  for (double lambda : cfg.lambdas) {
    const std::string stage = "run/" + lambda_label(lambda);
    const nlohmann::json* s = manifest.stage(stage);
    if (!s || !s->value("complete", false)) {
      throw StageOrderError("no completed run for lambda " + io::format_double(lambda) + "; run `run --lambda " +
                            io::format_double(lambda) + "` first");
    }
    const bool comp = s->value("compensated", false);
    require_stage(manifest, stage, run_key(cfg, model_hash, lambda, comp), opt.root,
                  "run --lambda " + io::format_double(lambda));
    runs[lambda] = read_run(opt.root / "runs" / lambda_label(lambda), m);
    key_material += s->at("key").get<std::string>();
  }
  const std::string key = hash_text(key_material);
  const fs::path dir = opt.root / "reports";

  const Summary summary = summarize(ds, cfg, runs);
  if (manifest.up_to_date("evaluate", key, opt.root)) {
    manifest.record("evaluate", "skipped");
    log_line(opt, "stage=evaluate action=skipped");
    return summary;
  }
  const auto t0 = std::chrono::steady_clock::now();
  manifest.begin("evaluate");
  if (fs::exists(dir)) fs::remove_all(dir);
  const auto files = write_reports(dir, ds, cfg, runs, summary);
  manifest.complete("evaluate", key, files, opt.root, seconds_since(t0));
  for (const EerRow& e : summary.eer) {
    log_line(opt, "stage=evaluate enroll=" + std::string(to_string(e.enroll_mode)) + " condition=" +
                      std::string(to_string(e.condition)) + " eer=" + io::format_double(e.eer));
  }
  return summary;
}

inline Summary cmd_reproduce(const ExperimentConfig& cfg, const PipelineOptions& opt) {
  cmd_world(cfg, opt);
  cmd_train(cfg, opt);
  for (double lambda : cfg.lambdas) cmd_run(cfg, lambda, true, opt);
  return cmd_evaluate(cfg, opt);
}

}  // namespace driftlab
