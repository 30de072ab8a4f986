// driftlab: command-line front end for the staged experiment pipeline.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 stage run out of order, 4 numerical failure, 5 provenance mismatch.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "driftlab/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; missing keys keep their defaults");
  cmd->add_option("--set", f.overrides, "override one config key, e.g. --set world.leakage=0")->take_all();
  cmd->add_option("--seed", f.seed, "use this seed for world, training, anonymisation and trials");
  cmd->add_option("--out", f.out, "output root (default: $DRIFTLAB_OUT or ./driftlab-out)");
  cmd->add_option("--jobs", f.jobs, "worker threads for per-utterance work")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", f.quiet, "suppress progress lines");
}

driftlab::ExperimentConfig load_config(const CommonFlags& f) {
  driftlab::ExperimentConfig cfg;
  if (!f.config_path.empty()) {
    const std::string text = driftlab::io::read_text(f.config_path);
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) throw driftlab::ConfigError("config file " + f.config_path + " is not valid JSON");
    cfg = driftlab::experiment_from_json(j);
  }
  if (f.seed) cfg.reseed(*f.seed);
  for (const std::string& o : f.overrides) cfg = driftlab::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

driftlab::PipelineOptions options(const CommonFlags& f) {
  driftlab::PipelineOptions opt;
  if (!f.out.empty()) opt.root = f.out;
  opt.jobs = f.jobs;
  opt.log = f.quiet ? nullptr : &std::cerr;
  return opt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vocoder drift lab: synthetic x-vector anonymisation experiments"};
  app.require_subcommand(1);

  CommonFlags flags;
  double lambda = 1.0;
  bool compensate = true;

  auto* world = app.add_subcommand("world", "generate the synthetic world");
  auto* train = app.add_subcommand("train", "train the vocoder and the extractor");
  auto* run = app.add_subcommand("run", "anonymise the eval utterances at one lambda");
  auto* evaluate = app.add_subcommand("evaluate", "write drift, EER and embedding reports");
  auto* reproduce = app.add_subcommand("reproduce", "every stage, every lambda, with compensation");
  for (auto* cmd : {world, train, run, evaluate, reproduce}) add_common(cmd, flags);
  run->add_option("--lambda", lambda, "interpolation weight in [0, 1]")->required();
  run->add_flag("--compensate,!--no-compensate", compensate, "also run drift compensation (default on)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto cfg = load_config(flags);
    const auto opt = options(flags);
    if (world->parsed()) {
      driftlab::cmd_world(cfg, opt);
    } else if (train->parsed()) {
      driftlab::cmd_train(cfg, opt);
    } else if (run->parsed()) {
      driftlab::cmd_run(cfg, lambda, compensate, opt);
    } else if (evaluate->parsed()) {
      driftlab::cmd_evaluate(cfg, opt);
    } else if (reproduce->parsed()) {
      driftlab::cmd_reproduce(cfg, opt);
    }
    return 0;
  } catch (const driftlab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const driftlab::StageOrderError& e) {
    std::cerr << "stage order error: " << e.what() << '\n';
    return 3;
  } catch (const driftlab::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const driftlab::ProvenanceError& e) {
    std::cerr << "provenance error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
