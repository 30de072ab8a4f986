// Acceptance run: prints one PASS/FAIL line per criterion, then the supporting
// checks, and writes the same lines to the report file. Exits 0 once every
// criterion has been evaluated; with --strict the exit status is the number of
// failed criteria instead.
//
//   acceptance [--out DIR] [--report FILE] [--jobs N] [--keep] [--strict]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "configs.hpp"
#include "driftlab/pipeline.hpp"
#include "support.hpp"

using namespace driftlab;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> criteria, checks;

void report(std::vector<Outcome>& into, const std::string& name, bool pass, const std::string& detail) {
  into.push_back({name, pass, detail});
  std::cerr << "[acceptance] " << name << " done" << std::endl;
}

void print(std::ostream& os, const std::vector<Outcome>& list) {
  for (const Outcome& o : list) os << (o.pass ? "PASS " : "FAIL ") << o.name << "  " << o.detail << '\n';
}

// ---- criterion 1 -------------------------------------------------------------

struct GradCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Var(Tape&, const std::vector<Var>&)> graph;
};

Tensor away_from_zero(Tensor t) {
  for (double& d : t.values()) d = (d < 0 ? -1.0 : 1.0) * (0.5 + std::abs(d));
  return t;
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back({"matmul",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5), c = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), random_tensor(r, b, c)};
                   },
                   [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::matmul(v[0], v[1]), 1); }});
  cases.push_back({"add/sub/scale",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), random_tensor(r, a, b)};
                   },
                   [](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, ad::sub(ad::add(v[0], ad::scale(v[1], 1.7)), ad::scale(v[0], 0.3)), 2);
                   }});
  cases.push_back({"mul",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), random_tensor(r, a, b), random_tensor(r, 1, 1)};
                   },
                   [](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, ad::mul(v[2], ad::mul(v[0], v[1])), 3);
                   }});
  cases.push_back({"div",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), away_from_zero(random_tensor(r, a, b))};
                   },
                   [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::div(v[0], v[1]), 4); }});
  cases.push_back({"tanh",
                   [](Rng& r) { return std::vector{random_tensor(r, random_dim(r, 1, 6), random_dim(r, 1, 6), 1.5)}; },
                   [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::tanh(v[0]), 5); }});
  cases.push_back({"add_bias",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), random_tensor(r, a, 1)};
                   },
                   [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::add_bias(v[0], v[1]), 6); }});
  cases.push_back({"concat_rows",
                   [](Rng& r) {
                     const auto n = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, 1, n), random_tensor(r, random_dim(r, 1, 4), n)};
                   },
                   [](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, ad::concat_rows({v[0], v[1]}), 7);
                   }});
  cases.push_back({"repeat_columns",
                   [](Rng& r) { return std::vector{random_tensor(r, random_dim(r, 1, 5), 1)}; },
                   [](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, ad::repeat_columns(v[0], 4), 8);
                   }});
  cases.push_back({"mean_over_frames",
                   [](Rng& r) { return std::vector{random_tensor(r, random_dim(r, 1, 5), random_dim(r, 1, 7))}; },
                   [](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, ad::mean_over_frames(v[0]), 9);
                   }});
  cases.push_back({"dot/norm",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 6);
                     return std::vector{random_tensor(r, a, 1), random_tensor(r, a, 1)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return ad::mul(ad::dot(v[0], v[1]), ad::norm(v[0])); }});
  cases.push_back({"normalize",
                   [](Rng& r) { return std::vector{random_tensor(r, random_dim(r, 1, 6), 1)}; },
                   [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, ad::normalize(v[0]), 10); }});
  cases.push_back({"cosine_distance",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 6);
                     return std::vector{random_tensor(r, a, 1), random_tensor(r, a, 1)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return ad::cosine_distance(v[0], v[1]); }});
  cases.push_back({"mean_squared_error",
                   [](Rng& r) {
                     const auto a = random_dim(r, 1, 5), b = random_dim(r, 1, 5);
                     return std::vector{random_tensor(r, a, b), random_tensor(r, a, b)};
                   },
                   [](Tape&, const std::vector<Var>& v) { return ad::mean_squared_error(v[0], v[1]); }});
  return cases;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  constexpr int kInstances = 20;
  double worst = 0.0;
  std::string worst_name;
  Rng rng(2024);
  for (const GradCase& c : gradient_cases()) {
    for (int i = 0; i < kInstances; ++i) {
      const double e = gradient_check(c.inputs(rng), c.graph);
      if (!(e <= worst)) worst = e, worst_name = c.name;
    }
  }
  // synthesize -> extract -> cosine distance, gradient with respect to X.
  WorldConfig w;
  w.content_dim = 4;
  w.embed_dim = 5;
  w.signal_dim = 6;
  for (int i = 0; i < kInstances; ++i) {
    const Vocoder v = make_vocoder(w, 12, 100 + static_cast<std::uint64_t>(i));
    const Extractor e = make_extractor(w, 12, 200 + static_cast<std::uint64_t>(i));
    const std::size_t n = random_dim(rng, 1, 8);
    const Tensor f = random_tensor(rng, 1, n), g = random_tensor(rng, 4, n), target = random_unit(rng, 5);
    const double err = gradient_check({random_tensor(rng, 5, n)}, [&](Tape& t, const std::vector<Var>& in) {
      Var s = synthesize(t, v, t.constant(f), t.constant(g), in[0]);
      return ad::cosine_distance(extract(t, e, s), t.constant(target));
    });
    if (!(err <= worst)) worst = err, worst_name = "synthesize/extract/cosine_distance";
  }
  const double secs = seconds_since(t0);
  report(criteria, "1 gradient correctness", worst < 1e-5 && secs < 30.0,
         "worst relative error " + fmt(worst, 3) + " (" + worst_name + "), " + fmt(secs, 3) + " s");
}

// ---- criterion 8 -------------------------------------------------------------

double brute_force_eer(const std::vector<double>& genuine, const std::vector<double>& impostor) {
  std::vector<double> thr(genuine);
  thr.insert(thr.end(), impostor.begin(), impostor.end());
  std::sort(thr.begin(), thr.end());
  thr.erase(std::unique(thr.begin(), thr.end()), thr.end());
  std::vector<double> far, frr;
  for (double t : thr) {
    int fr = 0, fa = 0;
    for (double g : genuine) fr += g < t ? 1 : 0;
    for (double s : impostor) fa += s >= t ? 1 : 0;
    frr.push_back(fr / static_cast<double>(genuine.size()));
    far.push_back(fa / static_cast<double>(impostor.size()));
  }
  for (std::size_t k = 0; k < thr.size(); ++k) {
    const double d = far[k] - frr[k];
    if (d == 0.0) return frr[k];
    if (k + 1 < thr.size() && d > 0.0 && far[k + 1] - frr[k + 1] < 0.0) {
      const double alpha = d / (d - (far[k + 1] - frr[k + 1]));
      return frr[k] + alpha * (frr[k + 1] - frr[k]);
    }
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < thr.size(); ++k)
    if (std::abs(far[k] - frr[k]) < std::abs(far[best] - frr[best])) best = k;
  return 0.5 * (far[best] + frr[best]);
}

void criterion_eer_oracle() {
  Rng rng(8);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> g, im;
    const bool coarse = i % 2 == 0;
    const double shift = rng.uniform(-1.0, 3.0);
    for (std::size_t k = random_dim(rng, 1, 15); k > 0; --k) g.push_back(rng.normal() + shift);
    for (std::size_t k = random_dim(rng, 1, 15); k > 0; --k) im.push_back(rng.normal());
    if (coarse) {
      for (double& v : g) v = std::round(v * 4.0) / 4.0;
      for (double& v : im) v = std::round(v * 4.0) / 4.0;
    }
    if (compute_eer(g, im) != brute_force_eer(g, im)) ++mismatches;
  }
  report(criteria, "8 EER oracle equivalence", mismatches == 0,
         std::to_string(100 - mismatches) + "/100 score sets match exactly");
}

// ---- helpers over a finished run ----------------------------------------------

double eer_of(const Summary& s, Condition c, EnrollMode m) {
  for (const EerRow& r : s.eer)
    if (r.condition == c && r.enroll_mode == m) return r.eer;
  return std::nan("");
}

std::vector<double> mean_drifts(const Summary& s) {
  std::vector<double> out;
  for (const LambdaSummary& l : s.per_lambda) out.push_back(l.drift);
  return out;
}

std::vector<fs::path> report_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root / "reports"))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = fs::temp_directory_path() / "driftlab_acceptance";
  std::size_t jobs = 1;
  bool keep = false, strict = false;
  fs::path report_path = "acceptance_report.txt";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--out" && i + 1 < argc) {
      out = argv[++i];
    } else if (a == "--jobs" && i + 1 < argc) {
      jobs = std::stoul(argv[++i]);
    } else if (a == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else if (a == "--keep") {
      keep = true;
    } else if (a == "--strict") {
      strict = true;
    } else {
      std::cerr << "usage: acceptance [--out DIR] [--report FILE] [--jobs N] [--keep] [--strict]\n";
      return 64;
    }
  }
  fs::remove_all(out);
  std::string other_mode_line;

  criterion_gradients();
  criterion_eer_oracle();

  const ExperimentConfig cfg;  // the desk defaults
  PipelineOptions opt;
  opt.root = out / "default";
  opt.jobs = jobs;
  opt.log = nullptr;

  std::cerr << "[acceptance] running the default sweep under " << opt.root << std::endl;
  const auto t_sweep = Clock::now();
  const Dataset ds = cmd_world(cfg, opt);
  const ModelBundle models = cmd_train(cfg, opt);
  const double train_secs = seconds_since(t_sweep);
  std::map<double, std::vector<UtteranceRun>> runs;
  double lambda1_secs = 0.0;
  for (double lambda : cfg.lambdas) {
    const auto t = Clock::now();
    runs[lambda] = cmd_run(cfg, lambda, true, opt);
    if (lambda == 1.0) lambda1_secs = seconds_since(t);
  }
  const Summary s = cmd_evaluate(cfg, opt);
  const double sweep_secs = seconds_since(t_sweep) - train_secs;

  // 2: drift rises with lambda and tracks target distance.
  {
    const auto d = mean_drifts(s);
    bool increasing = true;
    for (std::size_t i = 1; i < d.size(); ++i) increasing = increasing && d[i] > d[i - 1];
    std::string ds_text;
    for (double v : d) ds_text += (ds_text.empty() ? "" : " < ") + fmt(v);
    report(criteria, "2 drift vs target distance",
           increasing && s.pearson_target_drift > 0.3 && sweep_secs < 900.0,
           "mean drift " + ds_text + ", pearson " + fmt(s.pearson_target_drift) + " (> 0.3), sweep " +
               fmt(sweep_secs, 3) + " s");
  }
  // 3: copy synthesis still drifts.
  {
    const double d0 = s.per_lambda.front().drift;
    report(criteria, "3 copy-synthesis drift", s.per_lambda.front().lambda == 0.0 && d0 > 0.02,
           "mean drift at lambda 0 = " + fmt(d0));
  }
  // 5: compensation.
  {
    const LambdaSummary& l1 = s.per_lambda.back();
    report(criteria, "5 compensation effectiveness",
           l1.below_008_fraction >= 0.9 && l1.drift_compensated < 0.2 * l1.drift && lambda1_secs < 1200.0,
           fmt(100.0 * l1.below_008_fraction, 3) + "% below 0.08, mean " + fmt(l1.drift_compensated) + " vs " +
               fmt(l1.drift) + " uncompensated (ratio " + fmt(l1.drift_compensated / l1.drift, 3) + "), " +
               fmt(lambda1_secs, 3) + " s");
  }
  // 6: EER ordering.
  {
    const EnrollMode m = cfg.evaluation.enroll_mode;
    const double o = eer_of(s, Condition::original, m), p = eer_of(s, Condition::pseudo, m),
                 a = eer_of(s, Condition::anonymised, m), c = eer_of(s, Condition::compensated, m);
    const bool pass = o < p && p <= a && std::abs(c - p) <= 0.5 * std::abs(a - p);
    report(criteria, "6 EER ordering", pass,
           std::string("enrolment ") + std::string(to_string(m)) + ": original " + fmt(o) + ", pseudo " + fmt(p) +
               ", anonymised " + fmt(a) + ", compensated " + fmt(c) + "; |c-p| " + fmt(std::abs(c - p)) +
               " vs 0.5|a-p| " + fmt(0.5 * std::abs(a - p)));
    const EnrollMode other = m == EnrollMode::matched ? EnrollMode::original : EnrollMode::matched;
    std::ostringstream os;
    os << "enrolment " << to_string(other) << ": original " << fmt(eer_of(s, Condition::original, other))
              << ", pseudo " << fmt(eer_of(s, Condition::pseudo, other)) << ", anonymised "
              << fmt(eer_of(s, Condition::anonymised, other)) << ", compensated "
              << fmt(eer_of(s, Condition::compensated, other));
    other_mode_line = os.str();
  }
  // 7: dispersion.
  {
    const double a = s.dispersion.at(Condition::anonymised), c = s.dispersion.at(Condition::compensated);
    report(criteria, "7 dispersion reduction", a > c,
           "within-speaker distance to centroid: anonymised " + fmt(a) + " > compensated " + fmt(c));
  }

  // 4: the same sweep on a world without leakage.
  {
    ExperimentConfig clean = cfg;
    clean.world.leakage = 0.0;
    PipelineOptions o0 = opt;
    o0.root = out / "no_leakage";
    cmd_world(clean, o0);
    cmd_train(clean, o0);
    std::vector<double> lam, drift;
    for (double lambda : clean.lambdas) {
      const auto rs = cmd_run(clean, lambda, false, o0);
      double sum = 0.0;
      for (const UtteranceRun& r : rs) sum += r.drift;
      lam.push_back(lambda);
      drift.push_back(sum / static_cast<double>(rs.size()));
    }
    const double slope0 = slope(lam, drift);
    std::string d_text;
    for (double v : drift) d_text += (d_text.empty() ? "" : ", ") + fmt(v);
    report(criteria, "4 entanglement causality", slope0 < s.drift_slope,
           "drift slope with leakage 0: " + fmt(slope0) + " < with leakage " + fmt(cfg.world.leakage) + ": " +
               fmt(s.drift_slope) + " (leakage-0 drifts " + d_text + ")");
  }

  // 9: a second full reproduce from the same config.
  {
    PipelineOptions o2 = opt;
    o2.root = out / "repeat";
    cmd_reproduce(cfg, o2);
    const auto a = report_files(opt.root), b = report_files(o2.root);
    std::size_t differing = a == b ? 0 : 1;
    if (a == b) {
      for (const fs::path& f : a)
        if (io::read_text(opt.root / f) != io::read_text(o2.root / f)) ++differing;
    }
    report(criteria, "9 determinism", differing == 0 && !a.empty(),
           std::to_string(a.size()) + " report files, " + std::to_string(differing) + " differ");
  }

  {
    const double tr = reconstruction_mse(models.vocoder, ds.in(Partition::train));
    const double ho = reconstruction_mse(models.vocoder, ds.in(Partition::heldout));
    report(checks, "vocoder generalises", ho <= 2.0 * tr,
           "held-out MSE " + fmt(ho) + " vs train MSE " + fmt(tr));
    report(checks, "vocoder training loss fell tenfold",
           models.vocoder_report.final_loss * 10.0 <= models.vocoder_report.initial_loss,
           fmt(models.vocoder_report.initial_loss) + " -> " + fmt(models.vocoder_report.final_loss));
  }
  {
    Rng rng(95);
    std::vector<const Utterance*> eval = ds.evaluation();
    std::size_t wins = 0;
    for (const Utterance* u : eval) {
      const Utterance* other = u;
      while (other->speaker_id == u->speaker_id) other = eval[rng.below(eval.size())];
      const Tensor x = extract(models.extractor, u->signal);
      wins += cosine_distance(x, u->xvector) < cosine_distance(x, other->xvector) ? 1 : 0;
    }
    const double rate = static_cast<double>(wins) / static_cast<double>(eval.size());
    report(checks, "extractor discriminates speakers", rate >= 0.95, fmt(100.0 * rate, 4) + "% of eval utterances");
    EmbeddingMap extracted;
    for (const Utterance* u : eval) extracted[{u->speaker_id, u->utterance_id}] = extract(models.extractor, u->signal);
    const TrialList trials = build_trials(ds, cfg.evaluation.max_trials, cfg.evaluation.trial_seed);
    const double o = condition_eer(ds, trials, extracted, extracted, EnrollMode::matched);
    report(checks, "extracted original EER below 5%", o < 0.05, "EER " + fmt(o) + " with f(S) on both sides");
  }
  {
    bool positive = true, monotone = true;
    const auto& first = runs.begin()->second;
    for (std::size_t i = 0; i < first.size(); ++i) {
      positive = positive && target_distance(ds.at(first[i].key).xvector, first[i].pseudo.x_p) > 0.0;
      double prev = -1.0;
      for (const auto& [lambda, rs] : runs) {
        monotone = monotone && rs[i].target >= prev;
        prev = rs[i].target;
      }
    }
    report(checks, "pseudo-speakers differ from originals", positive, "d(x_o, x_p) > 0 for every eval utterance");
    report(checks, "target distance grows with lambda", monotone, "per utterance, across the sweep");
    const double pa = s.projected_spread.at(Condition::anonymised), pc = s.projected_spread.at(Condition::compensated);
    report(checks, "projected spread shrinks under compensation", pc < pa,
           "compensated " + fmt(pc) + " < anonymised " + fmt(pa));
  }

  std::sort(criteria.begin(), criteria.end(), [](const Outcome& a, const Outcome& b) { return a.name < b.name; });
  int failed = 0;
  for (const Outcome& o : criteria) failed += o.pass ? 0 : 1;
  std::ostringstream text;
  print(text, criteria);
  text << "supporting checks:\n";
  print(text, checks);
  text << "for reference, " << other_mode_line << '\n';
  text << criteria.size() - static_cast<std::size_t>(failed) << "/" << criteria.size() << " criteria passed\n";
  std::cout << text.str() << std::flush;
  io::write_text(report_path, text.str());
  if (!keep) fs::remove_all(out);
  return strict ? failed : 0;
}
