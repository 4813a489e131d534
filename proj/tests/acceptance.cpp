// Prints one PASS/FAIL line per acceptance criterion.
//
//   acceptance [--strict] [--report FILE] [criterion ...]
//
// Names select criteria (default: all). The lines are also written to FILE.
// Exit status is nonzero when a criterion throws, or with --strict when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hismatch/checkpoint.hpp"
#include "hismatch/metrics.hpp"
#include "hismatch/synth.hpp"
#include "hismatch/trainer.hpp"
#include "testkit.hpp"

using namespace hismatch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum Status { kPass, kFail, kSkip } status = kFail;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Clock clock;
  constexpr double kEps = 1e-5, kTol = 1e-4;
  double worst_op = 0.0, worst_model = 0.0;
  std::string worst_op_name, worst_group;
  std::size_t kinds = 0, failures = 0;
  for (const auto& c : testkit::op_gradient_suite(20, kEps, 2024)) {
    ++kinds;
    if (c.cases != 20 || !(c.worst < kTol)) ++failures;
    if (c.worst >= worst_op) {
      worst_op = c.worst;
      worst_op_name = op_name(c.kind);
    }
  }
  std::set<std::string> groups;
  for (const auto& g : testkit::model_gradient_suite(kEps)) {
    groups.insert(g.name.substr(0, g.name.find('.')));
    if (!(g.worst < kTol)) ++failures;
    if (g.worst >= worst_model) {
      worst_model = g.worst;
      worst_group = g.name;
    }
  }
  const double secs = clock.seconds();
  const bool ok = failures == 0 && secs < 60.0;
  std::string group_list;
  for (const auto& g : groups) group_list += (group_list.empty() ? "" : ",") + g;
  return {ok ? Outcome::kPass : Outcome::kFail,
          std::to_string(kinds) + " op kinds x 20 cases, worst " + sci(worst_op) + " (" +
              worst_op_name + "); model groups {" + group_list + "}, worst " +
              sci(worst_model) + " (" + worst_group + "); " + std::to_string(failures) +
              " above 1e-4; " + num(secs, 1) + " s (limit 60)"};
}

Outcome extraction_oracle() {
  Clock clock;
  const auto r = testkit::extraction_oracle_suite(100, 77);
  const double secs = clock.seconds();
  const bool ok = r.datasets == 100 && r.mismatches == 0 && r.leaks == 0 &&
                  r.audited_reads > 0 && secs < 30.0;
  std::string detail = std::to_string(r.datasets) + " TKGs, " + std::to_string(r.checks) +
                       " comparisons, " + std::to_string(r.mismatches) + " mismatches, " +
                       std::to_string(r.audited_reads) + " audited reads, " +
                       std::to_string(r.leaks) + " leaks; " + num(secs, 2) + " s (limit 30)";
  if (!r.first_mismatch.empty()) detail += "; first: " + r.first_mismatch;
  return {ok ? Outcome::kPass : Outcome::kFail, detail};
}

// Toy data plus one extra test answer for (3, 0, ?, 3), so that query has
// two true objects.
TkgDataset fixture_dataset() {
  TkgDataset ds;
  ds.name = "fixture";
  ds.num_entities = 5;
  ds.num_base_relations = 3;
  ds.split(Split::kTrain) = {{0, 0, 1, 0}, {1, 1, 2, 0}, {2, 2, 3, 0},
                             {0, 0, 2, 1}, {3, 1, 4, 1}, {4, 2, 0, 1}};
  ds.split(Split::kValid) = {{0, 0, 4, 2}};
  ds.split(Split::kTest) = {{3, 0, 0, 3}, {3, 0, 2, 3}, {1, 1, 3, 3}};
  ds = augment_inverse(std::move(ds));
  build_snapshots(ds);
  return ds;
}

Outcome metric_fixtures() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto r = summarize_ranks({1, 2, 4});
  expect(r.mrr == (1.0 + 0.5 + 0.25) / 3.0 && std::abs(r.mrr - 7.0 / 12.0) < 1e-15,
         "MRR of [1,2,4]");
  const std::vector<double> scores{0.9, 0.8, 0.1, 0.3};
  const std::vector<std::size_t> truth{0, 1};
  expect(rank_with_filter(scores, 1, {}) == 2.0, "raw rank 2");
  expect(rank_with_filter(scores, 1, truth) == 1.0, "filtered rank 1");

  // evaluate(): with a zero output layer every logit is 0, so each target
  // ties with every unfiltered candidate: rank = 1 + (unfiltered others) / 2.
  const auto ds = fixture_dataset();
  auto cfg = testkit::toy_config();
  cfg.disable_candidate = true;
  auto state = ModelState::create(cfg, ds.num_entities, ds.num_relations(), 1);
  for (auto& v : state.out_weight->tensor.values()) v = 0.0;
  for (auto& v : state.out_bias->tensor.values()) v = 0.0;
  const auto filt = evaluate(ds, state, Split::kTest, FilterMode::kTimeAware);
  const auto raw = evaluate(ds, state, Split::kTest, FilterMode::kRaw);
  // Queries: (3,0,?,3) x2 -> 2.5 filtered / 3 raw; (1,1,?,3) -> 3; inverse
  // queries (0,3,?,3), (2,3,?,3), (3,4,?,3) each have one answer -> 3.
  const std::vector<double> want_filt{2.5, 2.5, 3, 3, 3, 3};
  const std::vector<double> want_raw{3, 3, 3, 3, 3, 3};
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  expect(sorted(filt.ranks) == want_filt, "evaluate time-aware ranks");
  expect(sorted(raw.ranks) == want_raw, "evaluate raw ranks");
  expect(filt.mrr == summarize_ranks(filt.ranks).mrr, "evaluate MRR");

  std::mt19937_64 rng(99);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(50);
    for (auto& v : s) v = static_cast<double>(rng() % 20) / 20.0;
    const std::size_t target = rng() % s.size();
    std::vector<std::size_t> f;
    for (std::size_t e = 0; e < s.size(); ++e) {
      if (rng() % 4 == 0) f.push_back(e);
    }
    if (rank_with_filter(s, target, f) > rank_with_filter(s, target, {})) ++violations;
  }
  expect(violations == 0, "filtered <= raw");

  std::string detail = "MRR([1,2,4]) = " + num(r.mrr, 6) + "; raw 2 -> filtered 1; evaluate ranks " +
                       "match tie fixture (MRR " + num(filt.mrr, 6) + "); " +
                       std::to_string(violations) + "/1000 filtered > raw";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty() ? Outcome::kPass : Outcome::kFail, detail};
}

// ---------------------------------------------------------------------------

SynthParams cyclic_params(std::uint64_t seed) {
  SynthParams p;
  p.kind = SynthKind::kCyclic;
  p.seed = seed;
  p.entities = 20;
  p.period = 2;
  p.timestamps = 30;
  p.test = 5;
  p.valid = 3;
  return p;
}

TrainConfig cyclic_config(std::uint64_t seed) {
  auto c = profile_config("ICEWS14");
  c.epochs = 200;
  c.patience = 10;
  c.seed = seed;
  return c;
}

double test_mrr(const TrainResult& r) { return r.log.back().mrr; }

TrainResult run_quiet(const TkgDataset& ds, const TrainConfig& c, bool timing = true) {
  TrainOptions opt;
  opt.record_seconds = timing;
  return train(ds, c, opt);
}

Outcome synthetic_overfit() {
  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    Clock clock;
    const auto ds = load_synthetic(cyclic_params(seed));
    const auto r = run_quiet(ds, cyclic_config(seed));
    const double secs = clock.seconds();
    const double mrr = test_mrr(r);
    ok &= mrr >= 0.95 && r.epochs_run <= 200 && secs < 300.0;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) +
              ": test MRR " + num(mrr) + " (best epoch " + std::to_string(r.best_epoch) +
              ", " + std::to_string(r.epochs_run) + " run, " + num(secs, 1) + " s)";
    progress("cyclic seed " + std::to_string(seed) + " mrr " + num(mrr));
  }
  return {ok ? Outcome::kPass : Outcome::kFail, detail + "; need >= 0.95, < 300 s each"};
}

SynthParams parity_params(std::uint64_t seed) {
  SynthParams p;
  p.kind = SynthKind::kParity;
  p.seed = seed;
  p.timestamps = 160;
  p.valid = 10;
  p.test = 20;
  p.subjects = 4;
  p.set_size = 3;
  p.gap_min = 2;
  p.gap_max = 3;
  return p;
}

TrainConfig parity_config(std::uint64_t seed, bool disable_time) {
  TrainConfig c;
  c.d_e = 32;
  c.d_t = 16;
  c.m = 2;
  c.n = 1;
  c.k = 1;
  c.lr = 3e-3;
  c.epochs = 100;
  c.patience = 30;
  c.seed = seed;
  c.disable_time = disable_time;
  return c;
}

Outcome time_ablation() {
  double full = 0.0, ablated = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = load_synthetic(parity_params(seed));
    const double a = test_mrr(run_quiet(ds, parity_config(seed, false)));
    const double b = test_mrr(run_quiet(ds, parity_config(seed, true)));
    full += a / 5.0;
    ablated += b / 5.0;
    per_seed += " " + num(a, 3) + "/" + num(b, 3);
    progress("parity seed " + std::to_string(seed) + " full " + num(a) + " no-time " + num(b));
  }
  const double gap = full - ablated;
  return {gap >= 0.10 ? Outcome::kPass : Outcome::kFail,
          "mean test MRR full " + num(full) + " vs disable_time " + num(ablated) + ", gap " +
              num(gap) + " (need >= 0.10); per seed full/no-time:" + per_seed};
}

std::size_t gru_count(std::size_t in, std::size_t d) { return 3 * in * d + 3 * d * d + 3 * d; }

// Documented change in parameter count for each toggle, relative to the full
// model.
long documented_delta(const std::string& toggle, const TrainConfig& c, std::size_t E) {
  const long d = static_cast<long>(c.d_e), dt = static_cast<long>(c.d_t);
  const long in = d + dt, e = static_cast<long>(E);
  if (toggle == "disable_time") return -(2 * dt + 2 * 3 * dt * d);
  if (toggle == "disable_background") return -static_cast<long>(c.omega2) * 2 * d * d;
  if (toggle == "disable_query") return -static_cast<long>(gru_count(in, d) + d);
  if (toggle == "disable_candidate") {
    return -static_cast<long>(c.omega1 * 2 * d * d + gru_count(in, d)) + d * e + e;
  }
  return 0;
}

Outcome ablation_wiring() {
  const auto ds = load_synthetic(cyclic_params(1));
  const auto base = cyclic_config(1);
  const auto full_count = static_cast<long>(
      ModelState::create(base, ds.num_entities, ds.num_relations(), 1).parameter_count());
  bool ok = true;
  std::string detail = "full " + std::to_string(full_count) + " params";
  double full_mrr = 0.0;
  std::vector<std::pair<std::string, double>> mrrs;
  for (const std::string toggle :
       {"none", "disable_time", "disable_background", "disable_query", "disable_candidate"}) {
    auto c = base;
    if (toggle != "none") c.set(toggle, "true");
    const auto count = static_cast<long>(
        ModelState::create(c, ds.num_entities, ds.num_relations(), 1).parameter_count());
    const long delta = count - full_count;
    const bool count_ok = delta == documented_delta(toggle, c, ds.num_entities);
    ok &= count_ok;
    double mrr = -1.0;
    try {
      mrr = test_mrr(run_quiet(ds, c));
    } catch (const std::exception& e) {
      ok = false;
      detail += "; " + toggle + " threw: " + e.what();
    }
    ok &= std::isfinite(mrr) && mrr >= 0.0;
    if (toggle == "none") {
      full_mrr = mrr;
    } else {
      detail += "; " + toggle + " " + (delta >= 0 ? "+" : "") + std::to_string(delta) +
                (count_ok ? " (as documented)" : " (MISMATCH)") + ", MRR " + num(mrr);
    }
    mrrs.emplace_back(toggle, mrr);
    progress("wiring " + toggle + " mrr " + num(mrr));
  }
  detail += "; full MRR " + num(full_mrr);
  for (const auto& [toggle, mrr] : mrrs) {
    if (toggle == "disable_time" || toggle == "disable_candidate") {
      const bool degraded = mrr < full_mrr;
      ok &= degraded;
      detail += "; " + toggle + (degraded ? " degrades" : " does not degrade");
    }
  }
  return {ok ? Outcome::kPass : Outcome::kFail, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() /
                   ("hismatch_accept_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  const auto ds = load_synthetic(cyclic_params(4));
  auto c = cyclic_config(4);
  c.epochs = 2;
  const auto a = run_quiet(ds, c, false);
  const auto b = run_quiet(ds, c, false);
  write_metrics_csv(dir / "a.csv", a.log);
  write_metrics_csv(dir / "b.csv", b.log);
  const bool same_csv = slurp(dir / "a.csv") == slurp(dir / "b.csv");

  auto best = a.state;
  save_checkpoint(best, {c.seed, a.best_epoch, a.best_valid_mrr}, dir / "best.ckpt");
  auto loaded = load_checkpoint(dir / "best.ckpt", ds.num_entities, ds.num_relations());
  const double reloaded = evaluate(ds, loaded.state, Split::kValid).mrr;
  const bool same_mrr = reloaded == a.best_valid_mrr && loaded.meta.valid_mrr == a.best_valid_mrr;
  fs::remove_all(dir);
  std::ostringstream os;
  os << std::setprecision(17) << "metrics CSVs " << (same_csv ? "identical" : "DIFFER") << " ("
     << a.log.size() << " rows); recorded valid MRR " << a.best_valid_mrr
     << ", reloaded " << reloaded;
  return {same_csv && same_mrr ? Outcome::kPass : Outcome::kFail, os.str()};
}

fs::path icews14_dir() {
  if (const char* env = std::getenv("HISMATCH_ICEWS14")) return env;
  for (const fs::path p : {"data/ICEWS14", "../data/ICEWS14", "../../data/ICEWS14"}) {
    if (fs::exists(p / "train.txt")) return p;
  }
  return {};
}

Outcome icews14_smoke() {
  const auto dir = icews14_dir();
  if (dir.empty() || !fs::exists(dir / "train.txt")) {
    return {Outcome::kSkip,
            "ICEWS14 files not found (set HISMATCH_ICEWS14 or provide data/ICEWS14); "
            "documented full-scale target MRR 46.42, H@1 35.91, H@3 51.63, H@10 66.84"};
  }
  Clock clock;
  const auto ds = load_dataset(dir);
  auto c = profile_config("ICEWS14");
  c.epochs = 2;
  c.patience = 10;
  TrainOptions opt;
  opt.max_train_timestamps = 30;
  opt.evaluate_test = false;
  opt.on_epoch = [](const EpochRecord& r) {
    progress("icews14 epoch " + std::to_string(r.epoch) + " loss " + num(r.loss));
  };
  auto r = train(ds, c, opt);
  const double l1 = r.log.at(0).loss, l2 = r.log.at(1).loss;
  const double drop = (l1 - l2) / l1;
  const auto rep = evaluate(ds, r.state, Split::kValid);
  const bool finite = std::isfinite(rep.mrr) && std::isfinite(rep.hits1) &&
                      std::isfinite(rep.hits3) && std::isfinite(rep.hits10) && !rep.ranks.empty();
  const double secs = clock.seconds();
  return {drop >= 0.20 && finite && secs < 1200.0 ? Outcome::kPass : Outcome::kFail,
          "loss " + num(l1) + " -> " + num(l2) + " (" + num(100 * drop, 1) +
              "% decrease, need >= 20%); valid MRR " + num(rep.mrr) + "; " + num(secs, 0) +
              " s (limit 1200)"};
}

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"gradient-suite", gradient_suite},
      {"extraction-oracle", extraction_oracle},
      {"metric-fixtures", metric_fixtures},
      {"synthetic-overfit", synthetic_overfit},
      {"time-ablation", time_ablation},
      {"ablation-wiring", ablation_wiring},
      {"determinism", determinism},
      {"icews14-smoke", icews14_smoke},
  };
  std::set<std::string> only;
  bool strict = false;
  std::string report_path;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--strict") {
      strict = true;
    } else if (arg == "--report" && i + 1 < argc) {
      report_path = argv[++i];
    } else {
      only.insert(arg);
    }
  }
  std::ostringstream report;
  int failures = 0, errors = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::kFail, std::string("threw: ") + e.what()};
      ++errors;
    }
    const char* tag = o.status == Outcome::kPass ? "PASS" : o.status == Outcome::kSkip ? "SKIP" : "FAIL";
    if (o.status == Outcome::kFail) ++failures;
    const std::string line = std::string(tag) + " " + c.name + ": " + o.detail;
    std::cout << line << std::endl;
    report << line << '\n';
  }
  if (!report_path.empty()) write_file_atomic(report_path, report.str());
  if (errors > 0) return 2;
  return strict && failures > 0 ? 1 : 0;
}
