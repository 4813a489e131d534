#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hismatch/checkpoint.hpp"
#include "hismatch/config.hpp"
#include "hismatch/dataset.hpp"
#include "hismatch/history.hpp"
#include "hismatch/synth.hpp"
#include "hismatch/trainer.hpp"

namespace fs = std::filesystem;
using namespace hismatch;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Layered config: built-in defaults or --profile, then --config file, then
// per-key flags, then --set key=value in order.
struct ConfigArgs {
  std::string profile;
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--profile", profile, "dataset profile (" + profiles() + ")");
    app.add_option("--config", file, "key=value config file")
        ->check(CLI::ExistingFile);
    app.add_option("--set", sets, "override one config key (key=value)");
    const TrainConfig defaults;
    for (const auto& key : config_keys()) {
      options[key.name] = app.add_option("--" + key.name, flags[key.name], key.help)
                              ->default_str(defaults.get(key.name))
                              ->group("Config keys");
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg = profile.empty() ? TrainConfig{} : profile_config(profile);
    if (!file.empty()) {
      std::ifstream in(file);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg.apply(ss.str());
    }
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) cfg.set(name, flags.at(name));
    }
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        throw UsageError("--set expects key=value, got '" + kv + "'");
      }
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }

  static std::string profiles() {
    std::string out;
    for (const auto& p : profile_names()) out += (out.empty() ? "" : ", ") + p;
    return out;
  }
};

// Help text listing every config key and its default, for subcommands whose
// model settings come from elsewhere.
std::string config_footer(const std::string& lead) {
  const TrainConfig defaults;
  std::ostringstream os;
  os << lead << "\nConfig keys (defaults):\n";
  for (const auto& key : config_keys()) {
    os << "  " << std::left << std::setw(20) << key.name << std::setw(10)
       << defaults.get(key.name) << key.help << "\n";
  }
  return os.str();
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

ParseOptions parse_options(std::int64_t granularity) {
  ParseOptions opts;
  if (granularity > 0) opts.granularity = granularity;
  return opts;
}

// prepare ------------------------------------------------------------------

struct PrepareArgs {
  std::string data;
  std::string out;
  std::int64_t granularity = 0;
};

int cmd_prepare(const PrepareArgs& a) {
  auto ds = load_dataset(a.data, parse_options(a.granularity));
  const fs::path out = a.out.empty() ? fs::path(a.data) : fs::path(a.out);
  std::ostringstream idx;
  idx << "snapshot\traw_time\tfacts\n";
  for (std::size_t t = 0; t < ds.snapshots.size(); ++t) {
    idx << t << '\t' << ds.time_origin + static_cast<std::int64_t>(t) * ds.time_granularity
        << '\t' << ds.snapshots[t].edges().size() / 2 << '\n';
  }
  write_file_atomic(out / "snapshots.tsv", idx.str());
  std::cout << ds.num_entities << " entities, " << ds.num_base_relations
            << " relations, " << ds.num_timestamps() << " snapshots\n"
            << "facts: train " << ds.split(Split::kTrain).size() / 2 << ", valid "
            << ds.split(Split::kValid).size() / 2 << ", test "
            << ds.split(Split::kTest).size() / 2 << "\n"
            << "granularity " << ds.time_granularity << ", origin " << ds.time_origin
            << "\nfingerprint " << hex(dataset_fingerprint(ds)) << "\n"
            << "snapshot index: " << (out / "snapshots.tsv").string() << "\n";
  return kOk;
}

// synth --------------------------------------------------------------------

struct SynthArgs {
  std::string kind = "cyclic";
  std::string out;
  SynthParams params;
};

int cmd_synth(SynthArgs a) {
  a.params.kind = parse_synth_kind(a.kind);
  write_synthetic(a.params, a.out);
  std::cout << "wrote " << synth_name(a.params.kind) << " dataset to " << a.out << "\n";
  return kOk;
}

// train --------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string run;
  std::int64_t granularity = 0;
  std::size_t max_train_timestamps = 0;
  bool skip_test = false;
  bool no_timing = false;
  bool quiet = false;
};

std::string manifest_text(const TrainArgs& a, const std::string& config_file,
                          const TrainConfig& cfg, std::uint64_t fingerprint,
                          const std::string& started, const std::string& finished,
                          const std::string& status) {
  std::ostringstream os;
  os << "config_file: " << (config_file.empty() ? "-" : config_file) << "\n"
     << "data_dir: " << a.data << "\n"
     << "dataset_fingerprint: " << hex(fingerprint) << "\n"
     << "output_dir: " << a.run << "\n"
     << "started: " << started << "\n"
     << "finished: " << (finished.empty() ? "-" : finished) << "\n"
     << "status: " << status << "\n"
     << "config:\n";
  std::istringstream lines(cfg.to_string());
  for (std::string line; std::getline(lines, line);) os << "  " << line << "\n";
  return os.str();
}

int cmd_train(const TrainArgs& a, const ConfigArgs& c) {
  const auto cfg = c.resolve();
  const auto ds = load_dataset(a.data, parse_options(a.granularity));
  const fs::path run(a.run);
  fs::create_directories(run);
  const auto fingerprint = dataset_fingerprint(ds);
  const auto started = now_utc();
  write_file_atomic(run / "config.txt", cfg.to_string());
  write_file_atomic(run / "manifest.txt",
                    manifest_text(a, c.file, cfg, fingerprint, started, "", "running"));

  TrainOptions opts;
  opts.max_train_timestamps = a.max_train_timestamps;
  opts.evaluate_test = !a.skip_test;
  opts.record_seconds = !a.no_timing;
  std::vector<EpochRecord> log;
  opts.on_epoch = [&](const EpochRecord& r) {
    log.push_back(r);
    write_metrics_csv(run / "metrics.csv", log);
    if (!a.quiet) {
      std::cerr << "epoch " << r.epoch << " " << r.split << " mrr=" << r.mrr
                << " h1=" << r.hits1 << " h3=" << r.hits3 << " h10=" << r.hits10
                << " loss=" << r.loss << "\n";
    }
  };
  TrainResult result;
  try {
    result = train(ds, cfg, opts);
  } catch (const NumericError&) {
    write_file_atomic(run / "manifest.txt",
                      manifest_text(a, c.file, cfg, fingerprint, started, now_utc(),
                                    "failed: non-finite loss"));
    throw;
  }
  save_checkpoint(result.state,
                  {cfg.seed, result.best_epoch, result.best_valid_mrr},
                  run / "best.ckpt");
  write_metrics_csv(run / "metrics.csv", result.log);
  write_file_atomic(run / "manifest.txt",
                    manifest_text(a, c.file, cfg, fingerprint, started, now_utc(),
                                  "complete"));
  std::cout << "best epoch " << result.best_epoch << ", valid mrr "
            << fmt(result.best_valid_mrr) << "\n";
  return kOk;
}

// eval / predict -----------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string split = "test";
  std::string filter = "time-aware";
  std::string out;
  std::int64_t granularity = 0;
  std::size_t workers = 1;
  std::size_t topk = 3;
};

Checkpoint load_for(const TkgDataset& ds, const EvalArgs& a) {
  auto ck = load_checkpoint(a.checkpoint, ds.num_entities, ds.num_relations());
  ck.state.config.workers = a.workers;
  return ck;
}

int cmd_eval(const EvalArgs& a) {
  const auto ds = load_dataset(a.data, parse_options(a.granularity));
  auto ck = load_for(ds, a);
  const auto report =
      evaluate(ds, ck.state, parse_split(a.split), parse_filter(a.filter), a.workers);
  std::ostringstream os;
  os << "split,filter,mrr,h1,h3,h10,queries\n"
     << report.split << ',' << filter_name(report.filter) << ',' << fmt(report.mrr)
     << ',' << fmt(report.hits1) << ',' << fmt(report.hits3) << ','
     << fmt(report.hits10) << ',' << report.ranks.size() << '\n';
  if (!a.out.empty()) write_file_atomic(a.out, os.str());
  std::cout << os.str();
  return kOk;
}

int cmd_predict(const EvalArgs& a) {
  if (a.topk == 0) throw UsageError("--topk must be >= 1");
  const auto ds = load_dataset(a.data, parse_options(a.granularity));
  auto ck = load_for(ds, a);
  std::ostringstream os;
  for (const auto& p : predict(ds, ck.state, parse_split(a.split), a.topk)) {
    nlohmann::json j;
    j["query"] = {p.query.subject, p.query.relation, p.query.timestamp};
    j["answer"] = p.query.object;
    j["topk"] = nlohmann::json::array();
    for (const auto& [entity, score] : p.topk) j["topk"].push_back({entity, score});
    os << j.dump() << '\n';
  }
  if (a.out.empty()) {
    std::cout << os.str();
  } else {
    write_file_atomic(a.out, os.str());
  }
  return kOk;
}

// stats --------------------------------------------------------------------

struct StatsArgs {
  std::string data;
  std::string name;
  std::vector<std::string> splits{"test"};
  std::string out;
  std::int64_t granularity = 0;
};

int cmd_stats(const StatsArgs& a, const ConfigArgs& c) {
  const auto cfg = c.resolve();
  const auto ds = load_dataset(a.data, parse_options(a.granularity));
  const std::string name =
      a.name.empty() ? fs::path(a.data).lexically_normal().filename().string() : a.name;
  std::ostringstream os;
  os << "dataset,split,mean_dt,mean_dt_prime,k\n";
  for (const auto& s : a.splits) {
    const auto st = history_interval_stats(ds, cfg.m, cfg.n, cfg.k, parse_split(s),
                                           cfg.history_window);
    os << name << ',' << s << ',' << fmt(st.mean_dt) << ',' << fmt(st.mean_dt_prime)
       << ',' << st.k << '\n';
  }
  if (!a.out.empty()) write_file_atomic(a.out, os.str());
  std::cout << os.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HiSMatch temporal knowledge graph reasoning"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "validate a dataset and index its snapshots");
  PrepareArgs prep;
  ConfigArgs prep_cfg;
  prepare->add_option("data", prep.data, "directory with train/valid/test/stat.txt")
      ->required();
  prepare->add_option("--out", prep.out, "where to write snapshots.tsv (default: data dir)");
  prepare->add_option("--granularity", prep.granularity,
                      "raw time units per snapshot (default: inferred)");
  prep_cfg.attach(*prepare);

  auto* synth = app.add_subcommand("synth", "generate a synthetic temporal KG");
  SynthArgs syn;
  synth->add_option("kind", syn.kind, "cyclic, parity or random")
      ->check(CLI::IsMember({"cyclic", "parity", "random"}))
      ->capture_default_str();
  synth->add_option("--out", syn.out, "output directory")->required();
  auto& sp = syn.params;
  synth->add_option("--seed", sp.seed, "generator seed")->capture_default_str();
  synth->add_option("--timestamps", sp.timestamps, "number of timestamps")
      ->capture_default_str();
  synth->add_option("--valid", sp.valid, "validation timestamps")->capture_default_str();
  synth->add_option("--test", sp.test, "test timestamps")->capture_default_str();
  synth->add_option("--entities", sp.entities, "entities (cyclic, random)")
      ->capture_default_str();
  synth->add_option("--period", sp.period, "cycle period (cyclic)")->capture_default_str();
  synth->add_option("--subjects", sp.subjects, "subjects (parity)")->capture_default_str();
  synth->add_option("--set-size", sp.set_size, "objects per parity set (parity)")
      ->capture_default_str();
  synth->add_option("--gap-min", sp.gap_min, "smallest event gap (parity)")
      ->capture_default_str();
  synth->add_option("--gap-max", sp.gap_max, "largest event gap (parity)")
      ->capture_default_str();
  synth->add_option("--relations", sp.relations, "relations (random)")
      ->capture_default_str();
  synth->add_option("--facts", sp.facts, "facts per timestamp (random)")
      ->capture_default_str();
  synth->footer(config_footer("Training settings are given to the train subcommand."));

  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
  TrainArgs tr;
  ConfigArgs tr_cfg;
  train_cmd->add_option("--data", tr.data, "dataset directory")->required();
  train_cmd->add_option("--run", tr.run, "run directory for all outputs")->required();
  train_cmd->add_option("--granularity", tr.granularity,
                        "raw time units per snapshot (default: inferred)");
  train_cmd->add_option("--max-train-timestamps", tr.max_train_timestamps,
                        "train on the first N training timestamps only (0 = all)");
  train_cmd->add_flag("--skip-test", tr.skip_test, "do not evaluate the test split");
  train_cmd->add_flag("--no-timing", tr.no_timing,
                      "write 0 in the seconds column (reproducible logs)");
  train_cmd->add_flag("--quiet", tr.quiet, "no per-epoch progress on stderr");
  tr_cfg.attach(*train_cmd);

  auto add_eval_options = [](CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("--data", a.data, "dataset directory")->required();
    cmd->add_option("--checkpoint", a.checkpoint, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--split", a.split, "train, valid or test")->capture_default_str();
    cmd->add_option("--out", a.out, "output file (default: stdout only)");
    cmd->add_option("--granularity", a.granularity,
                    "raw time units per snapshot (default: inferred)");
    cmd->add_option("--workers", a.workers, "evaluation threads")->capture_default_str();
  };
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  EvalArgs ev;
  add_eval_options(eval_cmd, ev);
  eval_cmd->add_option("--filter", ev.filter, "time-aware or raw")->capture_default_str();
  eval_cmd->footer(config_footer("Model settings are read from the checkpoint."));

  auto* predict_cmd = app.add_subcommand("predict", "top-k predictions as JSON lines");
  EvalArgs pr;
  add_eval_options(predict_cmd, pr);
  predict_cmd->add_option("--topk", pr.topk, "candidates per query")->capture_default_str();
  predict_cmd->footer(config_footer("Model settings are read from the checkpoint."));

  auto* stats_cmd = app.add_subcommand("stats", "history interval statistics as CSV");
  StatsArgs st;
  ConfigArgs st_cfg;
  stats_cmd->add_option("--data", st.data, "dataset directory")->required();
  stats_cmd->add_option("--name", st.name, "dataset column (default: directory name)");
  stats_cmd->add_option("--split", st.splits, "splits to report")->capture_default_str();
  stats_cmd->add_option("--out", st.out, "output CSV (default: stdout only)");
  stats_cmd->add_option("--granularity", st.granularity,
                        "raw time units per snapshot (default: inferred)");
  st_cfg.attach(*stats_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) return cmd_prepare(prep);
    if (*synth) return cmd_synth(syn);
    if (*train_cmd) return cmd_train(tr, tr_cfg);
    if (*eval_cmd) return cmd_eval(ev);
    if (*predict_cmd) return cmd_predict(pr);
    if (*stats_cmd) return cmd_stats(st, st_cfg);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
