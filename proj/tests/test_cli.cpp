#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("hismatch_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }

  Run run(const std::string& args) const {
    const auto out = dir / "stdout.txt";
    const std::string cmd = std::string(HISMATCH_CLI) + " " + args + " > " + out.string() +
                            " 2> " + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(out);
    std::ostringstream os;
    os << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, os.str()};
  }
};

std::string last_field(const std::string& text, std::size_t line, std::size_t field) {
  std::istringstream in(text);
  std::string row;
  for (std::size_t i = 0; i <= line; ++i) std::getline(in, row);
  std::istringstream cells(row);
  std::string cell;
  for (std::size_t i = 0; i <= field; ++i) std::getline(cells, cell, ',');
  return cell;
}

}  // namespace

TEST_CASE("help lists subcommands and config keys") {
  Workspace w;
  const auto top = w.run("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"prepare", "synth", "train", "eval", "predict", "stats"}) {
    CHECK(top.out.find(sub) != std::string::npos);
  }
  const auto train = w.run("train --help");
  CHECK(train.code == 0);
  for (const char* key : {"--d_e", "--disable_time", "--lr", "--patience", "--composition"}) {
    CHECK(train.out.find(key) != std::string::npos);
  }
}

TEST_CASE("exit codes") {
  Workspace w;
  CHECK(w.run("").code == 1);
  CHECK(w.run("train --data " + w.dir.string()).code == 1);
  CHECK(w.run("prepare " + (w.dir / "missing").string()).code == 2);
  CHECK(w.run("synth spiral --out " + (w.dir / "x").string()).code == 1);
  CHECK(w.run("synth cyclic --out " + (w.dir / "d").string()).code == 0);
  CHECK(w.run("train --data " + (w.dir / "d").string() + " --run " +
              (w.dir / "r").string() + " --set no_such_key=1").code == 1);
  std::ofstream(w.dir / "bad.ckpt") << "garbage";
  CHECK(w.run("eval --data " + (w.dir / "d").string() + " --checkpoint " +
              (w.dir / "bad.ckpt").string()).code == 2);
}

TEST_CASE("synth, prepare, train, eval, predict and stats round trip") {
  Workspace w;
  const auto data = (w.dir / "cyc").string();
  const auto run = (w.dir / "run").string();
  REQUIRE(w.run("synth cyclic --entities 8 --timestamps 12 --valid 2 --test 2 --seed 3 --out " + data).code == 0);
  const auto prep = w.run("prepare " + data);
  REQUIRE(prep.code == 0);
  CHECK(prep.out.find("8 entities, 1 relations, 12 snapshots") != std::string::npos);
  CHECK(fs::exists(fs::path(data) / "snapshots.tsv"));

  REQUIRE(w.run("train --data " + data + " --run " + run +
                " --d_e 8 --d_t 4 --m 2 --n 2 --k 2 --kernels 3 --epochs 3 --lr 0.01"
                " --no-timing --quiet").code == 0);
  for (const char* f : {"config.txt", "manifest.txt", "metrics.csv", "best.ckpt"}) {
    CHECK(fs::exists(fs::path(run) / f));
  }
  std::ifstream manifest(fs::path(run) / "manifest.txt");
  std::string text((std::istreambuf_iterator<char>(manifest)), std::istreambuf_iterator<char>());
  CHECK(text.find("status: complete") != std::string::npos);
  CHECK(text.find("dataset_fingerprint: ") != std::string::npos);

  // The best validation MRR recorded by training is reproduced from disk.
  std::ifstream metrics(fs::path(run) / "metrics.csv");
  std::string csv((std::istreambuf_iterator<char>(metrics)), std::istreambuf_iterator<char>());
  const auto ckpt = (fs::path(run) / "best.ckpt").string();
  const auto ev = w.run("eval --data " + data + " --checkpoint " + ckpt + " --split valid");
  REQUIRE(ev.code == 0);
  CHECK(ev.out.rfind("split,filter,mrr,h1,h3,h10,queries\n", 0) == 0);
  const double eval_mrr = std::stod(last_field(ev.out, 1, 2));
  double best = 0.0;
  std::istringstream rows(csv);
  std::string row;
  std::getline(rows, row);
  while (std::getline(rows, row)) {
    if (row.find(",valid,") != std::string::npos) {
      best = std::max(best, std::stod(last_field(row, 0, 2)));
    }
  }
  CHECK(eval_mrr == best);

  const auto pred = w.run("predict --data " + data + " --checkpoint " + ckpt + " --topk 2");
  REQUIRE(pred.code == 0);
  std::istringstream lines(pred.out);
  std::string first;
  std::getline(lines, first);
  const auto j = nlohmann::json::parse(first);
  CHECK(j["topk"].size() == 2);
  CHECK(j["query"].size() == 3);

  const auto stats = w.run("stats --data " + data + " --split valid --split test");
  REQUIRE(stats.code == 0);
  CHECK(stats.out.rfind("dataset,split,mean_dt,mean_dt_prime,k\n", 0) == 0);
}
