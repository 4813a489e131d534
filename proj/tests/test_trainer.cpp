#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hismatch/checkpoint.hpp"
#include "hismatch/synth.hpp"
#include "hismatch/trainer.hpp"
#include "testkit.hpp"

using namespace hismatch;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hismatch_trainer_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::size_t gru_count(std::size_t in, std::size_t d) { return 3 * in * d + 3 * d * d + 3 * d; }

// Closed-form parameter count of each ablation variant.
std::size_t expected_count(const TrainConfig& c, std::size_t E, std::size_t R) {
  const std::size_t d = c.d_e, dt = c.disable_time ? 0 : c.d_t, in = d + dt;
  std::size_t n = E * d + R * d + 2 * dt;
  if (!c.disable_background) n += c.omega2 * 2 * d * d;
  if (!c.disable_candidate) n += c.omega1 * 2 * d * d + gru_count(in, d);
  if (!c.disable_query) n += gru_count(in, d) + d;
  n += c.kernels * 2 * c.kernel_width + c.kernels + c.kernels * d * d + d;
  if (c.disable_candidate) n += d * E + E;
  return n;
}

SynthParams small_cyclic() {
  SynthParams p;
  p.timestamps = 12;
  p.valid = 2;
  p.test = 2;
  p.entities = 8;
  return p;
}

TrainConfig small_config() {
  auto c = testkit::toy_config();
  c.d_e = 8;
  c.epochs = 3;
  c.lr = 1e-2;
  return c;
}

}  // namespace

TEST_CASE("parameter counts follow the closed form for every ablation") {
  for (int mask = 0; mask < 16; ++mask) {
    auto c = testkit::toy_config();
    c.disable_time = mask & 1;
    c.disable_background = mask & 2;
    c.disable_query = mask & 4;
    c.disable_candidate = mask & 8;
    if (c.disable_query && c.disable_candidate) {
      CHECK_THROWS_AS(c.validate(), std::invalid_argument);
      continue;
    }
    auto s = ModelState::create(c, 5, 6, 1);
    std::size_t listed = 0;
    for (const auto& np : s.parameters()) listed += np.param->size();
    CAPTURE(mask);
    CHECK(s.parameter_count() == expected_count(c, 5, 6));
    CHECK(listed == s.parameter_count());
  }
}

TEST_CASE("ablation switches remove exactly their parameter groups") {
  auto c = testkit::toy_config();
  auto has = [](ModelState& s, std::string_view prefix) {
    for (const auto& np : s.parameters()) {
      if (np.name.rfind(prefix, 0) == 0) return true;
    }
    return false;
  };
  auto full = ModelState::create(c, 5, 6, 1);
  CHECK(full.time_unit);
  CHECK_FALSE(full.out_weight);
  CHECK(full.gru_input_dim() == c.d_e + c.d_t);
  c.disable_time = true;
  auto no_time = ModelState::create(c, 5, 6, 1);
  CHECK_FALSE(no_time.time_unit);
  CHECK(no_time.gru_input_dim() == c.d_e);
  c = testkit::toy_config();
  c.disable_candidate = true;
  auto no_cand = ModelState::create(c, 5, 6, 1);
  CHECK(no_cand.out_weight);
  CHECK(has(no_cand, "decoder.out_"));
  CHECK_FALSE(no_cand.candidate_gru);
  CHECK(no_cand.candidate.layers() == 0);
}

TEST_CASE("same seed, same initial parameters") {
  const auto c = testkit::toy_config();
  auto a = ModelState::create(c, 5, 6, 9);
  auto b = ModelState::create(c, 5, 6, 9);
  auto d = ModelState::create(c, 5, 6, 10);
  const auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].param->tensor.values(), vb = pb[i].param->tensor.values(),
               vd = pd[i].param->tensor.values();
    all_same &= std::equal(va.begin(), va.end(), vb.begin());
    any_diff |= !std::equal(va.begin(), va.end(), vd.begin());
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("time parameters start at the log-spaced frequencies") {
  auto c = testkit::toy_config();
  auto s = ModelState::create(c, 5, 6, 1);
  for (std::size_t i = 0; i < c.d_t; ++i) {
    CHECK(s.time_unit->tensor[i] ==
          Approx(std::pow(10.0, -9.0 * static_cast<double>(i) / static_cast<double>(c.d_t - 1))));
    CHECK(s.time_bias->tensor[i] == 0.0);
  }
}

TEST_CASE("config round trip, validation and profiles") {
  TrainConfig c;
  c.set("d_e", "64");
  c.set("composition", "mult");
  c.set("disable_time", "true");
  c.set("lr", "0.25");
  CHECK(c.get("d_e") == "64");
  CHECK(c.get("lr") == "0.25");
  const auto back = TrainConfig::from_string(c.to_string());
  CHECK(back.to_string() == c.to_string());
  CHECK(back.composition == Composition::kMultiply);
  CHECK_THROWS_AS(c.set("nope", "1"), std::invalid_argument);
  CHECK_THROWS_AS(c.set("d_e", "lots"), std::invalid_argument);
  c.dropout = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.kernel_width = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  const auto icews14 = profile_config("ICEWS14");
  CHECK(icews14.d_e == 128);
  CHECK(icews14.lr == 1e-3);
  for (const auto& name : profile_names()) CHECK_NOTHROW(profile_config(name).validate());
  CHECK_THROWS_AS(profile_config("YAGO"), std::invalid_argument);
  CHECK(config_keys().size() >= 20);

  TrainConfig layered;
  layered.apply("# comment\nm = 3\n\nk=2\n");
  CHECK(layered.m == 3);
  CHECK(layered.k == 2);
  // History lengths do not change any parameter shape; layer counts do.
  CHECK(layered.shape_fingerprint(5, 6) == TrainConfig{}.shape_fingerprint(5, 6));
  layered.apply("omega1=3");
  CHECK(layered.shape_fingerprint(5, 6) != TrainConfig{}.shape_fingerprint(5, 6));
  CHECK(layered.shape_fingerprint(5, 6) != layered.shape_fingerprint(6, 6));
}

TEST_CASE("first-step loss is close to ln |E|") {
  auto p = small_cyclic();
  p.entities = 20;
  const auto ds = load_synthetic(p);
  auto c = small_config();
  c.epochs = 1;
  double first = -1.0;
  TrainOptions opt;
  opt.evaluate_test = false;
  opt.on_step = [&](std::size_t, std::size_t, double loss) {
    if (first < 0) first = loss;
  };
  train(ds, c, opt);
  CHECK(first == Approx(std::log(20.0)).epsilon(0.2));
}

TEST_CASE("training lowers the loss and logs one row per epoch plus test") {
  const auto ds = load_synthetic(small_cyclic());
  auto c = small_config();
  c.epochs = 6;
  c.patience = 100;
  TrainOptions opt;
  opt.record_seconds = false;
  const auto r = train(ds, c, opt);
  REQUIRE(r.log.size() == 7);
  CHECK(r.log.back().split == "test");
  CHECK(r.log.back().epoch == r.best_epoch);
  CHECK(r.log[5].loss < r.log[0].loss);
  CHECK(r.best_valid_mrr == Approx(r.log[r.best_epoch - 1].mrr));
  for (const auto& rec : r.log) CHECK(rec.seconds == 0.0);
}

TEST_CASE("identical runs give byte-identical metrics") {
  const auto ds = load_synthetic(small_cyclic());
  const auto c = small_config();
  TrainOptions opt;
  opt.record_seconds = false;
  TempDir dir;
  write_metrics_csv(dir.path / "a.csv", train(ds, c, opt).log);
  write_metrics_csv(dir.path / "b.csv", train(ds, c, opt).log);
  CHECK(slurp(dir.path / "a.csv") == slurp(dir.path / "b.csv"));
  CHECK(slurp(dir.path / "a.csv").rfind("epoch,split,mrr,h1,h3,h10,loss,seconds\n", 0) == 0);
}

TEST_CASE("evaluation does not depend on the worker count") {
  const auto ds = load_synthetic(small_cyclic());
  auto state = ModelState::create(small_config(), ds.num_entities, ds.num_relations(), 4);
  const auto one = evaluate(ds, state, Split::kTest, FilterMode::kTimeAware, 1);
  const auto three = evaluate(ds, state, Split::kTest, FilterMode::kTimeAware, 3);
  CHECK(one.ranks == three.ranks);
  const auto raw = evaluate(ds, state, Split::kTest, FilterMode::kRaw, 1);
  REQUIRE(raw.ranks.size() == one.ranks.size());
  for (std::size_t i = 0; i < raw.ranks.size(); ++i) CHECK(one.ranks[i] <= raw.ranks[i]);
  // Object plus inverse subject queries for every test fact.
  CHECK(one.ranks.size() == ds.split(Split::kTest).size());
}

TEST_CASE("predictions list the top-k by score") {
  const auto ds = load_synthetic(small_cyclic());
  auto state = ModelState::create(small_config(), ds.num_entities, ds.num_relations(), 4);
  const auto preds = predict(ds, state, Split::kTest, 3);
  REQUIRE(preds.size() == ds.split(Split::kTest).size());
  for (const auto& p : preds) {
    REQUIRE(p.topk.size() == 3);
    CHECK(p.topk[0].second >= p.topk[1].second);
    CHECK(p.topk[1].second >= p.topk[2].second);
  }
}

TEST_CASE("checkpoint round trip reproduces evaluation exactly") {
  const auto ds = load_synthetic(small_cyclic());
  const auto c = small_config();
  TrainOptions opt;
  opt.evaluate_test = false;
  auto r = train(ds, c, opt);
  TempDir dir;
  const auto path = dir.path / "best.ckpt";
  save_checkpoint(r.state, {c.seed, r.best_epoch, r.best_valid_mrr}, path);
  auto loaded = load_checkpoint(path, ds.num_entities, ds.num_relations());
  CHECK(loaded.meta.epoch == r.best_epoch);
  CHECK(loaded.meta.valid_mrr == r.best_valid_mrr);
  CHECK(loaded.state.config.to_string() == c.to_string());
  CHECK(evaluate(ds, loaded.state, Split::kValid).mrr == r.best_valid_mrr);

  CHECK_THROWS_AS(load_checkpoint(path, ds.num_entities + 1, ds.num_relations()),
                  CheckpointError);
  const auto bytes = slurp(path);
  {
    std::ofstream out(dir.path / "cut.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(dir.path / "cut.ckpt", ds.num_entities, ds.num_relations()),
                       doctest::Contains("truncated"), CheckpointError);
  {
    std::ofstream out(dir.path / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path / "junk.ckpt", ds.num_entities, ds.num_relations()),
                  CheckpointError);
  {
    std::ofstream out(dir.path / "long.ckpt", std::ios::binary);
    out << bytes << 'x';
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path / "long.ckpt", ds.num_entities, ds.num_relations()),
                  CheckpointError);
}

TEST_CASE("training rejects unprepared data") {
  auto ds = make_synthetic(small_cyclic());
  CHECK_THROWS_AS(train(ds, small_config()), std::invalid_argument);
}

TEST_CASE("mix_seed separates streams") {
  CHECK(mix_seed(1, 2, 3) == mix_seed(1, 2, 3));
  CHECK(mix_seed(1, 2, 3) != mix_seed(1, 3, 2));
  CHECK(mix_seed(0, 0) != mix_seed(1, 0));
}
