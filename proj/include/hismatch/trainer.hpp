#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "hismatch/autodiff.hpp"
#include "hismatch/config.hpp"
#include "hismatch/dataset.hpp"
#include "hismatch/history.hpp"
#include "hismatch/metrics.hpp"
#include "hismatch/model.hpp"

namespace hismatch {

// Non-finite loss during training. The CLI maps it to exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Logits [Q, |E|] for all queries (s, r, ?, t_q) of one timestamp. Queries
// share one background graph and one candidate encoding.
NodeId forward_logits(Graph& graph, ModelState& state, const HistoryIndex& index,
                      std::size_t query_time, std::span<const Quadruple> queries);

// Ground-truth objects per (subject, relation, timestamp) over every split.
class FilterIndex {
 public:
  explicit FilterIndex(const TkgDataset& dataset);
  std::span<const std::size_t> answers(std::size_t subject, std::size_t relation,
                                       std::size_t time) const;

 private:
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
           std::vector<std::size_t>>
      answers_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  double loss = 0.0;  // mean training loss per query
  double seconds = 0.0;
};

struct TrainOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after every optimizer step with the mean per-query loss.
  std::function<void(std::size_t epoch, std::size_t time, double loss)> on_step;
  // Train only on the first N training timestamps (0 = all).
  std::size_t max_train_timestamps = 0;
  bool evaluate_test = true;
  // When false the seconds column is written as 0 so logs of identical runs
  // compare byte for byte.
  bool record_seconds = true;
};

struct TrainResult {
  ModelState state;  // best validation checkpoint
  std::vector<EpochRecord> log;
  double best_valid_mrr = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

TrainResult train(const TkgDataset& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

// MRR / Hits over every query of a split (object and, through inverse
// relations, subject queries). Timestamps fan out over `workers` threads.
EvalReport evaluate(const TkgDataset& dataset, ModelState& state, Split split,
                    FilterMode filter = FilterMode::kTimeAware,
                    std::size_t workers = 1);

struct Prediction {
  Quadruple query;  // object holds the ground truth
  std::vector<std::pair<std::size_t, double>> topk;  // entity, sigmoid score
};

std::vector<Prediction> predict(const TkgDataset& dataset, ModelState& state,
                                Split split, std::size_t topk);

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> log);

// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace hismatch
