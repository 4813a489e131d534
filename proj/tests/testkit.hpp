#pragma once

// Oracles and fixtures shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hismatch/autodiff.hpp"
#include "hismatch/config.hpp"
#include "hismatch/dataset.hpp"
#include "hismatch/history.hpp"
#include "hismatch/model.hpp"

namespace hismatch::testkit {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0);

// Random values kept at least `gap` away from zero (for kinks such as relu).
Tensor random_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05);

struct OpCheck {
  OpKind kind;
  std::size_t cases = 0;
  double worst = 0.0;  // largest relative error over all cases
};

// Every differentiable op kind, `cases` random shapes and inputs each.
std::vector<OpCheck> op_gradient_suite(std::size_t cases, double eps,
                                       std::uint64_t seed);

struct GroupCheck {
  std::string name;
  double worst = 0.0;
};

// End-to-end loss of a 5-entity / 3-relation / 4-timestamp toy model checked
// against every parameter of the full model, then of the disable_candidate
// variant (whose output layer exists only there).
std::vector<GroupCheck> model_gradient_suite(double eps);

// 5 entities, 3 base relations, 4 timestamps; augmented with snapshots.
TkgDataset toy_dataset();
TrainConfig toy_config();

// Random augmented TKG with snapshots: up to `max_entities` entities and
// `max_timestamps` timestamps and at most 200 base facts; each split is
// non-empty and chronological.
TkgDataset random_tkg(std::mt19937_64& rng, std::size_t max_entities,
                      std::size_t max_relations, std::size_t max_timestamps);

// Linear scans over the fact list.
QueryHistory brute_query_history(const TkgDataset& ds, std::size_t entity,
                                 std::size_t relation, std::size_t query_time,
                                 std::size_t m, std::size_t window = 0);
BackgroundGraph brute_background(const TkgDataset& ds, std::size_t query_time,
                                 std::size_t k);
std::vector<std::size_t> brute_candidate_snapshots(std::size_t query_time,
                                                   std::size_t n);

struct ExtractionReport {
  std::size_t datasets = 0;
  std::size_t checks = 0;
  std::size_t mismatches = 0;
  std::size_t audited_reads = 0;
  std::size_t leaks = 0;
  std::string first_mismatch;
};

// Compares free-function extractors and HistoryIndex with the brute-force
// oracles on `datasets` random TKGs under a leakage audit.
ExtractionReport extraction_oracle_suite(std::size_t datasets, std::uint64_t seed);

// Direct loops for a width-padded 1-D convolution: input [C, W], kernels
// [K, C, kw], bias [K] (may be empty). Output [K, W].
std::vector<double> naive_conv1d(const Tensor& input, const Tensor& kernels,
                                 const std::vector<double>& bias);

}  // namespace hismatch::testkit
