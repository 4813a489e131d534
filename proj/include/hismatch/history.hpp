#pragma once

// Historical structures for a query timestamp t_q. Nothing here reads a
// snapshot at or after t_q; test builds can verify this through
// LeakageAudit.

#include <atomic>
#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "hismatch/dataset.hpp"

namespace hismatch {

struct QueryStep {
  std::size_t timestamp = 0;
  std::vector<std::size_t> neighbors;  // sorted, unique, non-empty

  friend bool operator==(const QueryStep&, const QueryStep&) = default;
};

struct QueryHistory {
  std::size_t entity = 0;
  std::size_t relation = 0;
  std::size_t query_time = 0;
  std::vector<QueryStep> steps;  // chronological, all before query_time
};

struct CandidateHistory {
  std::size_t query_time = 0;
  std::vector<const SnapshotGraph*> snapshots;  // chronological
  std::vector<std::size_t> intervals;           // query_time - snapshot index
};

struct BackgroundGraph {
  std::size_t query_time = 0;
  std::vector<Edge> edges;            // sorted, deduplicated
  std::vector<std::size_t> isolated;  // entities with no incident edge
};

// Counts snapshot reads that are not strictly before the query time.
struct LeakageAudit {
  std::atomic<std::size_t> reads{0};
  std::atomic<std::size_t> violations{0};
};

// Installs (or, with nullptr, removes) the process-wide audit hook.
void set_leakage_audit(LeakageAudit* audit);
void audit_read(std::size_t snapshot_time, std::size_t query_time);

// The m most recent timestamps before query_time with at least one fact
// (entity, relation, *, t). `window` > 0 limits the backward scan to
// [query_time - window, query_time).
QueryHistory extract_query_history(std::size_t entity, std::size_t relation,
                                   std::size_t query_time,
                                   std::span<const SnapshotGraph> snapshots,
                                   std::size_t m, std::size_t window = 0);

CandidateHistory extract_candidate_history(
    std::span<const SnapshotGraph> snapshots, std::size_t query_time,
    std::size_t n);

BackgroundGraph build_background_graph(std::span<const SnapshotGraph> snapshots,
                                       std::size_t query_time, std::size_t k,
                                       std::size_t num_entities);

// Per-(subject, relation) timelines so that query histories are found by
// binary search instead of rescanning snapshots.
class HistoryIndex {
 public:
  explicit HistoryIndex(const TkgDataset& dataset);

  QueryHistory query_history(std::size_t entity, std::size_t relation,
                             std::size_t query_time, std::size_t m,
                             std::size_t window = 0) const;
  CandidateHistory candidate_history(std::size_t query_time,
                                     std::size_t n) const;
  BackgroundGraph background(std::size_t query_time, std::size_t k) const;

  const TkgDataset& dataset() const { return *dataset_; }

 private:
  const TkgDataset* dataset_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<QueryStep>>
      timelines_;
};

struct IntervalStats {
  double mean_dt = 0.0;        // mean of t_q - t_1 over queries with history
  double mean_dt_prime = 0.0;  // mean of t_q - t'_1 over all queries
  std::size_t queries = 0;
  std::size_t queries_with_history = 0;
  std::size_t k = 0;
};

IntervalStats history_interval_stats(const TkgDataset& dataset, std::size_t m,
                                     std::size_t n, std::size_t k, Split split,
                                     std::size_t window = 0);

}  // namespace hismatch
