#include "hismatch/history.hpp"

#include <algorithm>

namespace hismatch {

namespace {

std::atomic<LeakageAudit*> g_audit{nullptr};

std::size_t scan_start(std::size_t query_time, std::size_t span) {
  return span == 0 || span >= query_time ? 0 : query_time - span;
}

}  // namespace

void set_leakage_audit(LeakageAudit* audit) { g_audit.store(audit); }

void audit_read(std::size_t snapshot_time, std::size_t query_time) {
  if (auto* audit = g_audit.load()) {
    audit->reads.fetch_add(1, std::memory_order_relaxed);
    if (snapshot_time >= query_time) {
      audit->violations.fetch_add(1, std::memory_order_relaxed);
    }
  }
}

QueryHistory extract_query_history(std::size_t entity, std::size_t relation,
                                   std::size_t query_time,
                                   std::span<const SnapshotGraph> snapshots,
                                   std::size_t m, std::size_t window) {
  if (m == 0) throw std::invalid_argument("extract_query_history: m must be >= 1");
  QueryHistory out{entity, relation, query_time, {}};
  const std::size_t hi = std::min(query_time, snapshots.size());
  const std::size_t lo = scan_start(query_time, window);
  for (std::size_t t = hi; t-- > lo && out.steps.size() < m;) {
    audit_read(t, query_time);
    const auto& snap = snapshots[t];
    QueryStep step{t, {}};
    for (auto idx : snap.outgoing(entity)) {
      const auto& e = snap.edges()[idx];
      if (e.relation == relation) step.neighbors.push_back(e.object);
    }
    if (step.neighbors.empty()) continue;
    std::sort(step.neighbors.begin(), step.neighbors.end());
    step.neighbors.erase(
        std::unique(step.neighbors.begin(), step.neighbors.end()),
        step.neighbors.end());
    out.steps.push_back(std::move(step));
  }
  std::reverse(out.steps.begin(), out.steps.end());
  return out;
}

CandidateHistory extract_candidate_history(
    std::span<const SnapshotGraph> snapshots, std::size_t query_time,
    std::size_t n) {
  if (n == 0) {
    throw std::invalid_argument("extract_candidate_history: n must be >= 1");
  }
  CandidateHistory out;
  out.query_time = query_time;
  const std::size_t hi = std::min(query_time, snapshots.size());
  for (std::size_t t = scan_start(query_time, n); t < hi; ++t) {
    audit_read(t, query_time);
    out.snapshots.push_back(&snapshots[t]);
    out.intervals.push_back(query_time - t);
  }
  return out;
}

BackgroundGraph build_background_graph(std::span<const SnapshotGraph> snapshots,
                                       std::size_t query_time, std::size_t k,
                                       std::size_t num_entities) {
  if (k == 0) throw std::invalid_argument("build_background_graph: k must be >= 1");
  BackgroundGraph out;
  out.query_time = query_time;
  const std::size_t hi = std::min(query_time, snapshots.size());
  for (std::size_t t = scan_start(query_time, k); t < hi; ++t) {
    audit_read(t, query_time);
    const auto& edges = snapshots[t].edges();
    out.edges.insert(out.edges.end(), edges.begin(), edges.end());
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.edges.erase(std::unique(out.edges.begin(), out.edges.end()),
                  out.edges.end());
  std::vector<bool> touched(num_entities, false);
  for (const auto& e : out.edges) {
    if (e.subject >= num_entities || e.object >= num_entities) {
      throw std::out_of_range("build_background_graph: entity id out of range");
    }
    touched[e.subject] = touched[e.object] = true;
  }
  for (std::size_t e = 0; e < num_entities; ++e) {
    if (!touched[e]) out.isolated.push_back(e);
  }
  return out;
}

HistoryIndex::HistoryIndex(const TkgDataset& dataset) : dataset_(&dataset) {
  for (const auto& snap : dataset.snapshots) {
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> at_t;
    for (const auto& e : snap.edges()) {
      at_t[{e.subject, e.relation}].push_back(e.object);
    }
    for (auto& [key, objs] : at_t) {
      std::sort(objs.begin(), objs.end());
      objs.erase(std::unique(objs.begin(), objs.end()), objs.end());
      timelines_[key].push_back({snap.index(), std::move(objs)});
    }
  }
}

QueryHistory HistoryIndex::query_history(std::size_t entity,
                                         std::size_t relation,
                                         std::size_t query_time, std::size_t m,
                                         std::size_t window) const {
  if (m == 0) throw std::invalid_argument("query_history: m must be >= 1");
  QueryHistory out{entity, relation, query_time, {}};
  auto it = timelines_.find({entity, relation});
  if (it == timelines_.end()) return out;
  const auto& line = it->second;
  auto end = std::lower_bound(
      line.begin(), line.end(), query_time,
      [](const QueryStep& s, std::size_t t) { return s.timestamp < t; });
  const std::size_t lo = scan_start(query_time, window);
  auto begin = end;
  while (begin != line.begin() &&
         static_cast<std::size_t>(end - begin) < m &&
         std::prev(begin)->timestamp >= lo) {
    --begin;
  }
  for (auto s = begin; s != end; ++s) {
    audit_read(s->timestamp, query_time);
    out.steps.push_back(*s);
  }
  return out;
}

CandidateHistory HistoryIndex::candidate_history(std::size_t query_time,
                                                 std::size_t n) const {
  return extract_candidate_history(dataset_->snapshots, query_time, n);
}

BackgroundGraph HistoryIndex::background(std::size_t query_time,
                                         std::size_t k) const {
  return build_background_graph(dataset_->snapshots, query_time, k,
                                dataset_->num_entities);
}

IntervalStats history_interval_stats(const TkgDataset& dataset, std::size_t m,
                                     std::size_t n, std::size_t k, Split split,
                                     std::size_t window) {
  const auto& facts = dataset.split(split);
  if (facts.empty()) {
    throw DataError("history_interval_stats: split '" +
                    std::string(split_name(split)) + "' has no queries");
  }
  const HistoryIndex index(dataset);
  IntervalStats stats;
  stats.k = k;
  double dt_sum = 0.0;
  double dt_prime_sum = 0.0;
  for (const auto& q : facts) {
    ++stats.queries;
    const auto qh = index.query_history(q.subject, q.relation, q.timestamp, m, window);
    if (!qh.steps.empty()) {
      ++stats.queries_with_history;
      dt_sum += static_cast<double>(q.timestamp - qh.steps.front().timestamp);
    }
    const auto ch = index.candidate_history(q.timestamp, n);
    if (!ch.intervals.empty()) {
      dt_prime_sum += static_cast<double>(ch.intervals.front());
    }
  }
  if (stats.queries_with_history > 0) {
    stats.mean_dt = dt_sum / static_cast<double>(stats.queries_with_history);
  }
  stats.mean_dt_prime = dt_prime_sum / static_cast<double>(stats.queries);
  return stats;
}

}  // namespace hismatch
