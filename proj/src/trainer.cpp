#include "hismatch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "hismatch/encoders.hpp"
#include "hismatch/matcher.hpp"

namespace hismatch {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the three words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

NodeId forward_logits(Graph& graph, ModelState& state, const HistoryIndex& index,
                      std::size_t query_time, std::span<const Quadruple> queries) {
  if (queries.empty()) throw std::invalid_argument("forward_logits: no queries");
  const auto& cfg = state.config;
  TimeEncoder time(graph, state);

  const NodeId entity_matrix =
      cfg.disable_background
          ? graph.parameter(state.entity_init)
          : encode_background(graph, index.background(query_time, cfg.k), state);

  NodeId candidates = 0;
  if (!cfg.disable_candidate) {
    candidates = encode_candidates(
        graph, index.candidate_history(query_time, cfg.n), entity_matrix, state,
        time);
  }

  std::vector<std::size_t> subjects, relations;
  subjects.reserve(queries.size());
  relations.reserve(queries.size());
  for (const auto& q : queries) {
    if (q.subject >= state.num_entities || q.relation >= state.num_relations) {
      throw std::out_of_range("forward_logits: query id outside the vocabulary");
    }
    subjects.push_back(q.subject);
    relations.push_back(q.relation);
  }

  NodeId combined = 0;
  if (!cfg.disable_query) {
    // One query-encoder pass per distinct (subject, relation).
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> slot;
    std::vector<NodeId> reps;
    std::vector<std::size_t> rows;
    rows.reserve(queries.size());
    for (const auto& q : queries) {
      auto [it, fresh] = slot.try_emplace({q.subject, q.relation}, reps.size());
      if (fresh) {
        reps.push_back(encode_query(
            graph,
            index.query_history(q.subject, q.relation, query_time, cfg.m,
                                cfg.history_window),
            entity_matrix, state, time));
      }
      rows.push_back(it->second);
    }
    combined = graph.gather(graph.concat_rows(reps), std::move(rows));
  }
  if (!cfg.disable_candidate) {
    const auto own = graph.gather(candidates, subjects);
    combined = cfg.disable_query ? own : graph.add(combined, own);
  }

  const auto rel = graph.gather(graph.parameter(state.relations), relations);
  const auto decoded = conv_trans_e(graph, state, combined, rel);
  if (cfg.disable_candidate) {
    return graph.add(graph.matmul(decoded, graph.parameter(*state.out_weight)),
                     graph.parameter(*state.out_bias));
  }
  return graph.matmul(decoded, graph.transpose(candidates));
}

FilterIndex::FilterIndex(const TkgDataset& dataset) {
  for (const auto& split : dataset.splits) {
    for (const auto& q : split) {
      answers_[{q.subject, q.relation, q.timestamp}].push_back(q.object);
    }
  }
  for (auto& [key, objs] : answers_) {
    std::sort(objs.begin(), objs.end());
    objs.erase(std::unique(objs.begin(), objs.end()), objs.end());
  }
}

std::span<const std::size_t> FilterIndex::answers(std::size_t subject,
                                                  std::size_t relation,
                                                  std::size_t time) const {
  auto it = answers_.find({subject, relation, time});
  if (it == answers_.end()) return {};
  return it->second;
}

namespace {

double elapsed(std::chrono::steady_clock::time_point start, bool record) {
  if (!record) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

std::vector<double> rank_timestamp(const TkgDataset& dataset, ModelState& state,
                                   const HistoryIndex& index,
                                   const FilterIndex& filter, FilterMode mode,
                                   std::size_t time,
                                   const std::vector<Quadruple>& facts) {
  Graph graph(false);
  const auto logits = forward_logits(graph, state, index, time, facts);
  const auto& z = graph.value(logits);
  const std::size_t n = dataset.num_entities;
  std::vector<double> ranks;
  ranks.reserve(facts.size());
  for (std::size_t i = 0; i < facts.size(); ++i) {
    const auto& q = facts[i];
    // Ranking on logits is identical to ranking on sigmoid scores and avoids
    // ties introduced by saturation.
    const auto row = z.values().subspan(i * n, n);
    const auto truths = mode == FilterMode::kTimeAware
                            ? filter.answers(q.subject, q.relation, q.timestamp)
                            : std::span<const std::size_t>{};
    ranks.push_back(rank_with_filter(row, q.object, truths));
  }
  return ranks;
}

}  // namespace

EvalReport evaluate(const TkgDataset& dataset, ModelState& state, Split split,
                    FilterMode filter, std::size_t workers) {
  const auto groups = dataset.facts_by_time(split);
  if (groups.empty()) {
    throw DataError("evaluate: split '" + std::string(split_name(split)) +
                    "' is empty");
  }
  const HistoryIndex index(dataset);
  const FilterIndex truths(dataset);
  std::vector<std::vector<double>> per_time(groups.size());
  auto run = [&](std::size_t worker, std::size_t stride) {
    for (std::size_t g = worker; g < groups.size(); g += stride) {
      per_time[g] = rank_timestamp(dataset, state, index, truths, filter,
                                   groups[g].first, groups[g].second);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, groups.size()));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
    for (auto& t : pool) t.join();
  }
  std::vector<double> ranks;
  for (auto& r : per_time) ranks.insert(ranks.end(), r.begin(), r.end());
  return summarize_ranks(std::move(ranks), std::string(split_name(split)), filter);
}

std::vector<Prediction> predict(const TkgDataset& dataset, ModelState& state,
                                Split split, std::size_t topk) {
  const HistoryIndex index(dataset);
  std::vector<Prediction> out;
  const std::size_t n = dataset.num_entities;
  topk = std::min(topk, n);
  for (const auto& [time, facts] : dataset.facts_by_time(split)) {
    Graph graph(false);
    const auto& z = graph.value(forward_logits(graph, state, index, time, facts));
    for (std::size_t i = 0; i < facts.size(); ++i) {
      const auto scores = make_scores(z.values().subspan(i * n, n), time, i);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::partial_sort(order.begin(), order.begin() + topk, order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return scores.logits[a] != scores.logits[b]
                                     ? scores.logits[a] > scores.logits[b]
                                     : a < b;
                        });
      Prediction p{facts[i], {}};
      for (std::size_t k = 0; k < topk; ++k) {
        p.topk.emplace_back(order[k], scores.scores[order[k]]);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

TrainResult train(const TkgDataset& dataset, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (!dataset.augmented) {
    throw std::invalid_argument("train: dataset must be inverse-augmented");
  }
  if (dataset.snapshots.empty()) {
    throw std::invalid_argument("train: snapshots have not been built");
  }
  auto groups = dataset.facts_by_time(Split::kTrain);
  if (groups.empty()) throw DataError("train: empty training split");
  if (options.max_train_timestamps > 0 &&
      groups.size() > options.max_train_timestamps) {
    groups.resize(options.max_train_timestamps);
  }

  TrainResult result{
      ModelState::create(config, dataset.num_entities, dataset.num_relations(),
                         config.seed),
      {}, -1.0, 0, 0};
  ModelState state = result.state;
  const HistoryIndex index(dataset);
  const AdamOptions adam{config.lr};
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (const auto& [time, facts] : groups) {
      Graph graph(true, mix_seed(config.seed, epoch, time));
      const auto logits = forward_logits(graph, state, index, time, facts);
      std::vector<std::size_t> targets;
      targets.reserve(facts.size());
      for (const auto& q : facts) targets.push_back(q.object);
      const auto loss = matching_loss(graph, logits, std::move(targets));
      const double value = graph.value(loss).item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", timestamp " + std::to_string(time));
      }
      graph.backward(loss);
      // Parameters absent from this graph (e.g. the candidate GRU before any
      // history exists) keep their moments untouched.
      std::vector<NamedParameter> params;
      for (const auto& np : state.parameters()) {
        if (np.param->tensor.has_grad()) params.push_back(np);
      }
      if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
      adam_step(params, adam);
      loss_sum += value;
      count += facts.size();
      if (options.on_step) {
        options.on_step(epoch, time, value / static_cast<double>(facts.size()));
      }
    }
    const auto report = evaluate(dataset, state, Split::kValid,
                                 FilterMode::kTimeAware, config.workers);
    const double seconds = elapsed(start, options.record_seconds);
    EpochRecord rec{epoch,         "valid",      report.mrr,
                    report.hits1,  report.hits3, report.hits10,
                    loss_sum / static_cast<double>(count), seconds};
    result.log.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
    result.epochs_run = epoch;

    if (report.mrr > result.best_valid_mrr) {
      result.best_valid_mrr = report.mrr;
      result.best_epoch = epoch;
      result.state = state;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }

  if (options.evaluate_test) {
    const auto start = std::chrono::steady_clock::now();
    const auto report = evaluate(dataset, result.state, Split::kTest,
                                 FilterMode::kTimeAware, config.workers);
    const double seconds = elapsed(start, options.record_seconds);
    EpochRecord rec{result.best_epoch, "test",        report.mrr,
                    report.hits1,      report.hits3,  report.hits10,
                    result.log[result.best_epoch - 1].loss, seconds};
    result.log.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_metrics_csv(const std::filesystem::path& path,
                       std::span<const EpochRecord> log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,split,mrr,h1,h3,h10,loss,seconds\n";
  for (const auto& r : log) {
    os << r.epoch << ',' << r.split << ',' << r.mrr << ',' << r.hits1 << ','
       << r.hits3 << ',' << r.hits10 << ',' << r.loss << ',' << r.seconds << '\n';
  }
  write_file_atomic(path, os.str());
}

}  // namespace hismatch
