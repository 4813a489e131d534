#include "hismatch/matcher.hpp"

#include <cmath>

namespace hismatch {

NodeId conv_trans_e(Graph& graph, ModelState& state, NodeId combined,
                    NodeId rel) {
  const auto& a = graph.value(combined);
  const auto& b = graph.value(rel);
  const std::size_t d = state.config.d_e;
  if (a.shape() != b.shape() || a.cols() != d || a.rank() > 2) {
    throw ShapeError("conv_trans_e: expected matching [d_e] or [Q, d_e] inputs "
                     "with d_e = " + std::to_string(d) + ", got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool batched = a.rank() == 2;
  const std::size_t rows = a.rows();
  const std::size_t kernels = state.config.kernels;
  const double rate = state.config.dropout;

  auto x = graph.concat(combined, rel);
  x = graph.reshape(x, batched ? Shape{rows, 2, d} : Shape{2, d});
  x = graph.conv1d(x, graph.parameter(state.conv_kernels),
                   graph.parameter(state.conv_bias));
  x = graph.relu(x);
  if (rate > 0.0) x = graph.dropout(x, rate);
  x = graph.reshape(x, batched ? Shape{rows, kernels * d} : Shape{kernels * d});
  x = graph.add(graph.matmul(x, graph.parameter(state.fc_weight)),
                graph.parameter(state.fc_bias));
  if (rate > 0.0) x = graph.dropout(x, rate);
  return x;
}

NodeId score_all(Graph& graph, ModelState& state, NodeId query_rep,
                 NodeId query_entity_rep, std::size_t relation,
                 NodeId candidates) {
  if (relation >= state.num_relations) {
    throw std::out_of_range("score_all: relation " + std::to_string(relation) +
                            " >= " + std::to_string(state.num_relations));
  }
  const auto rel = graph.reshape(
      graph.gather(graph.parameter(state.relations), {relation}),
      {state.config.d_e});
  const auto decoded =
      conv_trans_e(graph, state, graph.add(query_rep, query_entity_rep), rel);
  return graph.dot_rows(candidates, decoded);
}

NodeId matching_loss(Graph& graph, NodeId logits,
                     std::vector<std::size_t> targets) {
  return graph.cross_entropy(logits, std::move(targets));
}

ScoreVector make_scores(std::span<const double> logits, std::size_t query_time,
                        std::size_t query_id) {
  ScoreVector sv;
  sv.query_time = query_time;
  sv.query_id = query_id;
  sv.logits.assign(logits.begin(), logits.end());
  sv.scores.reserve(logits.size());
  for (double z : logits) sv.scores.push_back(1.0 / (1.0 + std::exp(-z)));
  return sv;
}

}  // namespace hismatch
