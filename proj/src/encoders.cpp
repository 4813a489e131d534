#include "hismatch/encoders.hpp"

#include <cmath>

namespace hismatch {

std::vector<double> time_encode(const ModelState& state, std::size_t interval) {
  if (!state.time_unit || !state.time_bias) {
    throw std::logic_error("time_encode: time component is disabled");
  }
  const auto& w = state.time_unit->tensor;
  const auto& b = state.time_bias->tensor;
  std::vector<double> v(w.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::cos(static_cast<double>(interval) * w[i] + b[i]);
  }
  return v;
}

NodeId TimeEncoder::operator()(std::size_t interval) {
  if (auto it = cache_.find(interval); it != cache_.end()) return it->second;
  if (!state_.time_unit || !state_.time_bias) {
    throw std::logic_error("time encoder: time component is disabled");
  }
  const auto w = graph_.parameter(*state_.time_unit);
  const auto b = graph_.parameter(*state_.time_bias);
  const auto v = graph_.cosine(
      graph_.add(graph_.scale(w, static_cast<double>(interval)), b));
  cache_.emplace(interval, v);
  return v;
}

NodeId compgcn_layer(Graph& graph, std::span<const Edge> edges, NodeId h,
                     NodeId relations, NodeId w_neighbor, NodeId w_self,
                     Composition composition) {
  const auto& hv = graph.value(h);
  if (hv.rank() != 2) {
    throw ShapeError("compgcn_layer: entity matrix must be rank 2, got " +
                     shape_str(hv.shape()));
  }
  const std::size_t num_entities = hv.rows();
  const std::size_t num_relations = graph.value(relations).rows();
  const auto self = graph.matmul(h, w_self);
  if (edges.empty()) return graph.tanh(self);

  std::vector<std::size_t> src, rel, dst;
  src.reserve(edges.size());
  rel.reserve(edges.size());
  dst.reserve(edges.size());
  for (const auto& e : edges) {
    if (e.subject >= num_entities || e.object >= num_entities ||
        e.relation >= num_relations) {
      throw std::out_of_range(
          "compgcn_layer: edge (" + std::to_string(e.subject) + ", " +
          std::to_string(e.relation) + ", " + std::to_string(e.object) +
          ") outside " + std::to_string(num_entities) + " entities / " +
          std::to_string(num_relations) + " relations");
    }
    src.push_back(e.subject);
    rel.push_back(e.relation);
    dst.push_back(e.object);
  }
  const auto h_src = graph.gather(h, std::move(src));
  const auto r = graph.gather(relations, std::move(rel));
  const auto composed = composition == Composition::kSubtract
                            ? graph.sub(h_src, r)
                            : graph.mul(h_src, r);
  const auto messages = graph.matmul(composed, w_neighbor);
  const auto aggregated = graph.scatter_mean(messages, std::move(dst), num_entities);
  return graph.tanh(graph.add(aggregated, self));
}

namespace {

NodeId run_stack(Graph& graph, std::span<const Edge> edges, NodeId input,
                 CompGcnParams& stack, ModelState& state, bool dropout) {
  const auto rel = graph.parameter(state.relations);
  NodeId h = input;
  for (std::size_t l = 0; l < stack.layers(); ++l) {
    h = compgcn_layer(graph, edges, h, rel, graph.parameter(stack.neighbor[l]),
                      graph.parameter(stack.self[l]), state.config.composition);
    if (dropout && state.config.dropout > 0.0) {
      h = graph.dropout(h, state.config.dropout);
    }
  }
  return h;
}

}  // namespace

NodeId encode_background(Graph& graph, const BackgroundGraph& background,
                         ModelState& state) {
  const auto e0 = graph.parameter(state.entity_init);
  if (state.config.disable_background) return e0;
  return run_stack(graph, background.edges, e0, state.background, state, true);
}

NodeId gru_step(Graph& graph, GruParams& gru, NodeId h, NodeId x) {
  auto p = [&](Parameter& param) { return graph.parameter(param); };
  auto gate = [&](Parameter& w, Parameter& u, Parameter& b) {
    return graph.add(graph.add(graph.matmul(x, p(w)), graph.matmul(h, p(u))), p(b));
  };
  const auto r = graph.sigmoid(gate(gru.w_r, gru.u_r, gru.b_r));
  const auto z = graph.sigmoid(gate(gru.w_z, gru.u_z, gru.b_z));
  const auto n = graph.tanh(graph.add(
      graph.add(graph.matmul(x, p(gru.w_n)),
                graph.mul(r, graph.matmul(h, p(gru.u_n)))),
      p(gru.b_n)));
  // (1 - z) * n + z * h
  return graph.add(n, graph.mul(z, graph.sub(h, n)));
}

NodeId encode_query(Graph& graph, const QueryHistory& history,
                    NodeId entity_matrix, ModelState& state, TimeEncoder& time) {
  if (!state.query_gru || !state.query_h0) {
    throw std::logic_error("encode_query: query encoder is disabled");
  }
  NodeId h = graph.parameter(*state.query_h0);
  for (const auto& step : history.steps) {
    NodeId x = graph.mean_rows(graph.gather(entity_matrix, step.neighbors));
    if (!state.config.disable_time) {
      x = graph.concat(x, time(history.query_time - step.timestamp));
    }
    h = gru_step(graph, *state.query_gru, h, x);
  }
  return h;
}

NodeId encode_candidates(Graph& graph, const CandidateHistory& history,
                         NodeId entity_matrix, ModelState& state,
                         TimeEncoder& time) {
  if (!state.candidate_gru) {
    throw std::logic_error("encode_candidates: candidate encoder is disabled");
  }
  const std::size_t num_entities = graph.value(entity_matrix).rows();
  NodeId h = graph.constant(Tensor({num_entities, state.config.d_e}));
  for (std::size_t i = 0; i < history.snapshots.size(); ++i) {
    NodeId x = run_stack(graph, history.snapshots[i]->edges(), entity_matrix,
                         state.candidate, state, state.config.candidate_dropout);
    if (!state.config.disable_time) {
      x = graph.concat(x, graph.tile_rows(time(history.intervals[i]), num_entities));
    }
    h = gru_step(graph, *state.candidate_gru, h, x);
  }
  return h;
}

}  // namespace hismatch
