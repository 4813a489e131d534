#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "hismatch/autodiff.hpp"
#include "hismatch/history.hpp"
#include "hismatch/model.hpp"

namespace hismatch {

// v(d) = cos(d * w_t + b_t), evaluated outside any graph.
std::vector<double> time_encode(const ModelState& state, std::size_t interval);

// Graph node for v(d); one node per distinct interval within a graph. Both
// structure encoders draw from the same w_t / b_t parameters.
class TimeEncoder {
 public:
  TimeEncoder(Graph& graph, ModelState& state) : graph_(graph), state_(state) {}
  NodeId operator()(std::size_t interval);

 private:
  Graph& graph_;
  ModelState& state_;
  std::map<std::size_t, NodeId> cache_;
};

// h'_e = tanh( mean_{(e',r,e)} W1 compose(h_e', r) + W2 h_e ), the mean taken
// over the in-edges of e (empty sum for isolated entities). Returns [N, d].
NodeId compgcn_layer(Graph& graph, std::span<const Edge> edges, NodeId h,
                     NodeId relations, NodeId w_neighbor, NodeId w_self,
                     Composition composition);

// omega2 CompGCN layers over the background graph starting from E'. Returns
// E' itself when the background encoder is disabled.
NodeId encode_background(Graph& graph, const BackgroundGraph& background,
                         ModelState& state);

NodeId gru_step(Graph& graph, GruParams& gru, NodeId h, NodeId x);

// Mean-pool the neighbours of each step, append v(t_q - t_i) and run the
// query GRU from h_0. Returns h_0 for an empty history. Output [d_e].
NodeId encode_query(Graph& graph, const QueryHistory& history,
                    NodeId entity_matrix, ModelState& state, TimeEncoder& time);

// CompGCN over each candidate snapshot (shared by all entities), then the
// candidate GRU per entity from a zero state. Output [|E|, d_e].
NodeId encode_candidates(Graph& graph, const CandidateHistory& history,
                         NodeId entity_matrix, ModelState& state,
                         TimeEncoder& time);

}  // namespace hismatch
