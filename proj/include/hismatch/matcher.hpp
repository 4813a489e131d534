#pragma once

#include <cstddef>
#include <vector>

#include "hismatch/autodiff.hpp"
#include "hismatch/model.hpp"

namespace hismatch {

// ConvTransE decoder: stack [combined; rel] as a 2 x d_e input, 2 x kw
// convolution with width-preserving padding, ReLU, dropout, flatten, then a
// fully-connected layer back to d_e and dropout. Accepts single vectors [d_e]
// or row batches [Q, d_e]; the output has the same shape.
NodeId conv_trans_e(Graph& graph, ModelState& state, NodeId combined,
                    NodeId rel);

// Logits h_e . ConvTransE(h_q + h_eq, r_q) for every candidate row.
// Returns [|E|].
NodeId score_all(Graph& graph, ModelState& state, NodeId query_rep,
                 NodeId query_entity_rep, std::size_t relation,
                 NodeId candidates);

// Softmax cross-entropy over candidates, summed over query rows.
NodeId matching_loss(Graph& graph, NodeId logits,
                     std::vector<std::size_t> targets);

struct ScoreVector {
  std::size_t query_time = 0;
  std::size_t query_id = 0;
  std::vector<double> logits;
  std::vector<double> scores;  // sigmoid(logits)
};

ScoreVector make_scores(std::span<const double> logits, std::size_t query_time = 0,
                        std::size_t query_id = 0);

}  // namespace hismatch
