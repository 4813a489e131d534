#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "hismatch/autodiff.hpp"
#include "hismatch/config.hpp"

namespace hismatch {

// Single-layer GRU; weights act on row vectors (x * W).
//   r = sigmoid(x W_r + h U_r + b_r)
//   z = sigmoid(x W_z + h U_z + b_z)
//   n = tanh(x W_n + r * (h U_n) + b_n)
//   h' = (1 - z) * n + z * h
struct GruParams {
  Parameter w_r, w_z, w_n;  // [input, hidden]
  Parameter u_r, u_z, u_n;  // [hidden, hidden]
  Parameter b_r, b_z, b_n;  // [hidden]
};

// One W_neighbor / W_self pair per CompGCN layer, each [d_e, d_e].
struct CompGcnParams {
  std::vector<Parameter> neighbor;
  std::vector<Parameter> self;

  std::size_t layers() const { return neighbor.size(); }
};

// Every learnable tensor of the model. Groups switched off by an ablation
// flag are absent:
//   disable_time       -> no time unit/bias; GRU inputs shrink to d_e
//   disable_background -> no background CompGCN stack
//   disable_query      -> no query GRU or its initial state
//   disable_candidate  -> no candidate CompGCN stack or GRU; adds an output
//                         layer [d_e, |E|] + [|E|]
struct ModelState {
  TrainConfig config;
  std::size_t num_entities = 0;
  std::size_t num_relations = 0;  // including inverse relations

  Parameter entity_init;  // E' [|E|, d_e]
  Parameter relations;    // R [2|R|, d_e], shared by every consumer
  std::optional<Parameter> time_unit;  // w_t [d_t]
  std::optional<Parameter> time_bias;  // b_t [d_t]
  CompGcnParams background;
  CompGcnParams candidate;
  std::optional<GruParams> query_gru;
  std::optional<Parameter> query_h0;  // [d_e]
  std::optional<GruParams> candidate_gru;

  Parameter conv_kernels;  // [kernels, 2, kernel_width]
  Parameter conv_bias;     // [kernels]
  Parameter fc_weight;     // [kernels * d_e, d_e]
  Parameter fc_bias;       // [d_e]
  std::optional<Parameter> out_weight;  // [d_e, |E|]
  std::optional<Parameter> out_bias;    // [|E|]

  static ModelState create(const TrainConfig& config, std::size_t num_entities,
                           std::size_t num_relations, std::uint64_t seed);

  std::size_t gru_input_dim() const;
  std::vector<NamedParameter> parameters();
  std::size_t parameter_count() const;
  std::uint64_t fingerprint() const {
    return config.shape_fingerprint(num_entities, num_relations);
  }
};

}  // namespace hismatch
