#pragma once

// Tape-style reverse-mode differentiation over dense double tensors.
//
// A Graph is rebuilt for every batch (define-by-run). Nodes are appended in
// evaluation order, so the tape is acyclic by construction and backward() is a
// single reverse sweep. Leaves are constants, free variables (used by the
// gradient checker) or Parameters, whose gradients are accumulated into the
// Parameter's own tensor until the optimizer consumes them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hismatch/tensor.hpp"

namespace hismatch {

using NodeId = std::size_t;

enum class OpKind : int {
  kConstant,
  kVariable,
  kParameter,
  kMatmul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcat,
  kConcatRows,
  kMeanRows,
  kCosine,
  kSigmoid,
  kTanh,
  kRelu,
  kSoftmax,
  kLog,
  kGather,
  kScatterMean,
  kConv1d,
  kReshape,
  kDropout,
  kDotRows,
  kCrossEntropy,
  kTranspose,
  kTileRows,
  kSum,
};

std::string_view op_name(OpKind kind);

// Learnable tensor plus Adam moments.
struct Parameter {
  Parameter() = default;
  explicit Parameter(Tensor t);

  Tensor tensor;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  std::size_t size() const { return tensor.size(); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

// Non-tensor arguments of an operation. Which fields are read depends on the
// op kind: `scalar` (scale factor, dropout rate), `indices` (gather rows,
// scatter groups, cross-entropy targets), `count` (scatter groups, tile rows),
// `shape` (reshape).
struct OpAttrs {
  double scalar = 0.0;
  std::vector<std::size_t> indices;
  std::size_t count = 0;
  Shape shape;
};

class Graph {
 public:
  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId constant(Tensor value);
  // Leaf that owns its gradient; read it back with grad().
  NodeId variable(Tensor value);
  // Leaf bound to a Parameter. Repeated calls return the same node.
  NodeId parameter(Parameter& p);

  // Generic entry point. Leaf kinds and out-of-range kinds are rejected.
  NodeId apply(OpKind kind, std::span<const NodeId> inputs,
               const OpAttrs& attrs = {});

  NodeId matmul(NodeId a, NodeId b);
  // Same shapes, or matrix + row vector broadcast over rows.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId concat(NodeId a, NodeId b);
  NodeId concat_rows(std::span<const NodeId> parts);
  NodeId mean_rows(NodeId a);
  NodeId cosine(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId gather(NodeId table, std::vector<std::size_t> rows);
  // out[g] = mean of src rows whose group is g; empty groups give zeros.
  NodeId scatter_mean(NodeId src, std::vector<std::size_t> groups,
                      std::size_t num_groups);
  // input [C, W] or [B, C, W]; kernels [K, C, kw] with odd kw; bias [K].
  // Width is zero-padded by (kw - 1) / 2 on both sides.
  NodeId conv1d(NodeId input, NodeId kernels);
  NodeId conv1d(NodeId input, NodeId kernels, NodeId bias);
  NodeId reshape(NodeId a, Shape shape);
  NodeId flatten(NodeId a);
  // Inverted dropout; identity when the graph is not in training mode.
  NodeId dropout(NodeId a, double rate);
  // matrix [N, d] times vector [d] -> [N]
  NodeId dot_rows(NodeId matrix, NodeId vec);
  // logits [C] with one target, or [Q, C] with Q targets (losses summed).
  NodeId cross_entropy(NodeId logits, std::vector<std::size_t> targets);
  NodeId transpose(NodeId a);
  NodeId tile_rows(NodeId vec, std::size_t count);
  NodeId sum(NodeId a);

  const Tensor& value(NodeId id) const;
  // Gradient of the last backward() loss w.r.t. a node (zeros if unreached).
  std::vector<double> grad(NodeId id) const;
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const {
    return nodes_.at(id).inputs;
  }

  // Populates the gradient of every Parameter leaf in the graph (zero-filled
  // when unreachable from `loss`), accumulating into existing gradients.
  void backward(NodeId loss);

  std::size_t size() const { return nodes_.size(); }
  bool training() const { return training_; }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    Parameter* param = nullptr;
    bool requires_grad = false;
    std::vector<double> grad;
    std::vector<double> aux;  // dropout mask, softmax cache
  };

  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor value,
              OpAttrs attrs = {}, std::vector<double> aux = {});
  const Node& node(NodeId id) const;
  std::vector<double>& grad_slot(NodeId id);
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, NodeId> param_nodes_;
  bool training_;
  std::mt19937_64 rng_;
};

// Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| +
// |numeric|), numeric by central differences with step eps. Every evaluation
// uses a fresh Graph(training, seed), so dropout masks repeat exactly.
using ScalarFn = std::function<NodeId(Graph&, NodeId)>;
double grad_check(const ScalarFn& f, const Tensor& x, double eps,
                  bool training = false, std::uint64_t seed = 0);

// Same measure for a Parameter inside an arbitrary graph builder. `coords`
// restricts the checked coordinates (all when empty).
double grad_check(const std::function<NodeId(Graph&)>& build, Parameter& p,
                  double eps, std::span<const std::size_t> coords = {},
                  bool training = false, std::uint64_t seed = 0);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update; zeroes gradients afterwards.
void adam_step(std::span<const NamedParameter> params,
               const AdamOptions& options = {});

// Rescales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before clipping.
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);

}  // namespace hismatch
