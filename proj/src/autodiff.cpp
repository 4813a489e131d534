#include "hismatch/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hismatch {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

[[noreturn]] void mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " +
                   shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void bad_shape(OpKind kind, const Shape& a, const char* what) {
  throw ShapeError(std::string(op_name(kind)) + ": " + what + ", got " +
                   shape_str(a));
}

void require_arity(OpKind kind, std::span<const NodeId> inputs,
                   std::size_t lo, std::size_t hi) {
  if (inputs.size() < lo || inputs.size() > hi) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                std::to_string(lo) + ".." +
                                std::to_string(hi) + " inputs, got " +
                                std::to_string(inputs.size()));
  }
}

// Leading-row view of any tensor whose last axis is the feature axis.
std::size_t outer_of(const Tensor& t) {
  return t.size() / std::max<std::size_t>(1, t.cols());
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kVariable: return "variable";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kCosine: return "cosine";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLog: return "log";
    case OpKind::kGather: return "gather";
    case OpKind::kScatterMean: return "scatter_mean";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kReshape: return "reshape";
    case OpKind::kDropout: return "dropout";
    case OpKind::kDotRows: return "dot_rows";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kTileRows: return "tile_rows";
    case OpKind::kSum: return "sum";
  }
  return "unknown";
}

Parameter::Parameter(Tensor t)
    : tensor(std::move(t)), m(tensor.size(), 0.0), v(tensor.size(), 0.0) {}

Graph::Graph(bool training, std::uint64_t dropout_seed)
    : training_(training), rng_(dropout_seed) {}

const Graph::Node& Graph::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw std::out_of_range("graph: node " + std::to_string(id) +
                            " does not exist");
  }
  return nodes_[id];
}

const Tensor& Graph::value(NodeId id) const {
  const auto& n = node(id);
  return n.param ? n.param->tensor : n.value;
}

std::vector<double> Graph::grad(NodeId id) const {
  const auto& n = node(id);
  if (n.grad.empty()) return std::vector<double>(value(id).size(), 0.0);
  return n.grad;
}

NodeId Graph::push(OpKind kind, std::vector<NodeId> inputs, Tensor value,
                   OpAttrs attrs, std::vector<double> aux) {
  Node n;
  n.kind = kind;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](NodeId i) {
    return nodes_[i].requires_grad;
  });
  n.inputs = std::move(inputs);
  n.attrs = std::move(attrs);
  n.value = std::move(value);
  n.aux = std::move(aux);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::constant(Tensor value) {
  return push(OpKind::kConstant, {}, std::move(value));
}

NodeId Graph::variable(Tensor value) {
  auto id = push(OpKind::kVariable, {}, std::move(value));
  nodes_[id].requires_grad = true;
  return id;
}

NodeId Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return it->second;
  }
  auto id = push(OpKind::kParameter, {}, Tensor{});
  nodes_[id].param = &p;
  nodes_[id].requires_grad = true;
  param_nodes_.emplace(&p, id);
  return id;
}

NodeId Graph::apply(OpKind kind, std::span<const NodeId> in,
                    const OpAttrs& attrs) {
  for (auto i : in) node(i);
  switch (kind) {
    case OpKind::kMatmul: {
      require_arity(kind, in, 2, 2);
      const auto& a = value(in[0]);
      const auto& b = value(in[1]);
      if (a.rank() > 2 || b.rank() != 2 || a.cols() != b.rows()) {
        mismatch(kind, a.shape(), b.shape());
      }
      const std::size_t m = a.rank() == 2 ? a.rows() : 1;
      Shape out_shape = a.rank() == 2 ? Shape{m, b.cols()} : Shape{b.cols()};
      Tensor out(out_shape);
      MapMat(out.values().data(), m, b.cols()).noalias() =
          MapConstMat(a.values().data(), m, a.cols()) *
          MapConstMat(b.values().data(), b.rows(), b.cols());
      return push(kind, {in[0], in[1]}, std::move(out));
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      require_arity(kind, in, 2, 2);
      const auto& a = value(in[0]);
      const auto& b = value(in[1]);
      const bool same = a.shape() == b.shape();
      const bool row_bcast = kind == OpKind::kAdd && a.rank() == 2 &&
                             b.rank() == 1 && b.size() == a.cols();
      if (!same && !row_bcast) mismatch(kind, a.shape(), b.shape());
      Tensor out(a.shape());
      auto o = out.values();
      auto av = a.values();
      auto bv = b.values();
      const std::size_t bn = bv.size();
      for (std::size_t i = 0; i < o.size(); ++i) {
        const double y = bv[same ? i : i % bn];
        o[i] = kind == OpKind::kAdd   ? av[i] + y
               : kind == OpKind::kSub ? av[i] - y
                                      : av[i] * y;
      }
      return push(kind, {in[0], in[1]}, std::move(out));
    }
    case OpKind::kScale: {
      require_arity(kind, in, 1, 1);
      Tensor out = value(in[0]);
      out.clear_grad();
      for (auto& v : out.values()) v *= attrs.scalar;
      return push(kind, {in[0]}, std::move(out), attrs);
    }
    case OpKind::kConcat: {
      require_arity(kind, in, 2, 2);
      const auto& a = value(in[0]);
      const auto& b = value(in[1]);
      if (a.rank() != b.rank() ||
          !std::equal(a.shape().begin(), a.shape().end() - 1,
                      b.shape().begin())) {
        mismatch(kind, a.shape(), b.shape());
      }
      Shape s = a.shape();
      s.back() = a.cols() + b.cols();
      Tensor out(s);
      const std::size_t outer = outer_of(a);
      for (std::size_t r = 0; r < outer; ++r) {
        auto dst = out.values().begin() + r * s.back();
        dst = std::copy_n(a.values().begin() + r * a.cols(), a.cols(), dst);
        std::copy_n(b.values().begin() + r * b.cols(), b.cols(), dst);
      }
      return push(kind, {in[0], in[1]}, std::move(out));
    }
    case OpKind::kConcatRows: {
      if (in.empty()) throw std::invalid_argument("concat_rows: no inputs");
      const std::size_t width = value(in[0]).cols();
      std::size_t rows = 0;
      for (auto i : in) {
        const auto& t = value(i);
        if (t.rank() > 2 || t.cols() != width) {
          mismatch(kind, value(in[0]).shape(), t.shape());
        }
        rows += t.rows();
      }
      Tensor out({rows, width});
      auto dst = out.values().begin();
      for (auto i : in) {
        const auto& t = value(i);
        dst = std::copy(t.values().begin(), t.values().end(), dst);
      }
      return push(kind, {in.begin(), in.end()}, std::move(out));
    }
    case OpKind::kMeanRows: {
      require_arity(kind, in, 1, 1);
      const auto& a = value(in[0]);
      if (a.rank() > 2 || a.size() == 0) bad_shape(kind, a.shape(), "expected rank 1 or 2");
      Tensor out({a.cols()});
      const std::size_t rows = a.rank() == 2 ? a.rows() : 1;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
          out[c] += a.values()[r * a.cols() + c];
        }
      }
      for (auto& v : out.values()) v /= static_cast<double>(rows);
      return push(kind, {in[0]}, std::move(out));
    }
    case OpKind::kCosine:
    case OpKind::kSigmoid:
    case OpKind::kTanh:
    case OpKind::kRelu:
    case OpKind::kLog: {
      require_arity(kind, in, 1, 1);
      Tensor out = value(in[0]);
      out.clear_grad();
      for (auto& v : out.values()) {
        switch (kind) {
          case OpKind::kCosine: v = std::cos(v); break;
          case OpKind::kSigmoid: v = 1.0 / (1.0 + std::exp(-v)); break;
          case OpKind::kTanh: v = std::tanh(v); break;
          case OpKind::kRelu: v = v > 0.0 ? v : 0.0; break;
          default:
            if (!(v > 0.0)) {
              throw std::domain_error("log: non-positive input " +
                                      std::to_string(v));
            }
            v = std::log(v);
        }
      }
      return push(kind, {in[0]}, std::move(out));
    }
    case OpKind::kSoftmax: {
      require_arity(kind, in, 1, 1);
      Tensor out = value(in[0]);
      out.clear_grad();
      const std::size_t c = out.cols();
      for (std::size_t r = 0; r < outer_of(out); ++r) {
        auto row = out.values().subspan(r * c, c);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (auto& v : row) z += (v = std::exp(v - mx));
        for (auto& v : row) v /= z;
      }
      return push(kind, {in[0]}, std::move(out));
    }
    case OpKind::kGather: {
      require_arity(kind, in, 1, 1);
      const auto& t = value(in[0]);
      if (t.rank() != 2) bad_shape(kind, t.shape(), "table must be rank 2");
      if (attrs.indices.empty()) bad_shape(kind, t.shape(), "no row indices");
      const std::size_t d = t.cols();
      Tensor out({attrs.indices.size(), d});
      for (std::size_t k = 0; k < attrs.indices.size(); ++k) {
        const auto row = attrs.indices[k];
        if (row >= t.rows()) {
          throw std::out_of_range("gather: row " + std::to_string(row) +
                                  " out of range for table " +
                                  shape_str(t.shape()));
        }
        std::copy_n(t.values().begin() + row * d, d,
                    out.values().begin() + k * d);
      }
      return push(kind, {in[0]}, std::move(out), attrs);
    }
    case OpKind::kScatterMean: {
      require_arity(kind, in, 1, 1);
      const auto& src = value(in[0]);
      if (src.rank() != 2 || attrs.indices.size() != src.rows()) {
        bad_shape(kind, src.shape(), "expected one group index per row");
      }
      if (attrs.count == 0) bad_shape(kind, src.shape(), "zero groups");
      const std::size_t d = src.cols();
      Tensor out({attrs.count, d});
      std::vector<double> counts(attrs.count, 0.0);
      for (std::size_t r = 0; r < src.rows(); ++r) {
        const auto g = attrs.indices[r];
        if (g >= attrs.count) {
          throw std::out_of_range("scatter_mean: group " + std::to_string(g) +
                                  " >= " + std::to_string(attrs.count));
        }
        counts[g] += 1.0;
        for (std::size_t c = 0; c < d; ++c) {
          out.values()[g * d + c] += src.values()[r * d + c];
        }
      }
      for (std::size_t g = 0; g < attrs.count; ++g) {
        const double inv = 1.0 / std::max(1.0, counts[g]);
        for (std::size_t c = 0; c < d; ++c) out.values()[g * d + c] *= inv;
      }
      for (auto& cnt : counts) cnt = 1.0 / std::max(1.0, cnt);
      return push(kind, {in[0]}, std::move(out), attrs, std::move(counts));
    }
    case OpKind::kConv1d: {
      require_arity(kind, in, 2, 3);
      const auto& x = value(in[0]);
      const auto& k = value(in[1]);
      if (x.rank() != 2 && x.rank() != 3) {
        bad_shape(kind, x.shape(), "input must be [C,W] or [B,C,W]");
      }
      const std::size_t channels = x.dim(x.rank() - 2);
      if (k.rank() != 3 || k.dim(1) != channels || k.dim(2) % 2 == 0) {
        mismatch(kind, x.shape(), k.shape());
      }
      if (in.size() == 3 && value(in[2]).shape() != Shape{k.dim(0)}) {
        mismatch(kind, k.shape(), value(in[2]).shape());
      }
      const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
      const std::size_t width = x.cols();
      const std::size_t nk = k.dim(0), kw = k.dim(2);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kw / 2);
      Shape s = x.rank() == 3 ? Shape{batch, nk, width} : Shape{nk, width};
      Tensor out(s);
      auto xv = x.values();
      auto kv = k.values();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < nk; ++o) {
          double* dst = out.values().data() + (b * nk + o) * width;
          if (in.size() == 3) std::fill_n(dst, width, value(in[2])[o]);
          for (std::size_t c = 0; c < channels; ++c) {
            const double* src = xv.data() + (b * channels + c) * width;
            for (std::size_t j = 0; j < kw; ++j) {
              const double w = kv[(o * channels + c) * kw + j];
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
                  static_cast<std::ptrdiff_t>(width),
                  static_cast<std::ptrdiff_t>(width) - shift);
              for (std::ptrdiff_t p = lo; p < hi; ++p) dst[p] += w * src[p + shift];
            }
          }
        }
      }
      return push(kind, {in.begin(), in.end()}, std::move(out));
    }
    case OpKind::kReshape: {
      require_arity(kind, in, 1, 1);
      Tensor out = value(in[0]);
      out.clear_grad();
      if (shape_numel(attrs.shape) != out.size()) {
        mismatch(kind, out.shape(), attrs.shape);
      }
      out.reshape(attrs.shape);
      return push(kind, {in[0]}, std::move(out), attrs);
    }
    case OpKind::kDropout: {
      require_arity(kind, in, 1, 1);
      if (attrs.scalar < 0.0 || attrs.scalar >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1)");
      }
      Tensor out = value(in[0]);
      out.clear_grad();
      std::vector<double> mask;
      if (training_ && attrs.scalar > 0.0) {
        const double keep = 1.0 - attrs.scalar;
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        mask.resize(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          mask[i] = unif(rng_) < keep ? 1.0 / keep : 0.0;
          out[i] *= mask[i];
        }
      }
      return push(kind, {in[0]}, std::move(out), attrs, std::move(mask));
    }
    case OpKind::kDotRows: {
      require_arity(kind, in, 2, 2);
      const auto& m = value(in[0]);
      const auto& v = value(in[1]);
      if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.size()) {
        mismatch(kind, m.shape(), v.shape());
      }
      Tensor out({m.rows()});
      Eigen::Map<Eigen::VectorXd>(out.values().data(), m.rows()).noalias() =
          MapConstMat(m.values().data(), m.rows(), m.cols()) *
          Eigen::Map<const Eigen::VectorXd>(v.values().data(), v.size());
      return push(kind, {in[0], in[1]}, std::move(out));
    }
    case OpKind::kCrossEntropy: {
      require_arity(kind, in, 1, 1);
      const auto& z = value(in[0]);
      if (z.rank() > 2) bad_shape(kind, z.shape(), "logits must be rank 1 or 2");
      const std::size_t rows = z.rank() == 2 ? z.rows() : 1;
      const std::size_t c = z.cols();
      if (attrs.indices.size() != rows) {
        bad_shape(kind, z.shape(), "expected one target per logit row");
      }
      std::vector<double> probs(z.values().begin(), z.values().end());
      double loss = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const auto t = attrs.indices[r];
        if (t >= c) {
          throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                                  " >= " + std::to_string(c) + " classes");
        }
        double* row = probs.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double zsum = 0.0;
        for (std::size_t i = 0; i < c; ++i) zsum += std::exp(row[i] - mx);
        const double lse = mx + std::log(zsum);
        loss += lse - row[t];
        for (std::size_t i = 0; i < c; ++i) row[i] = std::exp(row[i] - lse);
      }
      return push(kind, {in[0]}, Tensor::scalar(loss), attrs, std::move(probs));
    }
    case OpKind::kTranspose: {
      require_arity(kind, in, 1, 1);
      const auto& a = value(in[0]);
      if (a.rank() != 2) bad_shape(kind, a.shape(), "expected rank 2");
      Tensor out({a.cols(), a.rows()});
      MapMat(out.values().data(), a.cols(), a.rows()) =
          MapConstMat(a.values().data(), a.rows(), a.cols()).transpose();
      return push(kind, {in[0]}, std::move(out));
    }
    case OpKind::kTileRows: {
      require_arity(kind, in, 1, 1);
      const auto& v = value(in[0]);
      if (v.rank() != 1 || attrs.count == 0) {
        bad_shape(kind, v.shape(), "expected a vector and a positive count");
      }
      Tensor out({attrs.count, v.size()});
      for (std::size_t r = 0; r < attrs.count; ++r) {
        std::copy(v.values().begin(), v.values().end(),
                  out.values().begin() + r * v.size());
      }
      return push(kind, {in[0]}, std::move(out), attrs);
    }
    case OpKind::kSum: {
      require_arity(kind, in, 1, 1);
      const auto& a = value(in[0]);
      return push(kind, {in[0]},
                  Tensor::scalar(std::accumulate(a.values().begin(),
                                                 a.values().end(), 0.0)));
    }
    case OpKind::kConstant:
    case OpKind::kVariable:
    case OpKind::kParameter:
      throw std::invalid_argument(std::string(op_name(kind)) +
                                  ": leaf kinds cannot be applied");
  }
  throw std::invalid_argument("apply: unknown op kind " +
                              std::to_string(static_cast<int>(kind)));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::kMatmul, in);
}
NodeId Graph::add(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::kAdd, in);
}
NodeId Graph::sub(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::kSub, in);
}
NodeId Graph::mul(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::kMul, in);
}
NodeId Graph::scale(NodeId a, double factor) {
  OpAttrs attrs;
  attrs.scalar = factor;
  const NodeId in[] = {a};
  return apply(OpKind::kScale, in, attrs);
}
NodeId Graph::concat(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(OpKind::kConcat, in);
}
NodeId Graph::concat_rows(std::span<const NodeId> parts) {
  return apply(OpKind::kConcatRows, parts);
}

#define HISMATCH_UNARY(method, kind)   \
  NodeId Graph::method(NodeId a) {     \
    const NodeId in[] = {a};           \
    return apply(OpKind::kind, in);    \
  }
HISMATCH_UNARY(mean_rows, kMeanRows)
HISMATCH_UNARY(cosine, kCosine)
HISMATCH_UNARY(sigmoid, kSigmoid)
HISMATCH_UNARY(tanh, kTanh)
HISMATCH_UNARY(relu, kRelu)
HISMATCH_UNARY(softmax, kSoftmax)
HISMATCH_UNARY(log, kLog)
HISMATCH_UNARY(transpose, kTranspose)
HISMATCH_UNARY(sum, kSum)
#undef HISMATCH_UNARY

NodeId Graph::gather(NodeId table, std::vector<std::size_t> rows) {
  OpAttrs attrs;
  attrs.indices = std::move(rows);
  const NodeId in[] = {table};
  return apply(OpKind::kGather, in, attrs);
}

NodeId Graph::scatter_mean(NodeId src, std::vector<std::size_t> groups,
                           std::size_t num_groups) {
  OpAttrs attrs;
  attrs.indices = std::move(groups);
  attrs.count = num_groups;
  const NodeId in[] = {src};
  return apply(OpKind::kScatterMean, in, attrs);
}

NodeId Graph::conv1d(NodeId input, NodeId kernels) {
  const NodeId in[] = {input, kernels};
  return apply(OpKind::kConv1d, in);
}

NodeId Graph::conv1d(NodeId input, NodeId kernels, NodeId bias) {
  const NodeId in[] = {input, kernels, bias};
  return apply(OpKind::kConv1d, in);
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  const NodeId in[] = {a};
  return apply(OpKind::kReshape, in, attrs);
}

NodeId Graph::flatten(NodeId a) { return reshape(a, {value(a).size()}); }

NodeId Graph::dropout(NodeId a, double rate) {
  OpAttrs attrs;
  attrs.scalar = rate;
  const NodeId in[] = {a};
  return apply(OpKind::kDropout, in, attrs);
}

NodeId Graph::dot_rows(NodeId matrix, NodeId vec) {
  const NodeId in[] = {matrix, vec};
  return apply(OpKind::kDotRows, in);
}

NodeId Graph::cross_entropy(NodeId logits, std::vector<std::size_t> targets) {
  OpAttrs attrs;
  attrs.indices = std::move(targets);
  const NodeId in[] = {logits};
  return apply(OpKind::kCrossEntropy, in, attrs);
}

NodeId Graph::tile_rows(NodeId vec, std::size_t count) {
  OpAttrs attrs;
  attrs.count = count;
  const NodeId in[] = {vec};
  return apply(OpKind::kTileRows, in, attrs);
}

std::vector<double>& Graph::grad_slot(NodeId id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(value(id).size(), 0.0);
  return n.grad;
}

void Graph::backward(NodeId loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  for (auto& n : nodes_) {
    if (n.param && !n.param->tensor.has_grad()) n.param->tensor.zero_grad();
  }
  grad_slot(loss)[0] = 1.0;
  for (NodeId id = loss + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.param) {
      auto pg = n.param->tensor.grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      continue;
    }
    backward_node(id);
  }
}

void Graph::backward_node(NodeId id) {
  // Copy what we need: grad_slot() may grow vectors of other nodes but never
  // reallocates nodes_.
  const Node& n = nodes_[id];
  const auto& g = n.grad;
  const auto& in = n.inputs;
  auto wants = [&](std::size_t k) { return nodes_[in[k]].requires_grad; };

  switch (n.kind) {
    case OpKind::kMatmul: {
      const auto& a = value(in[0]);
      const auto& b = value(in[1]);
      const std::size_t m = a.rank() == 2 ? a.rows() : 1;
      MapConstMat gm(g.data(), m, b.cols());
      if (wants(0)) {
        MapMat(grad_slot(in[0]).data(), m, a.cols()).noalias() +=
            gm * MapConstMat(b.values().data(), b.rows(), b.cols()).transpose();
      }
      if (wants(1)) {
        MapMat(grad_slot(in[1]).data(), b.rows(), b.cols()).noalias() +=
            MapConstMat(a.values().data(), m, a.cols()).transpose() * gm;
      }
      break;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const auto& a = value(in[0]);
      const auto& b = value(in[1]);
      const bool same = a.shape() == b.shape();
      const std::size_t bn = b.size();
      if (wants(0)) {
        auto& ga = grad_slot(in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] += n.kind == OpKind::kMul ? g[i] * b[i] : g[i];
        }
      }
      if (wants(1)) {
        auto& gb = grad_slot(in[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = n.kind == OpKind::kMul   ? g[i] * a[i]
                           : n.kind == OpKind::kSub ? -g[i]
                                                    : g[i];
          gb[same ? i : i % bn] += d;
        }
      }
      break;
    }
    case OpKind::kScale: {
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.attrs.scalar;
      break;
    }
    case OpKind::kConcat: {
      const std::size_t ac = value(in[0]).cols();
      const std::size_t bc = value(in[1]).cols();
      const std::size_t outer = g.size() / (ac + bc);
      for (std::size_t r = 0; r < outer; ++r) {
        if (wants(0)) {
          auto& ga = grad_slot(in[0]);
          for (std::size_t c = 0; c < ac; ++c) ga[r * ac + c] += g[r * (ac + bc) + c];
        }
        if (wants(1)) {
          auto& gb = grad_slot(in[1]);
          for (std::size_t c = 0; c < bc; ++c) gb[r * bc + c] += g[r * (ac + bc) + ac + c];
        }
      }
      break;
    }
    case OpKind::kConcatRows: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t len = value(in[k]).size();
        if (wants(k)) {
          auto& gk = grad_slot(in[k]);
          for (std::size_t i = 0; i < len; ++i) gk[i] += g[offset + i];
        }
        offset += len;
      }
      break;
    }
    case OpKind::kMeanRows: {
      const auto& a = value(in[0]);
      const std::size_t rows = a.size() / a.cols();
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += g[i % a.cols()] / static_cast<double>(rows);
      }
      break;
    }
    case OpKind::kCosine:
    case OpKind::kSigmoid:
    case OpKind::kTanh:
    case OpKind::kRelu:
    case OpKind::kLog: {
      const auto& x = value(in[0]);
      const auto& y = n.value;
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0.0;
        switch (n.kind) {
          case OpKind::kCosine: d = -std::sin(x[i]); break;
          case OpKind::kSigmoid: d = y[i] * (1.0 - y[i]); break;
          case OpKind::kTanh: d = 1.0 - y[i] * y[i]; break;
          case OpKind::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
          default: d = 1.0 / x[i];
        }
        ga[i] += g[i] * d;
      }
      break;
    }
    case OpKind::kSoftmax: {
      const auto& y = n.value;
      const std::size_t c = y.cols();
      auto& ga = grad_slot(in[0]);
      for (std::size_t r = 0; r < y.size() / c; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < c; ++i) dot += g[r * c + i] * y[r * c + i];
        for (std::size_t i = 0; i < c; ++i) {
          ga[r * c + i] += y[r * c + i] * (g[r * c + i] - dot);
        }
      }
      break;
    }
    case OpKind::kGather: {
      const std::size_t d = value(in[0]).cols();
      auto& ga = grad_slot(in[0]);
      for (std::size_t k = 0; k < n.attrs.indices.size(); ++k) {
        const auto row = n.attrs.indices[k];
        for (std::size_t c = 0; c < d; ++c) ga[row * d + c] += g[k * d + c];
      }
      break;
    }
    case OpKind::kScatterMean: {
      const std::size_t d = value(in[0]).cols();
      auto& ga = grad_slot(in[0]);
      for (std::size_t r = 0; r < n.attrs.indices.size(); ++r) {
        const auto grp = n.attrs.indices[r];
        const double inv = n.aux[grp];
        for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[grp * d + c] * inv;
      }
      break;
    }
    case OpKind::kConv1d: {
      const auto& x = value(in[0]);
      const auto& k = value(in[1]);
      const std::size_t channels = x.dim(x.rank() - 2);
      const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
      const std::size_t width = x.cols();
      const std::size_t nk = k.dim(0), kw = k.dim(2);
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kw / 2);
      double* gx = wants(0) ? grad_slot(in[0]).data() : nullptr;
      double* gk = wants(1) ? grad_slot(in[1]).data() : nullptr;
      double* gb = in.size() == 3 && wants(2) ? grad_slot(in[2]).data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < nk; ++o) {
          const double* go = g.data() + (b * nk + o) * width;
          if (gb) {
            for (std::size_t p = 0; p < width; ++p) gb[o] += go[p];
          }
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t xoff = (b * channels + c) * width;
            const double* src = x.values().data() + xoff;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::size_t kidx = (o * channels + c) * kw + j;
              const double w = k[kidx];
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
              const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
              const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(
                  static_cast<std::ptrdiff_t>(width),
                  static_cast<std::ptrdiff_t>(width) - shift);
              double acc = 0.0;
              for (std::ptrdiff_t p = lo; p < hi; ++p) {
                acc += go[p] * src[p + shift];
                if (gx) gx[xoff + p + shift] += go[p] * w;
              }
              if (gk) gk[kidx] += acc;
            }
          }
        }
      }
      break;
    }
    case OpKind::kReshape: {
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case OpKind::kDropout: {
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += n.aux.empty() ? g[i] : g[i] * n.aux[i];
      }
      break;
    }
    case OpKind::kDotRows: {
      const auto& m = value(in[0]);
      const auto& v = value(in[1]);
      Eigen::Map<const Eigen::VectorXd> gv(g.data(), m.rows());
      if (wants(0)) {
        MapMat(grad_slot(in[0]).data(), m.rows(), m.cols()).noalias() +=
            gv * Eigen::Map<const Eigen::VectorXd>(v.values().data(), v.size())
                     .transpose();
      }
      if (wants(1)) {
        Eigen::Map<Eigen::VectorXd>(grad_slot(in[1]).data(), v.size())
            .noalias() +=
            MapConstMat(m.values().data(), m.rows(), m.cols()).transpose() * gv;
      }
      break;
    }
    case OpKind::kCrossEntropy: {
      const auto& z = value(in[0]);
      const std::size_t c = z.cols();
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * n.aux[i];
      for (std::size_t r = 0; r < n.attrs.indices.size(); ++r) {
        ga[r * c + n.attrs.indices[r]] -= g[0];
      }
      break;
    }
    case OpKind::kTranspose: {
      const auto& a = value(in[0]);
      MapMat(grad_slot(in[0]).data(), a.rows(), a.cols()) +=
          MapConstMat(g.data(), a.cols(), a.rows()).transpose();
      break;
    }
    case OpKind::kTileRows: {
      const std::size_t d = value(in[0]).size();
      auto& ga = grad_slot(in[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i % d] += g[i];
      break;
    }
    case OpKind::kSum: {
      auto& ga = grad_slot(in[0]);
      for (auto& v : ga) v += g[0];
      break;
    }
    case OpKind::kConstant:
    case OpKind::kVariable:
    case OpKind::kParameter:
      break;
  }
}

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double scalar_of(const Graph& g, NodeId out) {
  const auto& v = g.value(out);
  if (v.size() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " +
                     shape_str(v.shape()));
  }
  return v[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps, bool training,
                  std::uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  Graph graph(training, seed);
  const auto xid = graph.variable(x);
  const auto out = f(graph, xid);
  scalar_of(graph, out);
  graph.backward(out);
  const auto analytic = graph.grad(xid);

  auto eval = [&](const Tensor& probe) {
    Graph g(training, seed);
    return scalar_of(g, f(g, g.variable(probe)));
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval(probe);
    probe[i] = x[i] - eps;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * eps)));
  }
  return worst;
}

double grad_check(const std::function<NodeId(Graph&)>& build, Parameter& p,
                  double eps, std::span<const std::size_t> coords, bool training,
                  std::uint64_t seed) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be > 0");
  p.tensor.zero_grad();
  std::vector<double> analytic;
  {
    Graph graph(training, seed);
    const auto out = build(graph);
    scalar_of(graph, out);
    graph.backward(out);
    // A parameter that never entered the graph has an all-zero gradient.
    analytic.assign(p.tensor.grad().begin(), p.tensor.grad().end());
  }
  auto eval = [&] {
    Graph g(training, seed);
    return scalar_of(g, build(g));
  };
  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(p.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }
  double worst = 0.0;
  for (auto i : coords) {
    const double orig = p.tensor[i];
    p.tensor[i] = orig + eps;
    const double up = eval();
    p.tensor[i] = orig - eps;
    const double down = eval();
    p.tensor[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * eps)));
  }
  p.tensor.clear_grad();
  return worst;
}

void adam_step(std::span<const NamedParameter> params,
               const AdamOptions& options) {
  for (const auto& [name, p] : params) {
    if (!p->tensor.has_grad()) {
      throw std::invalid_argument("adam_step: parameter '" + name +
                                  "' has no gradient");
    }
  }
  for (const auto& np : params) {
    auto& p = *np.param;
    if (p.m.size() != p.size()) p.m.assign(p.size(), 0.0);
    if (p.v.size() != p.size()) p.v.assign(p.size(), 0.0);
    ++p.step;
    const double t = static_cast<double>(p.step);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    auto w = p.tensor.values();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.m[i] = options.beta1 * p.m[i] + (1.0 - options.beta1) * g[i];
      p.v[i] = options.beta2 * p.v[i] + (1.0 - options.beta2) * g[i] * g[i];
      const double mhat = p.m[i] / c1;
      const double vhat = p.v[i] / c2;
      w[i] -= options.lr * mhat / (std::sqrt(vhat) + options.eps);
    }
    std::fill(g.begin(), g.end(), 0.0);
  }
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
  double sq = 0.0;
  for (const auto& np : params) {
    for (double v : np.param->tensor.grad()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const auto& np : params) {
      for (double& v : np.param->tensor.grad()) v *= factor;
    }
  }
  return norm;
}

}  // namespace hismatch
