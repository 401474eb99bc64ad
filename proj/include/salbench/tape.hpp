#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "salbench/tensor.hpp"

namespace salbench::ad {

using NodeId = int32_t;

enum class OpKind {
  kLeaf,
  kMatMul,
  kTranspose,
  kAdd,
  kMul,
  kScale,
  kAddBias,
  kSigmoid,
  kTanh,
  kExp,
  kLog,
  kSoftmaxRows,
  kLayerNorm,
  kConcat,
  kSlice,
  kReshape,
  kGatherRows,
  kPick,
  kSumAll,
  kMeanAll,
};

/// Gradients of a scalar output with respect to the tape's grad-enabled
/// leaves, keyed by leaf node id.
class GradientMap {
 public:
  bool contains(NodeId id) const { return grads_.count(id) > 0; }
  const Tensor& at(NodeId id) const { return grads_.at(id); }
  void set(NodeId id, Tensor g) { grads_[id] = std::move(g); }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Reverse-mode differentiation record. A tape is built once per forward
/// pass (define-by-run: each op call computes its value eagerly) and
/// discarded after backward. Tapes are single-owner; distinct tapes may be
/// evaluated on distinct threads.
class Tape {
 public:
  /// Registers an input tensor. Leaves with requires_grad are the
  /// differentiation targets reported by backward().
  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  /// rows of a [m,n] plus bias [n]; also accepts [n]+[n].
  NodeId add_bias(NodeId a, NodeId bias);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  /// Softmax over the last axis, row-wise for rank 2.
  NodeId softmax_rows(NodeId a);
  /// Row-wise layer normalization with learned gain/shift over the last axis.
  NodeId layer_norm(NodeId a, NodeId gain, NodeId shift, double eps = 1e-5);
  NodeId concat(const std::vector<NodeId>& parts, size_t axis);
  NodeId slice(NodeId a, const Shape& offsets, const Shape& sizes);
  NodeId reshape(NodeId a, Shape new_shape);
  /// Embedding-row gather: table [V,d] + row ids -> [T,d]. Backward
  /// scatter-adds into the table gradient (training mode); per-occurrence
  /// gradients for saliency are obtained by differentiating an explicit
  /// embedding leaf instead.
  NodeId gather_rows(NodeId table, std::vector<int> rows);
  /// Picks entries (i,j) of a rank-2 tensor into a vector. With a single
  /// index pair this is scalar index selection.
  NodeId pick(NodeId a, std::vector<std::pair<int, int>> indices);
  NodeId pick(NodeId a, int row, int col) { return pick(a, {{row, col}}); }
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  size_t size() const { return nodes_.size(); }

  /// Reverse accumulation from a scalar output node. Does not mutate the
  /// tape; calling it twice yields bit-identical results.
  GradientMap backward(NodeId output) const;

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<NodeId> parents;
    bool requires_grad = false;
    // op-specific extras
    double scalar = 0.0;              // kScale factor, kLayerNorm eps
    std::vector<int> idx;             // kGatherRows rows, kPick flattened pairs
    Shape offsets, sizes;             // kSlice; kConcat part split sizes in `sizes`
    size_t axis = 0;                  // kConcat
    Shape prev_shape;                 // kReshape
    Tensor cached;                    // kLayerNorm: normalized rows + inv-std per row
  };

  NodeId push(Node n);
  const Tensor& val(NodeId id) const { return nodes_[id].value; }
  bool needs_grad(NodeId id) const { return nodes_[id].requires_grad; }

  std::vector<Node> nodes_;
};

/// Builds a scalar tape function around `point`: the callback receives a
/// fresh tape plus the leaf holding the point and returns the output node.
using ScalarFn = std::function<NodeId(Tape&, NodeId)>;

/// Max over coordinates of |analytic - central difference| /
/// (|analytic| + |central difference| + 1e-12). Non-finite results
/// propagate into the returned value.
double gradient_check(const ScalarFn& f, const Tensor& point, double epsilon = 1e-5);

}  // namespace salbench::ad
