#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dan/ops.hpp"
#include "dan/rng.hpp"
#include "dan/tensor.hpp"

namespace dan {

enum class OpKind {
  kLeaf,
  kConv2d,
  kMaxPool2,
  kRelu,
  kSigmoid,
  kAffine,
  kDropout,
  kFlatten,
  kAdd,
  kMul,
  kScale,
  kSum,
  kWeightedBce,
};

using NodeId = std::size_t;

// Tape-based reverse-mode autodiff. Nodes are appended in execution order,
// which is a topological order; backward walks it in reverse once.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  NodeId Leaf(Tensor<T> value, bool requires_grad);

  NodeId Conv2d(NodeId input, NodeId kernels, NodeId bias, int stride, int padding);
  NodeId MaxPool2(NodeId input);
  NodeId Relu(NodeId input);
  NodeId Sigmoid(NodeId input);
  NodeId Affine(NodeId input, NodeId weight, NodeId bias);
  NodeId Dropout(NodeId input, double rate, bool training, Rng& rng);
  // [B, ...] -> [B, prod(...)]
  NodeId Flatten(NodeId input);
  NodeId Add(NodeId a, NodeId b);
  NodeId Mul(NodeId a, NodeId b);
  NodeId Scale(NodeId input, T factor);
  NodeId Sum(NodeId input);
  // Weighted binary cross-entropy on logits [B,N]; labels [B,N]; weights
  // per class, held constant. Mean over the batch.
  NodeId WeightedBce(NodeId logits, const Tensor<double>& labels, std::span<const double> weights);

  // loss must be a single-element node.
  void Backward(NodeId loss);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  // Null until backward reached the node.
  const Tensor<T>* grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Argmax offsets saved by a MaxPool2 node.
  const std::vector<std::uint32_t>& pool_argmax(NodeId id) const;

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    std::vector<std::uint32_t> indices;  // pool argmax
    Tensor<T> saved;                     // dropout mask, loss gradient
    int stride = 1;
    int padding = 0;
    T factor = T(1);
  };

  NodeId Push(Node node);
  bool AnyRequiresGrad(std::initializer_list<NodeId> ids) const;
  Tensor<T>* GradBuffer(NodeId id);
  void BackwardNode(NodeId id);

  std::vector<Node> nodes_;
};

}  // namespace dan
