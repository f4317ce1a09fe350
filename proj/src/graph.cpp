#include "dan/graph.hpp"

#include "dan/loss.hpp"

namespace dan {

template <typename T>
NodeId Graph<T>::Push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

template <typename T>
bool Graph<T>::AnyRequiresGrad(std::initializer_list<NodeId> ids) const {
  for (NodeId id : ids) {
    if (nodes_.at(id).requires_grad) return true;
  }
  return false;
}

template <typename T>
const Tensor<T>* Graph<T>::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
const std::vector<std::uint32_t>& Graph<T>::pool_argmax(NodeId id) const {
  const Node& n = nodes_.at(id);
  Require(n.kind == OpKind::kMaxPool2, ErrorKind::kContract, "node is not a maxpool2");
  return n.indices;
}

template <typename T>
NodeId Graph<T>::Leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Conv2d(NodeId input, NodeId kernels, NodeId bias, int stride, int padding) {
  Node n;
  n.kind = OpKind::kConv2d;
  n.value = ops::Conv2d(value(input), value(kernels), value(bias), stride, padding);
  n.inputs = {input, kernels, bias};
  n.requires_grad = AnyRequiresGrad({input, kernels, bias});
  n.stride = stride;
  n.padding = padding;
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::MaxPool2(NodeId input) {
  auto pooled = ops::MaxPool2(value(input));
  Node n;
  n.kind = OpKind::kMaxPool2;
  n.value = std::move(pooled.output);
  n.indices = std::move(pooled.argmax);
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Relu(NodeId input) {
  Node n;
  n.kind = OpKind::kRelu;
  n.value = ops::Relu(value(input));
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Sigmoid(NodeId input) {
  Node n;
  n.kind = OpKind::kSigmoid;
  n.value = ops::Sigmoid(value(input));
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Affine(NodeId input, NodeId weight, NodeId bias) {
  Node n;
  n.kind = OpKind::kAffine;
  n.value = ops::Affine(value(input), value(weight), value(bias));
  n.inputs = {input, weight, bias};
  n.requires_grad = AnyRequiresGrad({input, weight, bias});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Dropout(NodeId input, double rate, bool training, Rng& rng) {
  auto dropped = ops::Dropout(value(input), rate, training, rng);
  Node n;
  n.kind = OpKind::kDropout;
  n.value = std::move(dropped.output);
  n.saved = std::move(dropped.mask);
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Flatten(NodeId input) {
  const Tensor<T>& v = value(input);
  Require(v.rank() >= 1, ErrorKind::kDimension, "flatten needs a batch axis");
  const std::int64_t batch = v.dim(0);
  Node n;
  n.kind = OpKind::kFlatten;
  n.value = v.reshaped({batch, static_cast<std::int64_t>(v.numel()) / batch});
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Add(NodeId a, NodeId b) {
  Require(value(a).shape() == value(b).shape(), ErrorKind::kDimension, "add shape mismatch");
  Node n;
  n.kind = OpKind::kAdd;
  n.value = value(a);
  ops::Accumulate(n.value, value(b));
  n.inputs = {a, b};
  n.requires_grad = AnyRequiresGrad({a, b});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Mul(NodeId a, NodeId b) {
  Require(value(a).shape() == value(b).shape(), ErrorKind::kDimension, "mul shape mismatch");
  Node n;
  n.kind = OpKind::kMul;
  n.value = value(a);
  const Tensor<T>& vb = value(b);
  for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= vb[i];
  n.inputs = {a, b};
  n.requires_grad = AnyRequiresGrad({a, b});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Scale(NodeId input, T factor) {
  Node n;
  n.kind = OpKind::kScale;
  n.value = value(input);
  for (auto& v : n.value.data()) v *= factor;
  n.factor = factor;
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::Sum(NodeId input) {
  T acc = T(0);
  for (T v : value(input).data()) acc += v;
  Node n;
  n.kind = OpKind::kSum;
  n.value = Tensor<T>({1}, acc);
  n.inputs = {input};
  n.requires_grad = AnyRequiresGrad({input});
  return Push(std::move(n));
}

template <typename T>
NodeId Graph<T>::WeightedBce(NodeId logits, const Tensor<double>& labels, std::span<const double> weights) {
  auto loss = WeightedCeLoss(value(logits), labels, weights);
  Node n;
  n.kind = OpKind::kWeightedBce;
  n.value = Tensor<T>({1}, static_cast<T>(loss.value));
  n.saved = std::move(loss.grad);
  n.inputs = {logits};
  n.requires_grad = AnyRequiresGrad({logits});
  return Push(std::move(n));
}

template <typename T>
Tensor<T>* Graph<T>::GradBuffer(NodeId id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
void Graph<T>::Backward(NodeId loss) {
  Require(loss < nodes_.size(), ErrorKind::kContract, "backward from unknown node");
  Require(nodes_[loss].value.numel() == 1, ErrorKind::kContract,
          "backward needs a scalar loss, got shape " + ShapeString(nodes_[loss].value.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  if (!nodes_[loss].requires_grad) return;
  GradBuffer(loss)->fill(T(1));
  for (NodeId id = loss + 1; id-- > 0;) {
    if (nodes_[id].has_grad && nodes_[id].kind != OpKind::kLeaf) BackwardNode(id);
  }
}

template <typename T>
void Graph<T>::BackwardNode(NodeId id) {
  // nodes_ is not resized during backward; the reference stays valid.
  Node& n = nodes_[id];
  const Tensor<T>& g = n.grad;
  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kConv2d:
      ops::Conv2dBackward(value(n.inputs[0]), value(n.inputs[1]), g, n.stride, n.padding,
                          GradBuffer(n.inputs[0]), GradBuffer(n.inputs[1]), GradBuffer(n.inputs[2]));
      break;
    case OpKind::kMaxPool2:
      if (auto* gi = GradBuffer(n.inputs[0])) {
        ops::MaxPool2Backward(n.indices, g, value(n.inputs[0]).shape(), gi);
      }
      break;
    case OpKind::kRelu:
      if (auto* gi = GradBuffer(n.inputs[0])) ops::ReluBackward(value(n.inputs[0]), g, gi);
      break;
    case OpKind::kSigmoid:
      if (auto* gi = GradBuffer(n.inputs[0])) ops::SigmoidBackward(n.value, g, gi);
      break;
    case OpKind::kAffine:
      ops::AffineBackward(value(n.inputs[0]), value(n.inputs[1]), g, GradBuffer(n.inputs[0]),
                          GradBuffer(n.inputs[1]), GradBuffer(n.inputs[2]));
      break;
    case OpKind::kDropout:
      if (auto* gi = GradBuffer(n.inputs[0])) ops::DropoutBackward(n.saved, g, gi);
      break;
    case OpKind::kFlatten:
      if (auto* gi = GradBuffer(n.inputs[0])) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
      }
      break;
    case OpKind::kAdd:
      for (NodeId in : n.inputs) {
        if (auto* gi = GradBuffer(in)) ops::Accumulate(*gi, g);
      }
      break;
    case OpKind::kMul: {
      const Tensor<T>& a = value(n.inputs[0]);
      const Tensor<T>& b = value(n.inputs[1]);
      if (auto* ga = GradBuffer(n.inputs[0])) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * b[i];
      }
      if (auto* gb = GradBuffer(n.inputs[1])) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::kScale:
      if (auto* gi = GradBuffer(n.inputs[0])) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i] * n.factor;
      }
      break;
    case OpKind::kSum:
      if (auto* gi = GradBuffer(n.inputs[0])) {
        for (auto& v : gi->data()) v += g[0];
      }
      break;
    case OpKind::kWeightedBce:
      if (auto* gi = GradBuffer(n.inputs[0])) {
        for (std::size_t i = 0; i < gi->numel(); ++i) (*gi)[i] += g[0] * n.saved[i];
      }
      break;
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace dan
