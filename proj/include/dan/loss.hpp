#pragma once

#include <span>
#include <vector>

#include "dan/tensor.hpp"

namespace dan {

// Per-class weight w_k = 1 - mean_j y_kj over the batch. Labels [B,N] with
// values in {0, 0.5, 1}.
std::vector<double> BatchClassWeights(const TensorD& labels);

// Values must be exactly 0, 0.5 or 1.
void ValidateLabelBatch(const TensorD& labels);

// Stable -[y log s(o) + (1-y) log(1-s(o))].
double BinaryCrossEntropyWithLogit(double logit, double target);

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d loss / d logits, same shape as logits
};

// L = (1/B) sum_j sum_k w_k * bce(o_kj, y_kj); dL/do = w_k (s(o) - y) / B.
// Weights are constants for differentiation.
template <typename T>
LossResult<T> WeightedCeLoss(const Tensor<T>& logits, const TensorD& labels, std::span<const double> weights);

}  // namespace dan
