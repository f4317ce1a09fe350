#include "dan/loss.hpp"

#include <cmath>

#include "dan/ops.hpp"

namespace dan {

void ValidateLabelBatch(const TensorD& labels) {
  Require(labels.rank() == 2, ErrorKind::kDimension, "label batch must be [B,N]");
  for (std::size_t i = 0; i < labels.numel(); ++i) {
    const double y = labels[i];
    Require(y == 0.0 || y == 0.5 || y == 1.0, ErrorKind::kParameter,
            "label value " + std::to_string(y) + " outside {0, 0.5, 1}");
  }
}

std::vector<double> BatchClassWeights(const TensorD& labels) {
  Require(labels.rank() == 2, ErrorKind::kParameter, "batch_class_weights needs a [B,N] label batch");
  const std::int64_t batch = labels.dim(0);
  const std::int64_t classes = labels.dim(1);
  ValidateLabelBatch(labels);
  std::vector<double> w(static_cast<std::size_t>(classes), 0.0);
  for (std::int64_t j = 0; j < batch; ++j) {
    for (std::int64_t k = 0; k < classes; ++k) w[k] += labels[j * classes + k];
  }
  for (auto& v : w) v = 1.0 - v / static_cast<double>(batch);
  return w;
}

double BinaryCrossEntropyWithLogit(double logit, double target) {
  // max(o,0) - o*y + log(1 + exp(-|o|))
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

template <typename T>
LossResult<T> WeightedCeLoss(const Tensor<T>& logits, const TensorD& labels, std::span<const double> weights) {
  Require(logits.rank() == 2, ErrorKind::kDimension, "loss logits must be [B,N]");
  Require(labels.shape() == logits.shape(), ErrorKind::kDimension,
          "label shape " + ShapeString(labels.shape()) + " != logits " + ShapeString(logits.shape()));
  const std::int64_t batch = logits.dim(0);
  const std::int64_t classes = logits.dim(1);
  Require(static_cast<std::int64_t>(weights.size()) == classes, ErrorKind::kDimension,
          "weight vector length " + std::to_string(weights.size()) + " != class count " +
              std::to_string(classes));
  RequireFinite(logits, "loss logits");
  LossResult<T> result{0.0, Tensor<T>(logits.shape())};
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (std::int64_t j = 0; j < batch; ++j) {
    for (std::int64_t k = 0; k < classes; ++k) {
      const std::size_t idx = static_cast<std::size_t>(j * classes + k);
      const double o = logits[idx];
      const double y = labels[idx];
      total += weights[k] * BinaryCrossEntropyWithLogit(o, y);
      const double s = ops::SigmoidScalar(o);
      result.grad[idx] = static_cast<T>(weights[k] * (s - y) * inv_batch);
    }
  }
  result.value = total * inv_batch;
  return result;
}

template LossResult<float> WeightedCeLoss(const Tensor<float>&, const TensorD&, std::span<const double>);
template LossResult<double> WeightedCeLoss(const Tensor<double>&, const TensorD&, std::span<const double>);

}  // namespace dan
