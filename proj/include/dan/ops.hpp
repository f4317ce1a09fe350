#pragma once

#include <cstdint>
#include <vector>

#include "dan/rng.hpp"
#include "dan/tensor.hpp"

// Forward and backward kernels for the primitive ops. Backward kernels
// accumulate into the gradient buffers they are given; a null pointer
// means that gradient is not needed.
namespace dan::ops {

struct ConvGeometry {
  std::int64_t batch, in_channels, height, width;
  std::int64_t out_channels, kernel_h, kernel_w;
  std::int64_t out_h, out_w;
  int stride, padding;
};

// Input [C,H,W] or [B,C,H,W]; kernels [C_out,C_in,kH,kW]; bias [C_out].
// Cross-correlation, no kernel flip.
template <typename T>
ConvGeometry ConvShape(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                       int stride, int padding);

template <typename T>
Tensor<T> Conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, int stride,
                 int padding);

template <typename T>
void Conv2dBackward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_output,
                    int stride, int padding, Tensor<T>* grad_input, Tensor<T>* grad_kernels,
                    Tensor<T>* grad_bias);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input offset per output element
};

// 2x2 window, stride 2. Input [C,H,W] or [B,C,H,W] with even H, W.
template <typename T>
PoolResult<T> MaxPool2(const Tensor<T>& input);

template <typename T>
void MaxPool2Backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_output,
                      const Shape& input_shape, Tensor<T>* grad_input);

template <typename T>
Tensor<T> Relu(const Tensor<T>& input);

// Gradient passes iff x > 0.
template <typename T>
void ReluBackward(const Tensor<T>& input, const Tensor<T>& grad_output, Tensor<T>* grad_input);

template <typename T>
T SigmoidScalar(T x);

// Output clamped to [denorm_min, 1 - ulp] so it stays strictly inside (0,1).
template <typename T>
Tensor<T> Sigmoid(const Tensor<T>& input);

template <typename T>
void SigmoidBackward(const Tensor<T>& output, const Tensor<T>& grad_output, Tensor<T>* grad_input);

// Input [D_in] or [B,D_in]; weight [D_out,D_in]; bias [D_out].
template <typename T>
Tensor<T> Affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void AffineBackward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_output,
                    Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate) per element; empty when identity
};

// Inverted dropout. Eval mode and rate 0 are the identity.
template <typename T>
DropoutResult<T> Dropout(const Tensor<T>& input, double rate, bool training, Rng& rng);

template <typename T>
void DropoutBackward(const Tensor<T>& mask, const Tensor<T>& grad_output, Tensor<T>* grad_input);

// Elementwise a += b, shapes must match.
template <typename T>
void Accumulate(Tensor<T>& into, const Tensor<T>& from);

}  // namespace dan::ops
