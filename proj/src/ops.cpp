#include "dan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blas.hpp"

namespace dan::ops {
namespace {

// Output columns [lo, hi) read inside the input row for kernel offset kx.
inline void ValidColumns(const ConvGeometry& g, std::int64_t kx, std::int64_t* lo, std::int64_t* hi) {
  const std::int64_t shift = kx - g.padding;
  *lo = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
  const std::int64_t last = g.width - 1 - shift;
  *hi = last < 0 ? 0 : std::min<std::int64_t>(g.out_w, last / g.stride + 1);
  *lo = std::min(*lo, *hi);
}

template <typename T>
void Im2Col(const T* image, const ConvGeometry& g, T* col) {
  const std::int64_t spatial = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * spatial;
        std::int64_t lo, hi;
        ValidColumns(g, kx, &lo, &hi);
        const std::int64_t shift = kx - g.padding;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          T* out = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* in_row = image + (c * g.height + iy) * g.width;
          std::fill(out, out + lo, T(0));
          if (g.stride == 1) {
            std::copy(in_row + lo + shift, in_row + hi + shift, out + lo);
          } else {
            for (std::int64_t ox = lo; ox < hi; ++ox) out[ox] = in_row[ox * g.stride + shift];
          }
          std::fill(out + hi, out + g.out_w, T(0));
        }
      }
    }
  }
}

template <typename T>
void Col2ImAdd(const T* col, const ConvGeometry& g, T* image) {
  const std::int64_t spatial = g.out_h * g.out_w;
  for (std::int64_t c = 0; c < g.in_channels; ++c) {
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * spatial;
        std::int64_t lo, hi;
        ValidColumns(g, kx, &lo, &hi);
        const std::int64_t shift = kx - g.padding;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const std::int64_t iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* in_row = image + (c * g.height + iy) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::int64_t ox = lo; ox < hi; ++ox) in_row[ox * g.stride + shift] += src[ox];
        }
      }
    }
  }
}

template <typename T>
void EnsureGrad(Tensor<T>* grad, const Shape& shape) {
  if (grad->empty()) {
    *grad = Tensor<T>(shape);
  } else {
    Require(grad->shape() == shape, ErrorKind::kDimension,
            "gradient buffer shape " + ShapeString(grad->shape()) + " != " + ShapeString(shape));
  }
}

}  // namespace

template <typename T>
ConvGeometry ConvShape(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, int stride,
                       int padding) {
  Require(input.rank() == 3 || input.rank() == 4, ErrorKind::kDimension,
          "conv2d input must be [C,H,W] or [B,C,H,W], got " + ShapeString(input.shape()));
  Require(kernels.rank() == 4, ErrorKind::kDimension, "conv2d kernels must be [C_out,C_in,kH,kW]");
  Require(stride >= 1, ErrorKind::kParameter, "conv2d stride must be >= 1");
  Require(padding >= 0, ErrorKind::kParameter, "conv2d padding must be >= 0");
  const std::size_t off = input.rank() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = input.rank() == 4 ? input.dim(0) : 1;
  g.in_channels = input.dim(off);
  g.height = input.dim(off + 1);
  g.width = input.dim(off + 2);
  g.out_channels = kernels.dim(0);
  g.kernel_h = kernels.dim(2);
  g.kernel_w = kernels.dim(3);
  g.stride = stride;
  g.padding = padding;
  Require(kernels.dim(1) == g.in_channels, ErrorKind::kDimension,
          "conv2d kernel channels " + std::to_string(kernels.dim(1)) + " != input channels " +
              std::to_string(g.in_channels));
  Require(bias.rank() == 1 && bias.dim(0) == g.out_channels, ErrorKind::kDimension,
          "conv2d bias must be [C_out]");
  Require(g.kernel_h <= g.height + 2 * padding && g.kernel_w <= g.width + 2 * padding,
          ErrorKind::kDimension, "conv2d kernel larger than padded input");
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

template <typename T>
Tensor<T> Conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias, int stride,
                 int padding) {
  const ConvGeometry g = ConvShape(input, kernels, bias, stride, padding);
  RequireFinite(input, "conv2d input");
  Shape out_shape = input.rank() == 4 ? Shape{g.batch, g.out_channels, g.out_h, g.out_w}
                                      : Shape{g.out_channels, g.out_h, g.out_w};
  Tensor<T> output(out_shape);
  const std::int64_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t spatial = g.out_h * g.out_w;
  std::vector<T> col(static_cast<std::size_t>(patch * spatial));
  const std::int64_t in_stride = g.in_channels * g.height * g.width;
  const std::int64_t out_stride = g.out_channels * spatial;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    T* out = output.raw() + b * out_stride;
    for (std::int64_t c = 0; c < g.out_channels; ++c) {
      std::fill(out + c * spatial, out + (c + 1) * spatial, bias[c]);
    }
    Im2Col(input.raw() + b * in_stride, g, col.data());
    blas::Gemm(false, false, static_cast<int>(g.out_channels), static_cast<int>(spatial),
               static_cast<int>(patch), T(1), kernels.raw(), static_cast<int>(patch), col.data(),
               static_cast<int>(spatial), T(1), out, static_cast<int>(spatial));
  }
  return output;
}

template <typename T>
void Conv2dBackward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_output,
                    int stride, int padding, Tensor<T>* grad_input, Tensor<T>* grad_kernels,
                    Tensor<T>* grad_bias) {
  const ConvGeometry g = ConvShape(input, kernels, Tensor<T>({kernels.dim(0)}), stride, padding);
  const std::int64_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t spatial = g.out_h * g.out_w;
  Require(grad_output.numel() == static_cast<std::size_t>(g.batch * g.out_channels * spatial),
          ErrorKind::kDimension, "conv2d grad_output shape mismatch");
  if (grad_input) EnsureGrad(grad_input, input.shape());
  if (grad_kernels) EnsureGrad(grad_kernels, kernels.shape());
  if (grad_bias) EnsureGrad(grad_bias, Shape{g.out_channels});
  std::vector<T> col(static_cast<std::size_t>(patch * spatial));
  const std::int64_t in_stride = g.in_channels * g.height * g.width;
  const std::int64_t out_stride = g.out_channels * spatial;
  for (std::int64_t b = 0; b < g.batch; ++b) {
    const T* dout = grad_output.raw() + b * out_stride;
    if (grad_bias) {
      for (std::int64_t c = 0; c < g.out_channels; ++c) {
        T acc = T(0);
        for (std::int64_t i = 0; i < spatial; ++i) acc += dout[c * spatial + i];
        (*grad_bias)[c] += acc;
      }
    }
    if (grad_kernels) {
      Im2Col(input.raw() + b * in_stride, g, col.data());
      blas::Gemm(false, true, static_cast<int>(g.out_channels), static_cast<int>(patch),
                 static_cast<int>(spatial), T(1), dout, static_cast<int>(spatial), col.data(),
                 static_cast<int>(spatial), T(1), grad_kernels->raw(), static_cast<int>(patch));
    }
    if (grad_input) {
      blas::Gemm(true, false, static_cast<int>(patch), static_cast<int>(spatial),
                 static_cast<int>(g.out_channels), T(1), kernels.raw(), static_cast<int>(patch), dout,
                 static_cast<int>(spatial), T(0), col.data(), static_cast<int>(spatial));
      Col2ImAdd(col.data(), g, grad_input->raw() + b * in_stride);
    }
  }
}

template <typename T>
PoolResult<T> MaxPool2(const Tensor<T>& input) {
  Require(input.rank() == 3 || input.rank() == 4, ErrorKind::kDimension,
          "maxpool2 input must be [C,H,W] or [B,C,H,W]");
  const std::size_t r = input.rank();
  const std::int64_t h = input.dim(r - 2);
  const std::int64_t w = input.dim(r - 1);
  Require(h % 2 == 0 && w % 2 == 0, ErrorKind::kDimension,
          "maxpool2 needs even spatial dims, got " + ShapeString(input.shape()));
  Shape out_shape = input.shape();
  out_shape[r - 2] = h / 2;
  out_shape[r - 1] = w / 2;
  PoolResult<T> result{Tensor<T>(out_shape), {}};
  result.argmax.resize(result.output.numel());
  const std::int64_t planes = static_cast<std::int64_t>(input.numel()) / (h * w);
  const std::int64_t oh = h / 2;
  const std::int64_t ow = w / 2;
  for (std::int64_t p = 0; p < planes; ++p) {
    const std::int64_t base = p * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::int64_t best = base + (2 * oy) * w + 2 * ox;
        for (std::int64_t dy = 0; dy < 2; ++dy) {
          for (std::int64_t dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::int64_t o = (p * oh + oy) * ow + ox;
        result.output[o] = input[best];
        result.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

template <typename T>
void MaxPool2Backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_output,
                      const Shape& input_shape, Tensor<T>* grad_input) {
  Require(argmax.size() == grad_output.numel(), ErrorKind::kDimension, "maxpool2 backward size mismatch");
  EnsureGrad(grad_input, input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) (*grad_input)[argmax[o]] += grad_output[o];
}

template <typename T>
Tensor<T> Relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
void ReluBackward(const Tensor<T>& input, const Tensor<T>& grad_output, Tensor<T>* grad_input) {
  EnsureGrad(grad_input, input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) {
    if (input[i] > T(0)) (*grad_input)[i] += grad_output[i];
  }
}

template <typename T>
T SigmoidScalar(T x) {
  T s;
  if (x >= T(0)) {
    s = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T(1) + e);
  }
  const T lo = std::numeric_limits<T>::denorm_min();
  const T hi = std::nextafter(T(1), T(0));
  return std::clamp(s, lo, hi);
}

template <typename T>
Tensor<T> Sigmoid(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = SigmoidScalar(v);
  return out;
}

template <typename T>
void SigmoidBackward(const Tensor<T>& output, const Tensor<T>& grad_output, Tensor<T>* grad_input) {
  EnsureGrad(grad_input, output.shape());
  for (std::size_t i = 0; i < output.numel(); ++i) {
    const T s = output[i];
    (*grad_input)[i] += grad_output[i] * s * (T(1) - s);
  }
}

template <typename T>
Tensor<T> Affine(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  Require(weight.rank() == 2, ErrorKind::kDimension, "affine weight must be [D_out,D_in]");
  Require(input.rank() == 1 || input.rank() == 2, ErrorKind::kDimension,
          "affine input must be [D_in] or [B,D_in]");
  const std::int64_t d_out = weight.dim(0);
  const std::int64_t d_in = weight.dim(1);
  const std::int64_t batch = input.rank() == 2 ? input.dim(0) : 1;
  Require(input.shape().back() == d_in, ErrorKind::kDimension,
          "affine input " + ShapeString(input.shape()) + " does not match weight " +
              ShapeString(weight.shape()));
  Require(bias.rank() == 1 && bias.dim(0) == d_out, ErrorKind::kDimension, "affine bias must be [D_out]");
  RequireFinite(input, "affine input");
  Tensor<T> out(input.rank() == 2 ? Shape{batch, d_out} : Shape{d_out});
  for (std::int64_t b = 0; b < batch; ++b) {
    std::copy(bias.data().begin(), bias.data().end(), out.raw() + b * d_out);
  }
  blas::Gemm(false, true, static_cast<int>(batch), static_cast<int>(d_out), static_cast<int>(d_in), T(1),
             input.raw(), static_cast<int>(d_in), weight.raw(), static_cast<int>(d_in), T(1), out.raw(),
             static_cast<int>(d_out));
  return out;
}

template <typename T>
void AffineBackward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_output,
                    Tensor<T>* grad_input, Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const std::int64_t d_out = weight.dim(0);
  const std::int64_t d_in = weight.dim(1);
  const std::int64_t batch = input.rank() == 2 ? input.dim(0) : 1;
  Require(grad_output.numel() == static_cast<std::size_t>(batch * d_out), ErrorKind::kDimension,
          "affine grad_output shape mismatch");
  if (grad_input) {
    EnsureGrad(grad_input, input.shape());
    blas::Gemm(false, false, static_cast<int>(batch), static_cast<int>(d_in), static_cast<int>(d_out), T(1),
               grad_output.raw(), static_cast<int>(d_out), weight.raw(), static_cast<int>(d_in), T(1),
               grad_input->raw(), static_cast<int>(d_in));
  }
  if (grad_weight) {
    EnsureGrad(grad_weight, weight.shape());
    blas::Gemm(true, false, static_cast<int>(d_out), static_cast<int>(d_in), static_cast<int>(batch), T(1),
               grad_output.raw(), static_cast<int>(d_out), input.raw(), static_cast<int>(d_in), T(1),
               grad_weight->raw(), static_cast<int>(d_in));
  }
  if (grad_bias) {
    EnsureGrad(grad_bias, Shape{d_out});
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t o = 0; o < d_out; ++o) (*grad_bias)[o] += grad_output[b * d_out + o];
    }
  }
}

template <typename T>
DropoutResult<T> Dropout(const Tensor<T>& input, double rate, bool training, Rng& rng) {
  Require(rate >= 0.0 && rate < 1.0, ErrorKind::kParameter,
          "dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return {input, Tensor<T>()};
  DropoutResult<T> result{Tensor<T>(input.shape()), Tensor<T>(input.shape())};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const T m = rng.uniform() < rate ? T(0) : keep_scale;
    result.mask[i] = m;
    result.output[i] = input[i] * m;
  }
  return result;
}

template <typename T>
void DropoutBackward(const Tensor<T>& mask, const Tensor<T>& grad_output, Tensor<T>* grad_input) {
  EnsureGrad(grad_input, grad_output.shape());
  if (mask.empty()) {
    Accumulate(*grad_input, grad_output);
    return;
  }
  for (std::size_t i = 0; i < mask.numel(); ++i) (*grad_input)[i] += grad_output[i] * mask[i];
}

template <typename T>
void Accumulate(Tensor<T>& into, const Tensor<T>& from) {
  Require(into.shape() == from.shape(), ErrorKind::kDimension,
          "accumulate shape mismatch " + ShapeString(into.shape()) + " vs " + ShapeString(from.shape()));
  for (std::size_t i = 0; i < into.numel(); ++i) into[i] += from[i];
}

#define DAN_INSTANTIATE_OPS(T)                                                                         \
  template ConvGeometry ConvShape(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template Tensor<T> Conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);           \
  template void Conv2dBackward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,         \
                               Tensor<T>*, Tensor<T>*, Tensor<T>*);                                    \
  template PoolResult<T> MaxPool2(const Tensor<T>&);                                                   \
  template void MaxPool2Backward(const std::vector<std::uint32_t>&, const Tensor<T>&, const Shape&,         \
                                 Tensor<T>*);                                                          \
  template Tensor<T> Relu(const Tensor<T>&);                                                           \
  template void ReluBackward(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                          \
  template T SigmoidScalar(T);                                                                         \
  template Tensor<T> Sigmoid(const Tensor<T>&);                                                        \
  template void SigmoidBackward(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                       \
  template Tensor<T> Affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template void AffineBackward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,       \
                               Tensor<T>*, Tensor<T>*);                                                \
  template DropoutResult<T> Dropout(const Tensor<T>&, double, bool, Rng&);                             \
  template void DropoutBackward(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                       \
  template void Accumulate(Tensor<T>&, const Tensor<T>&);

DAN_INSTANTIATE_OPS(float)
DAN_INSTANTIATE_OPS(double)

}  // namespace dan::ops
