#pragma once

#include "coral/tensor.hpp"

// Spatial kernels over (H, W, C) feature maps.
//
// The functions in `coral::kernels` are OpenMP-parallel; every output element
// is produced by exactly one loop iteration with a fixed summation order, so
// results are bit-identical for any thread count. `coral::kernels::reference`
// holds straightforward serial versions that tests and the benchmark compare
// against.

namespace coral::kernels {

struct ModConvGrads {
  Tensor input;  // (H, W, Ci)
  Tensor style;  // (Ci)
};

struct Conv1x1Grads {
  Tensor input;   // (H, W, Ci)
  Tensor weight;  // (Co, Ci)
  Tensor bias;    // (Co)
};

/// 3x3 convolution, zero padded, with input channel i scaled by style[i].
/// kernel: (Co, Ci, 3, 3); bias: (Co).
Tensor modconv3x3(const Tensor& input, const Tensor& style, const Tensor& kernel,
                  const Tensor& bias);
ModConvGrads modconv3x3_backward(const Tensor& input, const Tensor& style,
                                 const Tensor& kernel, const Tensor& grad_out);

/// weight: (Co, Ci); bias: (Co).
Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias);
Conv1x1Grads conv1x1_backward(const Tensor& input, const Tensor& weight,
                              const Tensor& grad_out);

/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample_nearest(const Tensor& input, std::size_t factor);
/// Adjoint of upsample_nearest: sums each factor x factor block.
Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor);

namespace reference {

Tensor modconv3x3(const Tensor& input, const Tensor& style, const Tensor& kernel,
                  const Tensor& bias);
ModConvGrads modconv3x3_backward(const Tensor& input, const Tensor& style,
                                 const Tensor& kernel, const Tensor& grad_out);
Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias);
Conv1x1Grads conv1x1_backward(const Tensor& input, const Tensor& weight,
                              const Tensor& grad_out);
Tensor upsample_nearest(const Tensor& input, std::size_t factor);
Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor);

}  // namespace reference
}  // namespace coral::kernels
