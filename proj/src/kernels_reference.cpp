// Serial reference kernels. Written for clarity, not speed.

#include "coral/error.hpp"
#include "coral/kernels.hpp"

namespace coral::kernels::reference {
namespace {

double kernel_at(const Tensor& k, std::size_t o, std::size_t i, std::size_t ky,
                 std::size_t kx) {
  return k[((o * k.dim(1) + i) * 3 + ky) * 3 + kx];
}

bool inside(long v, std::size_t n) { return v >= 0 && v < static_cast<long>(n); }

}  // namespace

Tensor modconv3x3(const Tensor& input, const Tensor& style, const Tensor& kernel,
                  const Tensor& bias) {
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(1) != input.dim(2))
    throw ShapeError("reference::modconv3x3: shape mismatch");
  const std::size_t h = input.dim(0), w = input.dim(1), ci = input.dim(2);
  const std::size_t co = kernel.dim(0);
  Tensor out({h, w, co});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        double s = bias[o];
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long yy = static_cast<long>(y + ky) - 1;
            const long xx = static_cast<long>(x + kx) - 1;
            if (!inside(yy, h) || !inside(xx, w)) continue;
            for (std::size_t i = 0; i < ci; ++i)
              s += kernel_at(kernel, o, i, ky, kx) * style[i] *
                   input.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), i);
          }
        out.at(y, x, o) = s;
      }
  return out;
}

ModConvGrads modconv3x3_backward(const Tensor& input, const Tensor& style,
                                 const Tensor& kernel, const Tensor& grad_out) {
  const std::size_t h = input.dim(0), w = input.dim(1), ci = input.dim(2);
  const std::size_t co = kernel.dim(0);
  ModConvGrads g{Tensor(input.shape()), Tensor({ci})};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        const double go = grad_out.at(y, x, o);
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long yy = static_cast<long>(y + ky) - 1;
            const long xx = static_cast<long>(x + kx) - 1;
            if (!inside(yy, h) || !inside(xx, w)) continue;
            const auto uy = static_cast<std::size_t>(yy), ux = static_cast<std::size_t>(xx);
            for (std::size_t i = 0; i < ci; ++i) {
              const double k = kernel_at(kernel, o, i, ky, kx);
              g.input.at(uy, ux, i) += go * k * style[i];
              g.style[i] += go * k * input.at(uy, ux, i);
            }
          }
      }
  return g;
}

Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 3 || weight.dim(1) != input.dim(2))
    throw ShapeError("reference::conv1x1: shape mismatch");
  const std::size_t h = input.dim(0), w = input.dim(1), ci = input.dim(2);
  const std::size_t co = weight.dim(0);
  Tensor out({h, w, co});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        double s = bias[o];
        for (std::size_t i = 0; i < ci; ++i) s += weight.at(o, i) * input.at(y, x, i);
        out.at(y, x, o) = s;
      }
  return out;
}

Conv1x1Grads conv1x1_backward(const Tensor& input, const Tensor& weight,
                              const Tensor& grad_out) {
  const std::size_t h = input.dim(0), w = input.dim(1), ci = input.dim(2);
  const std::size_t co = weight.dim(0);
  Conv1x1Grads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({co})};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        const double go = grad_out.at(y, x, o);
        g.bias[o] += go;
        for (std::size_t i = 0; i < ci; ++i) {
          g.input.at(y, x, i) += go * weight.at(o, i);
          g.weight.at(o, i) += go * input.at(y, x, i);
        }
      }
  return g;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor out({h * factor, w * factor, c});
  for (std::size_t y = 0; y < h * factor; ++y)
    for (std::size_t x = 0; x < w * factor; ++x)
      for (std::size_t k = 0; k < c; ++k) out.at(y, x, k) = input.at(y / factor, x / factor, k);
  return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
  const std::size_t h = grad_out.dim(0) / factor, w = grad_out.dim(1) / factor;
  const std::size_t c = grad_out.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < grad_out.dim(0); ++y)
    for (std::size_t x = 0; x < grad_out.dim(1); ++x)
      for (std::size_t k = 0; k < c; ++k) out.at(y / factor, x / factor, k) += grad_out.at(y, x, k);
  return out;
}

}  // namespace coral::kernels::reference
