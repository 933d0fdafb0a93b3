#include "coral/kernels.hpp"

#include <vector>

#include "coral/error.hpp"

namespace coral::kernels {
namespace {

constexpr std::size_t kTaps = 9;

void check_modconv(const Tensor& input, const Tensor& style, const Tensor& kernel) {
  if (input.rank() != 3 || kernel.rank() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3)
    throw ShapeError("modconv3x3: expected (H,W,Ci) input and (Co,Ci,3,3) kernel");
  if (kernel.dim(1) != input.dim(2) || style.size() != input.dim(2))
    throw ShapeError("modconv3x3: channel mismatch, input " + shape_string(input.shape()) +
                     " kernel " + shape_string(kernel.shape()));
}

void check_conv1x1(const Tensor& input, const Tensor& weight) {
  if (input.rank() != 3 || weight.rank() != 2 || weight.dim(1) != input.dim(2))
    throw ShapeError("conv1x1: input " + shape_string(input.shape()) + " weight " +
                     shape_string(weight.shape()));
}

// Style-scaled kernel in [tap][o][i] order so the innermost loop is contiguous.
std::vector<double> scaled_taps(const Tensor& style, const Tensor& kernel) {
  const std::size_t co = kernel.dim(0), ci = kernel.dim(1);
  std::vector<double> km(kTaps * co * ci);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t t = 0; t < kTaps; ++t)
        km[(t * co + o) * ci + i] = kernel[(o * ci + i) * kTaps + t] * style[i];
  return km;
}

}  // namespace

Tensor modconv3x3(const Tensor& input, const Tensor& style, const Tensor& kernel,
                  const Tensor& bias) {
  check_modconv(input, style, kernel);
  const long h = static_cast<long>(input.dim(0)), w = static_cast<long>(input.dim(1));
  const std::size_t ci = input.dim(2), co = kernel.dim(0);
  const std::vector<double> km = scaled_taps(style, kernel);
  Tensor out({input.dim(0), input.dim(1), co});

#pragma omp parallel for schedule(static)
  for (long y = 0; y < h; ++y) {
    std::vector<double> acc(co);
    for (long x = 0; x < w; ++x) {
      for (std::size_t o = 0; o < co; ++o) acc[o] = bias[o];
      for (long ky = 0; ky < 3; ++ky) {
        const long yy = y + ky - 1;
        if (yy < 0 || yy >= h) continue;
        for (long kx = 0; kx < 3; ++kx) {
          const long xx = x + kx - 1;
          if (xx < 0 || xx >= w) continue;
          const double* in = input.data() + (yy * w + xx) * ci;
          const double* kt = km.data() + static_cast<std::size_t>(ky * 3 + kx) * co * ci;
          for (std::size_t o = 0; o < co; ++o) {
            const double* kr = kt + o * ci;
            double s = 0.0;
            for (std::size_t i = 0; i < ci; ++i) s += kr[i] * in[i];
            acc[o] += s;
          }
        }
      }
      double* dst = out.data() + (y * w + x) * co;
      for (std::size_t o = 0; o < co; ++o) dst[o] = acc[o];
    }
  }
  return out;
}

ModConvGrads modconv3x3_backward(const Tensor& input, const Tensor& style,
                                 const Tensor& kernel, const Tensor& grad_out) {
  check_modconv(input, style, kernel);
  const long h = static_cast<long>(input.dim(0)), w = static_cast<long>(input.dim(1));
  const std::size_t ci = input.dim(2), co = kernel.dim(0);
  if (grad_out.shape() != Shape{input.dim(0), input.dim(1), co})
    throw ShapeError("modconv3x3_backward: grad shape " + shape_string(grad_out.shape()));
  const std::vector<double> km = scaled_taps(style, kernel);

  ModConvGrads g{Tensor(input.shape()), Tensor({ci})};

  // Input gradient as a gather: x[q] fed y[q - d_t] through tap t.
#pragma omp parallel for schedule(static)
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      double* gx = g.input.data() + (y * w + x) * ci;
      for (long ky = 0; ky < 3; ++ky) {
        const long py = y - (ky - 1);
        if (py < 0 || py >= h) continue;
        for (long kx = 0; kx < 3; ++kx) {
          const long px = x - (kx - 1);
          if (px < 0 || px >= w) continue;
          const double* gy = grad_out.data() + (py * w + px) * co;
          const double* kt = km.data() + static_cast<std::size_t>(ky * 3 + kx) * co * ci;
          for (std::size_t o = 0; o < co; ++o) {
            const double go = gy[o];
            const double* kr = kt + o * ci;
            for (std::size_t i = 0; i < ci; ++i) gx[i] += go * kr[i];
          }
        }
      }
    }
  }

  // Per-tap correlation between output gradient and shifted input.
  std::vector<double> corr(kTaps * co * ci, 0.0);
#pragma omp parallel for schedule(static)
  for (long t = 0; t < static_cast<long>(kTaps); ++t) {
    const long dy = t / 3 - 1, dx = t % 3 - 1;
    double* ct = corr.data() + static_cast<std::size_t>(t) * co * ci;
    for (long y = 0; y < h; ++y) {
      const long qy = y + dy;
      if (qy < 0 || qy >= h) continue;
      for (long x = 0; x < w; ++x) {
        const long qx = x + dx;
        if (qx < 0 || qx >= w) continue;
        const double* gy = grad_out.data() + (y * w + x) * co;
        const double* in = input.data() + (qy * w + qx) * ci;
        for (std::size_t o = 0; o < co; ++o) {
          const double go = gy[o];
          double* cr = ct + o * ci;
          for (std::size_t i = 0; i < ci; ++i) cr[i] += go * in[i];
        }
      }
    }
  }
  for (std::size_t i = 0; i < ci; ++i) {
    double s = 0.0;
    for (std::size_t t = 0; t < kTaps; ++t)
      for (std::size_t o = 0; o < co; ++o)
        s += kernel[(o * ci + i) * kTaps + t] * corr[(t * co + o) * ci + i];
    g.style[i] = s;
  }
  return g;
}

Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  check_conv1x1(input, weight);
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const std::size_t ci = input.dim(2), co = weight.dim(0);
  Tensor out({input.dim(0), input.dim(1), co});
#pragma omp parallel for schedule(static)
  for (long p = 0; p < static_cast<long>(pixels); ++p) {
    const double* in = input.data() + p * ci;
    double* dst = out.data() + p * co;
    for (std::size_t o = 0; o < co; ++o) {
      const double* wr = weight.data() + o * ci;
      double s = bias[o];
      for (std::size_t i = 0; i < ci; ++i) s += wr[i] * in[i];
      dst[o] = s;
    }
  }
  return out;
}

Conv1x1Grads conv1x1_backward(const Tensor& input, const Tensor& weight,
                              const Tensor& grad_out) {
  check_conv1x1(input, weight);
  const std::size_t pixels = input.dim(0) * input.dim(1);
  const std::size_t ci = input.dim(2), co = weight.dim(0);
  Conv1x1Grads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({co})};

#pragma omp parallel for schedule(static)
  for (long p = 0; p < static_cast<long>(pixels); ++p) {
    const double* gy = grad_out.data() + p * co;
    double* gx = g.input.data() + p * ci;
    for (std::size_t o = 0; o < co; ++o) {
      const double* wr = weight.data() + o * ci;
      for (std::size_t i = 0; i < ci; ++i) gx[i] += gy[o] * wr[i];
    }
  }

#pragma omp parallel for schedule(static)
  for (long o = 0; o < static_cast<long>(co); ++o) {
    double* gw = g.weight.data() + o * ci;
    double gb = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double go = grad_out[p * co + o];
      gb += go;
      const double* in = input.data() + p * ci;
      for (std::size_t i = 0; i < ci; ++i) gw[i] += go * in[i];
    }
    g.bias[o] = gb;
  }
  return g;
}

Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (input.rank() != 3 || factor == 0) throw ShapeError("upsample_nearest: bad input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor out({h * factor, w * factor, c});
  const long oh = static_cast<long>(h * factor);
  const std::size_t ow = w * factor;
#pragma omp parallel for schedule(static)
  for (long y = 0; y < oh; ++y) {
    const std::size_t sy = static_cast<std::size_t>(y) / factor;
    for (std::size_t x = 0; x < ow; ++x) {
      const double* src = input.data() + (sy * w + x / factor) * c;
      double* dst = out.data() + (static_cast<std::size_t>(y) * ow + x) * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] = src[k];
    }
  }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor) {
  if (grad_out.rank() != 3 || factor == 0 || grad_out.dim(0) % factor ||
      grad_out.dim(1) % factor)
    throw ShapeError("upsample_nearest_backward: bad gradient shape");
  const std::size_t h = grad_out.dim(0) / factor, w = grad_out.dim(1) / factor;
  const std::size_t c = grad_out.dim(2), ow = grad_out.dim(1);
  Tensor out({h, w, c});
#pragma omp parallel for schedule(static)
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double* dst = out.data() + (static_cast<std::size_t>(y) * w + x) * c;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) {
          const double* src =
              grad_out.data() + ((y * factor + dy) * ow + x * factor + dx) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
    }
  }
  return out;
}

}  // namespace coral::kernels
