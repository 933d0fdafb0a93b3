#pragma once

// Independent oracles and helpers shared by the unit tests and the acceptance
// binary. The oracles recompute the toy generator with plain loops straight
// from its parameter map, without going through the autodiff ops or kernels.

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/backbone.hpp"
#include "coral/rng.hpp"

namespace coral::test {

inline std::shared_ptr<ToyBackbone> toy_backbone(std::uint64_t seed = 0) {
  return ToyBackbone::create(BackboneConfig::toy(), seed);
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return rng.normal_tensor(std::move(shape), stddev);
}

inline WPlusCode random_code(const BackboneConfig& c, std::uint64_t seed, double stddev = 1.0) {
  return WPlusCode{random_tensor({c.layer_count, c.latent_dim}, seed, stddev)};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("coral_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

namespace oracle {

inline std::vector<double> map_latent(const ToyBackbone& bb, const std::vector<double>& z) {
  const std::size_t d = bb.config().latent_dim;
  const Tensor& w1 = bb.parameter("mapping.w1");
  const Tensor& b1 = bb.parameter("mapping.b1");
  const Tensor& w2 = bb.parameter("mapping.w2");
  const Tensor& b2 = bb.parameter("mapping.b2");
  std::vector<double> h(d), u(d);
  for (std::size_t o = 0; o < d; ++o) {
    double s = b1[o];
    for (std::size_t i = 0; i < d; ++i) s += w1[o * d + i] * z[i];
    h[o] = s >= 0 ? s : 0.2 * s;
  }
  for (std::size_t o = 0; o < d; ++o) {
    double s = b2[o];
    for (std::size_t i = 0; i < d; ++i) s += w2[o * d + i] * h[i];
    u[o] = s;
  }
  return u;
}

/// tanh(modconv3x3(upsample(in), A w + a)) with every index spelled out.
inline Tensor block(const ToyBackbone& bb, std::size_t l, const Tensor& in,
                    const std::vector<double>& w) {
  const auto& c = bb.config();
  const std::string p = "layer" + std::to_string(l) + ".";
  const Tensor& A = bb.parameter(p + "affine.weight");
  const Tensor& a = bb.parameter(p + "affine.bias");
  const Tensor& K = bb.parameter(p + "conv.weight");
  const Tensor& b = bb.parameter(p + "conv.bias");
  const std::size_t ci = in.dim(2), co = K.dim(0), n = c.resolution(l);
  const std::size_t f = n / in.dim(0);
  std::vector<double> style(ci);
  for (std::size_t i = 0; i < ci; ++i) {
    double s = a[i];
    for (std::size_t k = 0; k < w.size(); ++k) s += A[i * w.size() + k] * w[k];
    style[i] = s;
  }
  Tensor out({n, n, co});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t o = 0; o < co; ++o) {
        double s = b[o];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(n) || xx >= static_cast<long>(n))
              continue;
            for (std::size_t i = 0; i < ci; ++i) {
              const double v = in.at(static_cast<std::size_t>(yy) / f,
                                     static_cast<std::size_t>(xx) / f, i);
              s += K[((o * ci + i) * 3 + static_cast<std::size_t>(dy + 1)) * 3 +
                     static_cast<std::size_t>(dx + 1)] *
                   style[i] * v;
            }
          }
        out.at(y, x, o) = std::tanh(s);
      }
  return out;
}

inline Tensor rgb(const ToyBackbone& bb, std::size_t l, const Tensor& f) {
  const std::string p = "layer" + std::to_string(l) + ".";
  const Tensor& W = bb.parameter(p + "rgb.weight");
  const Tensor& b = bb.parameter(p + "rgb.bias");
  const std::size_t out_res = bb.config().image_resolution();
  const std::size_t up = out_res / f.dim(0), ch = f.dim(2);
  Tensor img({out_res, out_res, 3});
  for (std::size_t y = 0; y < out_res; ++y)
    for (std::size_t x = 0; x < out_res; ++x)
      for (std::size_t k = 0; k < 3; ++k) {
        double s = b[k];
        for (std::size_t i = 0; i < ch; ++i) s += W[k * ch + i] * f.at(y / up, x / up, i);
        img.at(y, x, k) = s;
      }
  return img;
}

inline std::vector<double> row(const WPlusCode& w, std::size_t l) {
  return std::vector<double>(w.rows.row(l - 1).begin(), w.rows.row(l - 1).end());
}

inline void add_into(Tensor& acc, const Tensor& t) {
  if (acc.empty()) {
    acc = t;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += t[i];
}

/// Mask-weighted combination m * e + (1 - m) * o written out per element.
inline Tensor blend(const Tensor& m, const Tensor& e, const Tensor& o) {
  Tensor out(e.shape());
  for (std::size_t y = 0; y < e.dim(0); ++y)
    for (std::size_t x = 0; x < e.dim(1); ++x)
      for (std::size_t c = 0; c < e.dim(2); ++c)
        out.at(y, x, c) = m.at(y, x) * e.at(y, x, c) + (1.0 - m.at(y, x)) * o.at(y, x, c);
  return out;
}

/// Image for per-layer codes; `masks` (optional) switches to the dual-pass
/// blend with w2.
inline Tensor forward(const ToyBackbone& bb, const WPlusCode& w1,
                      const WPlusCode* w2 = nullptr, const std::vector<Tensor>* masks = nullptr) {
  const auto& c = bb.config();
  Tensor f = bb.parameter("const");
  Tensor img;
  for (std::size_t l = 1; l <= c.layer_count; ++l) {
    const Tensor orig = block(bb, l, f, row(w1, l));
    f = w2 ? blend((*masks)[l - 1], block(bb, l, f, row(*w2, l)), orig) : orig;
    if (c.has_rgb(l)) add_into(img, rgb(bb, l, f));
  }
  return img;
}

}  // namespace oracle

/// Central-difference check along random unit directions spanning the tensors
/// listed in `groups`. Returns ||analytic - numeric|| / max(||analytic||,
/// ||numeric||, floor) over the stacked directional derivatives.
using ScalarFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

inline double directional_gradient_error(const ScalarFn& f, const std::vector<Tensor>& params,
                                         const std::vector<std::size_t>& groups,
                                         std::size_t directions, std::uint64_t seed,
                                         double step = 1e-6, double floor = 1e-8) {
  std::vector<ad::Var> vars;
  for (const auto& p : params) vars.push_back(ad::Var::parameter(p));
  const ad::Var out = f(vars);
  ad::backward(out);
  std::vector<Tensor> grads;
  for (std::size_t g : groups) grads.push_back(vars[g].grad());

  auto eval = [&](const std::vector<Tensor>& moved) {
    std::vector<ad::Var> cv;
    for (const auto& p : moved) cv.push_back(ad::Var::constant(p));
    return f(cv).item();
  };

  double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
  Rng rng(seed);
  for (std::size_t k = 0; k < directions; ++k) {
    std::vector<Tensor> dirs;
    double norm = 0.0;
    for (std::size_t g : groups) {
      dirs.push_back(rng.normal_tensor(params[g].shape()));
      for (double v : dirs.back().storage()) norm += v * v;
    }
    norm = std::sqrt(norm);
    double analytic = 0.0;
    std::vector<Tensor> plus = params, minus = params;
    for (std::size_t j = 0; j < groups.size(); ++j) {
      Tensor& dir = dirs[j];
      const std::size_t g = groups[j];
      for (std::size_t i = 0; i < dir.size(); ++i) {
        dir[i] /= norm;
        analytic += grads[j][i] * dir[i];
        plus[g][i] += step * dir[i];
        minus[g][i] -= step * dir[i];
      }
    }
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * step);
    diff_sq += (analytic - numeric) * (analytic - numeric);
    a_sq += analytic * analytic;
    n_sq += numeric * numeric;
  }
  return std::sqrt(diff_sq) / std::max({std::sqrt(a_sq), std::sqrt(n_sq), floor});
}

inline double directional_gradient_error(const ScalarFn& f, const std::vector<Tensor>& params,
                                         std::size_t group, std::size_t directions,
                                         std::uint64_t seed, double step = 1e-6,
                                         double floor = 1e-8) {
  return directional_gradient_error(f, params, std::vector<std::size_t>{group}, directions, seed,
                                    step, floor);
}

}  // namespace coral::test
