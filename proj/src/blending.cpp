#include "coral/blending.hpp"

#include <algorithm>

#include "coral/error.hpp"
#include "coral/kernels.hpp"

namespace coral {
namespace {

bool constant_fill(const ad::Var& m, double v) {
  if (m.requires_grad()) return false;
  const auto& s = m.value().storage();
  return std::all_of(s.begin(), s.end(), [v](double x) { return x == v; });
}

std::vector<ad::Var> mask_vars(const MaskStack& masks) {
  std::vector<ad::Var> out;
  out.reserve(masks.size());
  for (const auto& m : masks.masks) out.push_back(ad::Var::constant(m));
  return out;
}

Tensor upsample_map(const Tensor& map, std::size_t factor) {
  Tensor as3({map.dim(0), map.dim(1), 1}, map.storage());
  Tensor up = kernels::upsample_nearest(as3, factor);
  return Tensor({up.dim(0), up.dim(1)}, std::move(up.storage()));
}

ad::Var add_image(const ad::Var& acc, const ad::Var& contrib) {
  return acc.defined() ? ad::add(acc, contrib) : contrib;
}

}  // namespace

WPlusCode apply_delta(const WPlusCode& w, const EditDelta& delta) {
  if (w.rows.shape() != delta.rows.shape())
    throw ShapeError("edit delta " + shape_string(delta.rows.shape()) + " does not match code " +
                     shape_string(w.rows.shape()));
  WPlusCode out = w;
  for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i] += delta.rows[i];
  return out;
}

MaskStack MaskStack::filled(const BackboneConfig& config, double value) {
  MaskStack s;
  for (std::size_t l = 1; l <= config.layer_count; ++l) {
    const std::size_t r = config.resolution(l);
    s.masks.emplace_back(Shape{r, r}, value);
  }
  return s;
}

void MaskStack::validate(const BackboneConfig& config) const {
  if (masks.size() != config.layer_count)
    throw ShapeError("mask stack has " + std::to_string(masks.size()) + " layers, expected " +
                     std::to_string(config.layer_count));
  for (std::size_t l = 1; l <= config.layer_count; ++l) {
    const std::size_t r = config.resolution(l);
    const LayerMask& m = layer(l);
    if (m.shape() != Shape{r, r})
      throw ShapeError("mask for layer " + std::to_string(l) + " has shape " +
                       shape_string(m.shape()) + ", expected (" + std::to_string(r) + ", " +
                       std::to_string(r) + ")");
    for (double v : m.storage())
      if (!(v >= 0.0 && v <= 1.0))
        throw RangeError("mask for layer " + std::to_string(l) + " has entry outside [0, 1]");
  }
}

ForwardGraph blended_forward_graph(const Backbone& backbone, const std::vector<ad::Var>& w1,
                                   const std::vector<ad::Var>& w2,
                                   const std::vector<ad::Var>& masks) {
  const auto& c = backbone.config();
  if (w1.size() != c.layer_count || w2.size() != c.layer_count || masks.size() != c.layer_count)
    throw ShapeError("blended_forward: expected one code row and mask per layer");

  ForwardGraph out;
  ad::Var f = backbone.base();
  for (std::size_t l = 1; l <= c.layer_count; ++l) {
    const ad::Var& m = masks[l - 1];
    if (constant_fill(m, 0.0)) {
      f = backbone.block(l, f, w1[l - 1]);
    } else if (constant_fill(m, 1.0)) {
      f = backbone.block(l, f, w2[l - 1]);
    } else {
      const ad::Var edited = backbone.block(l, f, w2[l - 1]);
      const ad::Var original = backbone.block(l, f, w1[l - 1]);
      f = ad::blend(m, edited, original);
    }
    out.features.push_back(f);
    if (c.has_rgb(l)) out.image = add_image(out.image, backbone.to_rgb(l, f));
  }
  return out;
}

ForwardResult blended_forward(const Backbone& backbone, const WPlusCode& w1, const WPlusCode& w2,
                              const MaskStack& masks) {
  backbone.check_code(w1);
  backbone.check_code(w2);
  masks.validate(backbone.config());
  ForwardGraph g = blended_forward_graph(backbone, code_rows(w1), code_rows(w2), mask_vars(masks));
  ForwardResult r;
  r.image.pixels = g.image.value();
  for (const auto& f : g.features) r.features.push_back(f.value());
  return r;
}

ForwardResult edited_forward(const Backbone& backbone, const WPlusCode& w1,
                             const EditDelta& delta) {
  return backbone.forward(apply_delta(w1, delta));
}

ImageRGB feat_blend_forward(const Backbone& backbone, const WPlusCode& w1, const WPlusCode& w2,
                            const LayerMask& mask, std::size_t blend_layer) {
  const auto& c = backbone.config();
  if (blend_layer < 1 || blend_layer > c.layer_count)
    throw RangeError("blend layer " + std::to_string(blend_layer) + " outside 1.." +
                     std::to_string(c.layer_count));
  backbone.check_code(w1);
  backbone.check_code(w2);
  const std::size_t res = c.resolution(blend_layer);
  if (mask.shape() != Shape{res, res})
    throw ShapeError("FEAT mask has shape " + shape_string(mask.shape()) + ", expected (" +
                     std::to_string(res) + ", " + std::to_string(res) + ")");

  const auto r1 = code_rows(w1);
  const auto r2 = code_rows(w2);
  ad::Var fe = backbone.base(), fo = backbone.base();
  ad::Var skip_e, skip_o;
  for (std::size_t l = 1; l < blend_layer; ++l) {
    fe = backbone.block(l, fe, r2[l - 1]);
    fo = backbone.block(l, fo, r1[l - 1]);
    if (c.has_rgb(l)) {
      skip_e = add_image(skip_e, backbone.to_rgb(l, fe));
      skip_o = add_image(skip_o, backbone.to_rgb(l, fo));
    }
  }
  fe = backbone.block(blend_layer, fe, r2[blend_layer - 1]);
  fo = backbone.block(blend_layer, fo, r1[blend_layer - 1]);
  const ad::Var m = ad::Var::constant(mask);
  ad::Var f = ad::blend(m, fe, fo);
  ad::Var image;
  if (skip_e.defined()) {
    const ad::Var m_image =
        ad::Var::constant(upsample_map(mask, c.image_resolution() / res));
    image = ad::blend(m_image, skip_e, skip_o);
  }
  if (c.has_rgb(blend_layer)) image = add_image(image, backbone.to_rgb(blend_layer, f));
  for (std::size_t l = blend_layer + 1; l <= c.layer_count; ++l) {
    f = backbone.block(l, f, r1[l - 1]);
    if (c.has_rgb(l)) image = add_image(image, backbone.to_rgb(l, f));
  }
  return ImageRGB{image.value()};
}

Tensor receptive_support(const BackboneConfig& config, std::size_t layer, const Tensor& region) {
  if (layer < 1 || layer > config.layer_count) throw RangeError("receptive_support: bad layer");
  const std::size_t res = config.resolution(layer);
  if (region.shape() != Shape{res, res}) throw ShapeError("receptive_support: region shape");

  const std::size_t out_res = config.image_resolution();
  Tensor image({out_res, out_res});
  Tensor support = region;
  for (double& v : support.storage()) v = v != 0.0 ? 1.0 : 0.0;

  auto paint = [&](std::size_t l) {
    const std::size_t f = out_res / config.resolution(l);
    const Tensor up = upsample_map(support, f);
    for (std::size_t i = 0; i < up.size(); ++i) image[i] = std::max(image[i], up[i]);
  };
  if (config.has_rgb(layer)) paint(layer);
  for (std::size_t l = layer + 1; l <= config.layer_count; ++l) {
    Tensor up = upsample_map(support, config.resolution(l) / config.resolution(l - 1));
    const std::size_t n = up.dim(0);
    Tensor grown({n, n});
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        if (up.at(y, x) == 0.0) continue;
        for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(n - 1, y + 1); ++yy)
          for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(n - 1, x + 1); ++xx)
            grown.at(yy, xx) = 1.0;
      }
    support = std::move(grown);
    if (config.has_rgb(l)) paint(l);
  }
  return image;
}

}  // namespace coral
