#pragma once

#include <vector>

#include "coral/backbone.hpp"
#include "coral/edit_delta.hpp"

namespace coral {

/// Soft spatial selection for one layer, shape (H_l, W_l), entries in [0, 1].
using LayerMask = Tensor;

/// One mask per synthesis layer; masks[l - 1] belongs to layer l.
struct MaskStack {
  std::vector<LayerMask> masks;

  std::size_t size() const { return masks.size(); }
  LayerMask& layer(std::size_t l) { return masks.at(l - 1); }
  const LayerMask& layer(std::size_t l) const { return masks.at(l - 1); }

  static MaskStack filled(const BackboneConfig& config, double value);
  static MaskStack zeros(const BackboneConfig& config) { return filled(config, 0.0); }
  static MaskStack ones(const BackboneConfig& config) { return filled(config, 1.0); }

  /// Throws ShapeError on count/shape disagreement and RangeError for entries
  /// outside [0, 1].
  void validate(const BackboneConfig& config) const;

  friend bool operator==(const MaskStack&, const MaskStack&) = default;
};

/// Feedforwarded multi-layer blending. At every layer the blended upstream
/// feature goes through the block twice, once with each code:
///   edited   = block(f*_prev, w2)
///   original = block(f*_prev, w1)
///   f*       = m * edited + (1 - m) * original
/// so a zero mask at layer l keeps the edits introduced before l. RGB heads
/// read f* only.
ForwardResult blended_forward(const Backbone& backbone, const WPlusCode& w1, const WPlusCode& w2,
                              const MaskStack& masks);

/// Graph form used by training. `masks` may mix trainable and constant Vars.
ForwardGraph blended_forward_graph(const Backbone& backbone, const std::vector<ad::Var>& w1,
                                   const std::vector<ad::Var>& w2, const std::vector<ad::Var>& masks);

/// forward(w1 + delta), the fully edited image.
ForwardResult edited_forward(const Backbone& backbone, const WPlusCode& w1, const EditDelta& delta);

/// Single-layer baseline in the style of FEAT. Two independent streams run
/// with w2 (edited) and w1 (original) up to `blend_layer`; there the features
/// and the accumulated RGB skip image are blended once with `mask` (upsampled
/// to image size for the skip). Later layers continue from the blended
/// features with w1 only, so upstream edits the mask rejects are lost.
ImageRGB feat_blend_forward(const Backbone& backbone, const WPlusCode& w1, const WPlusCode& w2,
                            const LayerMask& mask, std::size_t blend_layer);

/// Image pixels whose value can depend on layer-`layer` features inside
/// `region` (a (H_l, W_l) map, nonzero = inside). Follows nearest upsampling
/// and the 3x3 blocks downstream, then every RGB head at or after `layer`.
/// Returns an (H, W) map of 0/1 at image resolution.
Tensor receptive_support(const BackboneConfig& config, std::size_t layer, const Tensor& region);

}  // namespace coral
