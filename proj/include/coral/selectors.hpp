#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/backbone.hpp"
#include "coral/blending.hpp"

namespace coral {

/// Per-pixel class labels at image resolution.
struct SegmentMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t class_count = 0;
  std::vector<std::uint32_t> labels;  // row-major

  std::uint32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

/// Frozen segmentation model. Implementations are deterministic.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual SegmentMap segment(const ImageRGB& image) const = 0;
  virtual std::size_t class_count() const = 0;
  /// Spec string understood by make_segmenter, recorded in artifacts.
  virtual std::string describe() const = 0;
};

/// Geometric stand-in: splits the image plane into rows x cols equal cells,
/// numbered row-major. Ignores pixel values.
class GridSegmenter final : public Segmenter {
 public:
  GridSegmenter(std::size_t rows, std::size_t cols);
  SegmentMap segment(const ImageRGB& image) const override;
  std::size_t class_count() const override { return rows_ * cols_; }
  std::string describe() const override;

 private:
  std::size_t rows_, cols_;
};

/// Builds a segmenter from its description ("grid:2x2"). Throws FormatError.
std::unique_ptr<Segmenter> make_segmenter(const std::string& description);

/// Trainable P x L selection logits; the effective weights are sigmoid(logits).
struct SegmentSelectionMatrix {
  Tensor logits;

  static SegmentSelectionMatrix zeros(std::size_t classes, std::size_t layers) {
    return {Tensor({classes, layers})};
  }
  std::size_t classes() const { return logits.dim(0); }
  std::size_t layers() const { return logits.dim(1); }
  Tensor weights() const;

  void visit(const std::function<void(const std::string&, Tensor&)>& f) { f("logits", logits); }
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
    f("logits", logits);
  }
};

inline constexpr std::size_t kAttentionHidden = 32;

/// Two 1x1 convolutions (d_l -> 32 -> 1) for one layer.
struct AttentionLayerParams {
  Tensor conv1_weight;  // (32, d_l)
  Tensor conv1_bias;    // (32)
  Tensor conv2_weight;  // (1, 32)
  Tensor conv2_bias;    // (1)
};

/// One head per layer 1..edit_cutoff.
struct AttentionNetParams {
  std::vector<AttentionLayerParams> layers;

  /// Small random conv weights, zero biases: initial masks sit near 0.5.
  static AttentionNetParams init(const BackboneConfig& config, std::size_t edit_cutoff,
                                 std::uint64_t seed);
  std::size_t edit_cutoff() const { return layers.size(); }

  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

/// Fraction of each cell at resolution `res` covered by each class: (P, res, res).
/// Throws RangeError for labels >= P and ShapeError when `res` does not divide
/// the segmentation size.
Tensor segment_fractions(const SegmentMap& seg, std::size_t res);

/// Per layer l <= edit_cutoff: area-averaged map of sigmoid(logits)[class, l].
MaskStack segment_masks(const SegmentMap& seg, const SegmentSelectionMatrix& e,
                        const BackboneConfig& config, std::size_t edit_cutoff);
std::vector<ad::Var> segment_masks_graph(const SegmentMap& seg, const ad::Var& logits,
                                         const BackboneConfig& config, std::size_t edit_cutoff);

/// Per layer l <= edit_cutoff: sigmoid(conv2(relu(conv1(f^(l))))).
MaskStack attention_masks(const std::vector<FeatureMap>& features,
                          const AttentionNetParams& params, const BackboneConfig& config);
/// `params` holds four Vars per layer in visit order.
std::vector<ad::Var> attention_masks_graph(const std::vector<ad::Var>& features,
                                           const std::vector<ad::Var>& params,
                                           const BackboneConfig& config);

/// Zeroes entries below tau; entries at or above tau keep their soft value.
MaskStack apply_threshold(const MaskStack& masks, double tau);

}  // namespace coral
