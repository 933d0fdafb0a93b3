#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/backbone.hpp"
#include "coral/blending.hpp"
#include "coral/editors.hpp"
#include "coral/losses.hpp"
#include "coral/selectors.hpp"

namespace coral {

/// Trainable half of an edit: one selector (segment selection or attention)
/// and one editor (global direction or mapper). Only the pair named by
/// `variant` and `editor` is populated.
struct EditModel {
  Variant variant = Variant::ss;
  EditorKind editor = EditorKind::global;
  std::size_t edit_cutoff = 0;

  SegmentSelectionMatrix selection;  // ss
  AttentionNetParams attention;      // can
  GlobalDirectionParams direction;   // global
  MapperParams mapper;               // mapper

  /// `class_count` is the segmenter's P (ignored for the attention variant).
  static EditModel init(const BackboneConfig& config, Variant variant, EditorKind editor,
                        std::size_t edit_cutoff, std::size_t class_count, std::uint64_t seed);

  /// Selector tensors ("selector.*") first, then editor tensors ("editor.*").
  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
  std::size_t selector_tensor_count() const;

  EditDelta delta(const WPlusCode& w, const BackboneConfig& config) const;
  /// Soft masks for one image. `original` is the unedited forward pass;
  /// `segmenter` is required for the ss variant.
  MaskStack masks(const ForwardResult& original, const Segmenter* segmenter,
                  const BackboneConfig& config) const;

  friend bool operator==(const EditModel& a, const EditModel& b);
};

/// Differentiable products of one training sample.
struct EditGraph {
  ad::Var original;  // I
  ad::Var edited;    // I~ = G(w + delta)
  ad::Var blended;   // I*
  std::vector<ad::Var> masks;
  std::vector<ad::Var> delta_rows;
};

/// `params` holds one Var per tensor of `layout`, in visit order.
EditGraph edit_graph(const Backbone& backbone, const EditModel& layout,
                     const std::vector<ad::Var>& params, const WPlusCode& w,
                     const Segmenter* segmenter);

struct LossSetup {
  std::string prompt;
  LossWeights weights;
  const SemanticScorer* scorer = nullptr;
  const IdentityEmbedder* embedder = nullptr;
  bool dual_clip = true;
};

/// Unweighted loss terms for one sample. The area term reads the selection
/// logits (ss) or the masks (can).
LossTerms loss_terms(const EditGraph& graph, const EditModel& layout,
                     const std::vector<ad::Var>& params, const LossSetup& setup);

}  // namespace coral
