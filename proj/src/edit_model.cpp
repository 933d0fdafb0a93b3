#include "coral/edit_model.hpp"

#include "coral/error.hpp"

namespace coral {
namespace {

template <class T, class Model, class F>
void visit_model(Model& m, const F& f) {
  const std::function<void(const std::string&, T&)> sel = [&f](const std::string& name, T& t) {
    f("selector." + name, t);
  };
  const std::function<void(const std::string&, T&)> ed = [&f](const std::string& name, T& t) {
    f("editor." + name, t);
  };
  if (m.variant == Variant::ss)
    m.selection.visit(sel);
  else
    m.attention.visit(sel);
  if (m.editor == EditorKind::global)
    m.direction.visit(ed);
  else
    m.mapper.visit(ed);
}

}  // namespace

EditModel EditModel::init(const BackboneConfig& config, Variant variant, EditorKind editor,
                          std::size_t edit_cutoff, std::size_t class_count, std::uint64_t seed) {
  if (edit_cutoff < 1 || edit_cutoff > config.layer_count)
    throw RangeError("edit cutoff " + std::to_string(edit_cutoff) + " outside 1.." +
                     std::to_string(config.layer_count));
  EditModel m;
  m.variant = variant;
  m.editor = editor;
  m.edit_cutoff = edit_cutoff;
  if (variant == Variant::ss) {
    if (class_count == 0) throw RangeError("segment selection needs at least one class");
    m.selection = SegmentSelectionMatrix::zeros(class_count, config.layer_count);
  } else {
    m.attention = AttentionNetParams::init(config, edit_cutoff, seed);
  }
  if (editor == EditorKind::global)
    m.direction = GlobalDirectionParams::zeros(edit_cutoff, config.latent_dim);
  else
    m.mapper = MapperParams::init(config, edit_cutoff, seed + 1);
  return m;
}

void EditModel::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  visit_model<Tensor>(*this, f);
}

void EditModel::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  visit_model<const Tensor>(*this, f);
}

std::size_t EditModel::selector_tensor_count() const {
  return variant == Variant::ss ? 1 : 4 * attention.layers.size();
}

bool operator==(const EditModel& a, const EditModel& b) {
  if (a.variant != b.variant || a.editor != b.editor || a.edit_cutoff != b.edit_cutoff)
    return false;
  std::vector<std::pair<std::string, Tensor>> ta, tb;
  a.visit([&ta](const std::string& n, const Tensor& t) { ta.emplace_back(n, t); });
  b.visit([&tb](const std::string& n, const Tensor& t) { tb.emplace_back(n, t); });
  return ta == tb;
}

EditDelta EditModel::delta(const WPlusCode& w, const BackboneConfig& config) const {
  if (editor == EditorKind::global) return global_delta(direction, config);
  return mapper_delta(w, mapper, config);
}

MaskStack EditModel::masks(const ForwardResult& original, const Segmenter* segmenter,
                           const BackboneConfig& config) const {
  if (variant == Variant::ss) {
    if (!segmenter) throw Error("segment selection needs a segmenter");
    return segment_masks(segmenter->segment(original.image), selection, config, edit_cutoff);
  }
  return attention_masks(original.features, attention, config);
}

EditGraph edit_graph(const Backbone& backbone, const EditModel& layout,
                     const std::vector<ad::Var>& params, const WPlusCode& w,
                     const Segmenter* segmenter) {
  const auto& config = backbone.config();
  backbone.check_code(w);
  const std::size_t n_sel = layout.selector_tensor_count();
  if (params.size() <= n_sel) throw ShapeError("edit_graph: missing parameters");
  const std::vector<ad::Var> sel(params.begin(), params.begin() + n_sel);
  const std::vector<ad::Var> ed(params.begin() + n_sel, params.end());

  const std::vector<ad::Var> w_rows = code_rows(w);
  const ForwardGraph original = backbone.forward_graph(w_rows);

  EditGraph g;
  g.original = original.image;
  g.delta_rows = layout.editor == EditorKind::global
                     ? global_delta_graph(ed.at(0), config)
                     : mapper_delta_graph(w_rows, ed, layout.mapper, config);
  std::vector<ad::Var> w2_rows;
  for (std::size_t l = 0; l < w_rows.size(); ++l)
    w2_rows.push_back(ad::add(w_rows[l], g.delta_rows[l]));
  g.edited = backbone.forward_graph(w2_rows).image;

  if (layout.variant == Variant::ss) {
    if (!segmenter) throw Error("segment selection needs a segmenter");
    const SegmentMap seg = segmenter->segment(ImageRGB{original.image.value()});
    g.masks = segment_masks_graph(seg, sel.at(0), config, layout.edit_cutoff);
  } else {
    g.masks = attention_masks_graph(original.features, sel, config);
  }
  g.blended = blended_forward_graph(backbone, w_rows, w2_rows, g.masks).image;
  return g;
}

LossTerms loss_terms(const EditGraph& graph, const EditModel& layout,
                     const std::vector<ad::Var>& params, const LossSetup& setup) {
  if (!setup.scorer || !setup.embedder) throw Error("loss setup needs a scorer and an embedder");
  LossTerms t;
  t.clip = clip_loss(graph.blended, graph.edited, setup.prompt, *setup.scorer, setup.dual_clip);
  t.l2 = l2_loss(graph.delta_rows);
  t.id = id_loss(graph.blended, graph.original, *setup.embedder);
  if (layout.variant == Variant::ss) {
    t.area = area_loss_ss(params.at(0));
  } else {
    t.area = area_loss_can(graph.masks);
    t.tv = tv_loss(graph.masks);
  }
  return t;
}

}  // namespace coral
