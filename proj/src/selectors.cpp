#include "coral/selectors.hpp"

#include <cmath>
#include <regex>

#include "coral/error.hpp"
#include "coral/rng.hpp"

namespace coral {
namespace {

void check_cutoff(const BackboneConfig& config, std::size_t edit_cutoff) {
  if (edit_cutoff < 1 || edit_cutoff > config.layer_count)
    throw RangeError("edit cutoff " + std::to_string(edit_cutoff) + " outside 1.." +
                     std::to_string(config.layer_count));
}

ad::Var zero_mask(const BackboneConfig& config, std::size_t layer) {
  const std::size_t r = config.resolution(layer);
  return ad::Var::constant(Tensor({r, r}));
}

MaskStack to_stack(const std::vector<ad::Var>& masks) {
  MaskStack s;
  for (const auto& m : masks) s.masks.push_back(m.value());
  return s;
}

}  // namespace

GridSegmenter::GridSegmenter(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw RangeError("grid segmenter needs at least one cell");
}

SegmentMap GridSegmenter::segment(const ImageRGB& image) const {
  SegmentMap s;
  s.height = image.height();
  s.width = image.width();
  s.class_count = class_count();
  s.labels.resize(s.height * s.width);
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x) {
      const std::size_t r = y * rows_ / s.height;
      const std::size_t c = x * cols_ / s.width;
      s.labels[y * s.width + x] = static_cast<std::uint32_t>(r * cols_ + c);
    }
  return s;
}

std::string GridSegmenter::describe() const {
  return "grid:" + std::to_string(rows_) + "x" + std::to_string(cols_);
}

std::unique_ptr<Segmenter> make_segmenter(const std::string& description) {
  static const std::regex grid(R"(grid:(\d+)x(\d+))");
  std::smatch m;
  if (std::regex_match(description, m, grid))
    return std::make_unique<GridSegmenter>(std::stoul(m[1]), std::stoul(m[2]));
  throw FormatError("unknown segmenter '" + description + "'");
}

Tensor SegmentSelectionMatrix::weights() const {
  Tensor w = logits;
  for (double& v : w.storage()) v = 1.0 / (1.0 + std::exp(-v));
  return w;
}

AttentionNetParams AttentionNetParams::init(const BackboneConfig& config,
                                            std::size_t edit_cutoff, std::uint64_t seed) {
  check_cutoff(config, edit_cutoff);
  Rng rng(seed);
  AttentionNetParams p;
  for (std::size_t l = 1; l <= edit_cutoff; ++l) {
    const std::size_t c = config.channel_count(l);
    AttentionLayerParams layer;
    layer.conv1_weight = rng.normal_tensor({kAttentionHidden, c}, 1.0 / std::sqrt(double(c)));
    layer.conv1_bias = Tensor({kAttentionHidden});
    layer.conv2_weight =
        rng.normal_tensor({1, kAttentionHidden}, 0.1 / std::sqrt(double(kAttentionHidden)));
    layer.conv2_bias = Tensor({1});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

namespace {

template <class Layers, class F>
void visit_layers(Layers& layers, const F& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i + 1) + ".";
    f(prefix + "conv1.weight", layers[i].conv1_weight);
    f(prefix + "conv1.bias", layers[i].conv1_bias);
    f(prefix + "conv2.weight", layers[i].conv2_weight);
    f(prefix + "conv2.bias", layers[i].conv2_bias);
  }
}

}  // namespace

void AttentionNetParams::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  visit_layers(layers, f);
}

void AttentionNetParams::visit(
    const std::function<void(const std::string&, const Tensor&)>& f) const {
  visit_layers(layers, f);
}

Tensor segment_fractions(const SegmentMap& seg, std::size_t res) {
  if (res == 0 || seg.height < res || seg.width < res || seg.height % res || seg.width % res)
    throw ShapeError("segmentation of " + std::to_string(seg.height) + "x" +
                     std::to_string(seg.width) + " cannot be pooled to " + std::to_string(res));
  const std::size_t fy = seg.height / res, fx = seg.width / res;
  const double inv = 1.0 / static_cast<double>(fy * fx);
  Tensor frac({seg.class_count, res, res});
  for (std::size_t y = 0; y < seg.height; ++y)
    for (std::size_t x = 0; x < seg.width; ++x) {
      const std::uint32_t label = seg.at(y, x);
      if (label >= seg.class_count)
        throw RangeError("segment label " + std::to_string(label) + " >= class count " +
                         std::to_string(seg.class_count));
      frac[(label * res + y / fy) * res + x / fx] += inv;
    }
  return frac;
}

std::vector<ad::Var> segment_masks_graph(const SegmentMap& seg, const ad::Var& logits,
                                         const BackboneConfig& config, std::size_t edit_cutoff) {
  check_cutoff(config, edit_cutoff);
  if (logits.value().rank() != 2 || logits.value().dim(0) != seg.class_count ||
      logits.value().dim(1) != config.layer_count)
    throw ShapeError("selection logits " + shape_string(logits.shape()) + " do not match " +
                     std::to_string(seg.class_count) + " classes x " +
                     std::to_string(config.layer_count) + " layers");
  const ad::Var weights = ad::sigmoid(logits);
  std::vector<ad::Var> masks;
  for (std::size_t l = 1; l <= config.layer_count; ++l) {
    if (l > edit_cutoff) {
      masks.push_back(zero_mask(config, l));
      continue;
    }
    const Tensor frac = segment_fractions(seg, config.resolution(l));
    masks.push_back(ad::combine(frac, ad::column(weights, l - 1)));
  }
  return masks;
}

MaskStack segment_masks(const SegmentMap& seg, const SegmentSelectionMatrix& e,
                        const BackboneConfig& config, std::size_t edit_cutoff) {
  return to_stack(segment_masks_graph(seg, ad::Var::constant(e.logits), config, edit_cutoff));
}

std::vector<ad::Var> attention_masks_graph(const std::vector<ad::Var>& features,
                                           const std::vector<ad::Var>& params,
                                           const BackboneConfig& config) {
  if (features.size() != config.layer_count)
    throw ShapeError("attention: expected features for every layer");
  if (params.size() % 4 != 0) throw ShapeError("attention: parameter count must be 4 per layer");
  const std::size_t cutoff = params.size() / 4;
  check_cutoff(config, cutoff);
  std::vector<ad::Var> masks;
  for (std::size_t l = 1; l <= config.layer_count; ++l) {
    if (l > cutoff) {
      masks.push_back(zero_mask(config, l));
      continue;
    }
    const ad::Var& f = features[l - 1];
    const ad::Var* p = &params[(l - 1) * 4];
    if (f.value().rank() != 3 || p[0].value().dim(1) != f.value().dim(2))
      throw ShapeError("attention layer " + std::to_string(l) + ": features " +
                       shape_string(f.shape()) + " vs conv1 " + shape_string(p[0].shape()));
    const ad::Var hidden = ad::relu(ad::conv1x1(f, p[0], p[1]));
    const ad::Var logit = ad::conv1x1(hidden, p[2], p[3]);
    const std::size_t r = f.value().dim(0);
    masks.push_back(ad::sigmoid(ad::reshape(logit, {r, f.value().dim(1)})));
  }
  return masks;
}

MaskStack attention_masks(const std::vector<FeatureMap>& features,
                          const AttentionNetParams& params, const BackboneConfig& config) {
  std::vector<ad::Var> fv, pv;
  for (const auto& f : features) fv.push_back(ad::Var::constant(f));
  params.visit([&pv](const std::string&, const Tensor& t) { pv.push_back(ad::Var::constant(t)); });
  return to_stack(attention_masks_graph(fv, pv, config));
}

MaskStack apply_threshold(const MaskStack& masks, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0))
    throw RangeError("threshold tau must lie in [0, 1], got " + std::to_string(tau));
  MaskStack out = masks;
  for (auto& m : out.masks)
    for (double& v : m.storage())
      if (v < tau) v = 0.0;
  return out;
}

}  // namespace coral
