#include "coral/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include "coral/error.hpp"
#include "coral/rng.hpp"
#include "coral/tensor_io.hpp"

namespace coral {
namespace {

constexpr std::size_t kStubGrid = 4;

std::string normalize_prompt(const std::string& prompt) {
  std::string s;
  for (char ch : prompt) {
    const unsigned char c = static_cast<unsigned char>(ch);
    s.push_back(c == '-' || c == '_' ? ' ' : static_cast<char>(std::tolower(c)));
  }
  return s;
}

ad::Var const_var(const Tensor& t) { return ad::Var::constant(t); }

ad::Var pooled_vector(const ad::Var& image, std::size_t grid, const char* who) {
  const Tensor& v = image.value();
  if (v.rank() != 3 || v.dim(2) != 3 || v.dim(0) != v.dim(1) || v.dim(0) % grid != 0)
    throw ShapeError(std::string(who) + ": image " + shape_string(v.shape()) +
                     " cannot be pooled to " + std::to_string(grid) + "x" + std::to_string(grid));
  const ad::Var pooled = ad::avg_pool(image, v.dim(0) / grid);
  return ad::reshape(pooled, {grid * grid * 3});
}

std::vector<ad::Var> constant_masks(const MaskStack& masks) {
  std::vector<ad::Var> out;
  for (const auto& m : masks.masks) out.push_back(const_var(m));
  return out;
}

}  // namespace

std::string to_string(Variant v) { return v == Variant::ss ? "ss" : "can"; }
std::string to_string(EditorKind k) { return k == EditorKind::global ? "global" : "mapper"; }

Variant parse_variant(const std::string& s) {
  if (s == "ss") return Variant::ss;
  if (s == "can") return Variant::can;
  throw FormatError("unknown variant '" + s + "' (expected ss or can)");
}

EditorKind parse_editor_kind(const std::string& s) {
  if (s == "global") return EditorKind::global;
  if (s == "mapper") return EditorKind::mapper;
  throw FormatError("unknown editor '" + s + "' (expected global or mapper)");
}

double SemanticScorer::distance(const ImageRGB& image, const std::string& prompt) const {
  return distance(const_var(image.pixels), prompt).item();
}

Tensor IdentityEmbedder::embed(const ImageRGB& image) const {
  return embed(const_var(image.pixels)).value();
}

RegionIntensityScorer::RegionIntensityScorer(double gain, double target)
    : gain_(gain), target_(target) {
  if (!(gain > 0.0) || !std::isfinite(target))
    throw RangeError("region-intensity scorer needs gain > 0 and a finite target");
}

Tensor RegionIntensityScorer::region_map(const std::string& prompt, std::size_t height,
                                         std::size_t width) {
  const std::string p = normalize_prompt(prompt);
  auto has = [&p](const char* a, const char* b) {
    return p.find(a) != std::string::npos || p.find(b) != std::string::npos;
  };
  std::size_t y0 = 0, y1 = height, x0 = 0, x1 = width;
  if (has("upper left", "top left")) {
    y1 = height / 2, x1 = width / 2;
  } else if (has("upper right", "top right")) {
    y1 = height / 2, x0 = width / 2;
  } else if (has("lower left", "bottom left")) {
    y0 = height / 2, x1 = width / 2;
  } else if (has("lower right", "bottom right")) {
    y0 = height / 2, x0 = width / 2;
  }
  Tensor map({height, width});
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) map.at(y, x) = 1.0;
  return map;
}

ad::Var RegionIntensityScorer::distance(const ad::Var& image, const std::string& prompt) const {
  const Tensor& v = image.value();
  if (v.rank() != 3 || v.dim(2) != 3)
    throw ShapeError("region-intensity scorer: image has shape " + shape_string(v.shape()));
  const Tensor region = region_map(prompt, v.dim(0), v.dim(1));
  double count = 0.0;
  for (double r : region.storage()) count += r;
  Tensor weights(v.shape());
  const double w = 1.0 / (3.0 * count);
  for (std::size_t y = 0; y < v.dim(0); ++y)
    for (std::size_t x = 0; x < v.dim(1); ++x)
      if (region.at(y, x) != 0.0)
        for (std::size_t c = 0; c < 3; ++c) weights.at(y, x, c) = w;
  const ad::Var mu = ad::weighted_sum(image, weights);
  const ad::Var score = ad::sigmoid(ad::add_scalar(ad::scale(mu, gain_), -gain_ * target_));
  return ad::add_scalar(ad::scale(score, -1.0), 1.0);
}

std::string RegionIntensityScorer::describe() const {
  return "region-intensity:gain=" + io::format_double(gain_) +
         ",target=" + io::format_double(target_);
}

Tensor CosineStubScorer::text_embedding(const std::string& prompt) {
  Rng rng(io::fnv1a64(prompt));
  Tensor t = rng.normal_tensor({kStubGrid * kStubGrid * 3});
  return ad::normalize(const_var(t)).value();
}

ad::Var CosineStubScorer::distance(const ad::Var& image, const std::string& prompt) const {
  const ad::Var e = ad::normalize(pooled_vector(image, kStubGrid, "cosine-stub scorer"));
  return ad::add_scalar(ad::scale(ad::dot(e, const_var(text_embedding(prompt))), -1.0), 1.0);
}

ad::Var PooledIdentityEmbedder::embed(const ad::Var& image) const {
  return ad::normalize(pooled_vector(image, grid_, "pooled embedder"));
}

std::string PooledIdentityEmbedder::describe() const { return "pooled:" + std::to_string(grid_); }

std::unique_ptr<SemanticScorer> make_scorer(const std::string& description) {
  static const std::regex region(R"(region-intensity(?::gain=([^,]+),target=(.+))?)");
  std::smatch m;
  if (std::regex_match(description, m, region)) {
    if (!m[1].matched) return std::make_unique<RegionIntensityScorer>();
    return std::make_unique<RegionIntensityScorer>(std::stod(m[1]), std::stod(m[2]));
  }
  if (description == "cosine-stub") return std::make_unique<CosineStubScorer>();
  throw FormatError("unknown scorer '" + description + "'");
}

std::unique_ptr<IdentityEmbedder> make_embedder(const std::string& description) {
  static const std::regex pooled(R"(pooled:(\d+))");
  std::smatch m;
  if (std::regex_match(description, m, pooled))
    return std::make_unique<PooledIdentityEmbedder>(std::stoul(m[1]));
  throw FormatError("unknown identity embedder '" + description + "'");
}

LossWeights LossWeights::preset(Variant variant, EditorKind editor) {
  if (variant == Variant::ss)
    return editor == EditorKind::global ? LossWeights{0.0007, 0.015, 0.10, 0.0}
                                        : LossWeights{0.0002, 0.020, 0.08, 0.0};
  return editor == EditorKind::global ? LossWeights{0.0009, 0.08, 0.00009, 0.00003}
                                      : LossWeights{0.0006, 0.08, 0.00002, 0.00003};
}

void LossWeights::validate() const {
  for (double v : {lambda_l2, lambda_id, lambda_area, lambda_tv})
    if (!(v >= 0.0) || !std::isfinite(v)) throw RangeError("loss weights must be finite and >= 0");
}

ad::Var clip_loss(const ad::Var& i_star, const ad::Var& i_tilde, const std::string& prompt,
                  const SemanticScorer& scorer, bool dual) {
  if (i_star.shape() != i_tilde.shape())
    throw ShapeError("clip_loss: images " + shape_string(i_star.shape()) + " and " +
                     shape_string(i_tilde.shape()) + " differ");
  const ad::Var d_star = scorer.distance(i_star, prompt);
  if (!dual) return d_star;
  return ad::scale(ad::add(d_star, scorer.distance(i_tilde, prompt)), 0.5);
}

double clip_loss(const ImageRGB& i_star, const ImageRGB& i_tilde, const std::string& prompt,
                 const SemanticScorer& scorer, bool dual) {
  return clip_loss(const_var(i_star.pixels), const_var(i_tilde.pixels), prompt, scorer, dual)
      .item();
}

ad::Var l2_loss(const std::vector<ad::Var>& delta_rows) {
  return ad::square_sum(ad::stack(delta_rows));
}

double l2_loss(const EditDelta& delta) {
  double s = 0.0;
  for (double v : delta.rows.storage()) s += v * v;
  return s;
}

ad::Var id_loss(const ad::Var& i_star, const ad::Var& i_orig, const IdentityEmbedder& embedder) {
  if (i_star.shape() != i_orig.shape())
    throw ShapeError("id_loss: images " + shape_string(i_star.shape()) + " and " +
                     shape_string(i_orig.shape()) + " differ");
  const ad::Var cos = ad::dot(embedder.embed(i_star), embedder.embed(i_orig));
  return ad::add_scalar(ad::scale(cos, -1.0), 1.0);
}

double id_loss(const ImageRGB& i_star, const ImageRGB& i_orig, const IdentityEmbedder& embedder) {
  return id_loss(const_var(i_star.pixels), const_var(i_orig.pixels), embedder).item();
}

ad::Var area_loss_ss(const ad::Var& logits) { return ad::sum(ad::sigmoid(logits)); }

double area_loss_ss(const Tensor& logits) { return area_loss_ss(const_var(logits)).item(); }

ad::Var area_loss_can(const std::vector<ad::Var>& masks) {
  if (masks.empty()) throw ShapeError("area_loss_can: no masks");
  ad::Var total;
  for (const auto& m : masks) {
    if (m.value().rank() != 2) throw ShapeError("area_loss_can: masks must be 2-D");
    const ad::Var term = ad::scale(ad::sum(m), 1.0 / static_cast<double>(m.value().dim(0)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

double area_loss_can(const MaskStack& masks) { return area_loss_can(constant_masks(masks)).item(); }

ad::Var tv_loss(const std::vector<ad::Var>& masks) {
  if (masks.empty()) throw ShapeError("tv_loss: no masks");
  ad::Var total;
  for (const auto& m : masks) {
    const ad::Var term = ad::total_variation(m);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

double tv_loss(const MaskStack& masks) { return tv_loss(constant_masks(masks)).item(); }

LossReport total_loss(const LossParts& parts, const LossWeights& weights, Variant variant) {
  if ((variant == Variant::can) != parts.tv.has_value())
    throw ShapeError(variant == Variant::can ? "attention variant needs a tv term"
                                             : "segment-selection variant has no tv term");
  weights.validate();
  LossReport r{parts.clip, parts.l2, parts.id, parts.area, parts.tv.value_or(0.0), 0.0};
  double total = parts.clip;
  total = total + parts.l2 * weights.lambda_l2;
  total = total + parts.id * weights.lambda_id;
  total = total + parts.area * weights.lambda_area;
  if (parts.tv) total = total + *parts.tv * weights.lambda_tv;
  r.total = total;
  return r;
}

ad::Var total_loss(const LossTerms& terms, const LossWeights& weights, Variant variant) {
  if ((variant == Variant::can) != terms.tv.defined())
    throw ShapeError(variant == Variant::can ? "attention variant needs a tv term"
                                             : "segment-selection variant has no tv term");
  weights.validate();
  ad::Var total = terms.clip;
  total = ad::add(total, ad::scale(terms.l2, weights.lambda_l2));
  total = ad::add(total, ad::scale(terms.id, weights.lambda_id));
  total = ad::add(total, ad::scale(terms.area, weights.lambda_area));
  if (terms.tv.defined()) total = ad::add(total, ad::scale(terms.tv, weights.lambda_tv));
  return total;
}

LossReport report_of(const LossTerms& terms, const ad::Var& total) {
  return {terms.clip.item(), terms.l2.item(),
          terms.id.item(),   terms.area.item(),
          terms.tv.defined() ? terms.tv.item() : 0.0, total.item()};
}

}  // namespace coral
