#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/backbone.hpp"
#include "coral/blending.hpp"
#include "coral/edit_delta.hpp"

namespace coral {

enum class Variant { ss, can };
enum class EditorKind { global, mapper };

std::string to_string(Variant v);
std::string to_string(EditorKind k);
/// Throws FormatError on unknown names.
Variant parse_variant(const std::string& s);
EditorKind parse_editor_kind(const std::string& s);

/// Text-image distance; lower is better aligned. Implementations are
/// deterministic and safe for concurrent calls.
class SemanticScorer {
 public:
  virtual ~SemanticScorer() = default;
  /// Differentiable in `image` (H, W, 3); returns a scalar Var.
  virtual ad::Var distance(const ad::Var& image, const std::string& prompt) const = 0;
  virtual std::string describe() const = 0;

  double distance(const ImageRGB& image, const std::string& prompt) const;
};

/// Unit-norm identity embedding of an image.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual ad::Var embed(const ad::Var& image) const = 0;
  virtual std::string describe() const = 0;

  Tensor embed(const ImageRGB& image) const;
};

/// Rewards brightness inside a region named by the prompt:
///   D = 1 - sigmoid(gain * (mean(region) - target))
/// The region is a quadrant when the prompt mentions "upper left", "top
/// right", "lower left", ... (hyphens optional), otherwise the whole image.
class RegionIntensityScorer final : public SemanticScorer {
 public:
  explicit RegionIntensityScorer(double gain = 4.0, double target = 0.5);
  ad::Var distance(const ad::Var& image, const std::string& prompt) const override;
  std::string describe() const override;
  using SemanticScorer::distance;

  /// (H, W) 0/1 map of the region a prompt designates.
  static Tensor region_map(const std::string& prompt, std::size_t height, std::size_t width);

 private:
  double gain_;
  double target_;
};

/// 1 - cosine(image embedding, text embedding). The image embedding is the
/// image average-pooled to 4x4x3; the text embedding is a unit vector drawn
/// from a generator seeded by the prompt's FNV-1a hash.
class CosineStubScorer final : public SemanticScorer {
 public:
  ad::Var distance(const ad::Var& image, const std::string& prompt) const override;
  std::string describe() const override { return "cosine-stub"; }
  using SemanticScorer::distance;

  static Tensor text_embedding(const std::string& prompt);
};

/// Average-pools to grid x grid x 3 and normalizes.
class PooledIdentityEmbedder final : public IdentityEmbedder {
 public:
  explicit PooledIdentityEmbedder(std::size_t grid = 4) : grid_(grid) {}
  ad::Var embed(const ad::Var& image) const override;
  std::string describe() const override;
  using IdentityEmbedder::embed;

 private:
  std::size_t grid_;
};

/// "region-intensity:gain=4,target=0.5", "region-intensity" or "cosine-stub".
std::unique_ptr<SemanticScorer> make_scorer(const std::string& description);
/// "pooled:4".
std::unique_ptr<IdentityEmbedder> make_embedder(const std::string& description);

struct LossWeights {
  double lambda_l2 = 0.0;
  double lambda_id = 0.0;
  double lambda_area = 0.0;
  double lambda_tv = 0.0;

  /// Published weights for each variant/editor pairing.
  static LossWeights preset(Variant variant, EditorKind editor);
  /// Throws RangeError for negative or non-finite weights.
  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossReport {
  double clip = 0.0;
  double l2 = 0.0;
  double id = 0.0;
  double area = 0.0;
  double tv = 0.0;
  double total = 0.0;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Loss terms before weighting. `tv` is present exactly for the attention variant.
struct LossParts {
  double clip = 0.0;
  double l2 = 0.0;
  double id = 0.0;
  double area = 0.0;
  std::optional<double> tv;
};

struct LossTerms {
  ad::Var clip;
  ad::Var l2;
  ad::Var id;
  ad::Var area;
  ad::Var tv;  // undefined for ss
};

/// dual: (D(I*) + D(I~)) / 2; otherwise D(I*).
ad::Var clip_loss(const ad::Var& i_star, const ad::Var& i_tilde, const std::string& prompt,
                  const SemanticScorer& scorer, bool dual = true);
double clip_loss(const ImageRGB& i_star, const ImageRGB& i_tilde, const std::string& prompt,
                 const SemanticScorer& scorer, bool dual = true);

/// Sum of squared entries over all rows.
ad::Var l2_loss(const std::vector<ad::Var>& delta_rows);
double l2_loss(const EditDelta& delta);

/// 1 - <R(I*), R(I)>.
ad::Var id_loss(const ad::Var& i_star, const ad::Var& i_orig, const IdentityEmbedder& embedder);
double id_loss(const ImageRGB& i_star, const ImageRGB& i_orig, const IdentityEmbedder& embedder);

/// Sum of sigmoid(logits).
ad::Var area_loss_ss(const ad::Var& logits);
double area_loss_ss(const Tensor& logits);

/// Sum over layers of (1 / H_l) * mask mass.
ad::Var area_loss_can(const std::vector<ad::Var>& masks);
double area_loss_can(const MaskStack& masks);

/// Squared horizontal and vertical neighbour differences, summed over layers.
ad::Var tv_loss(const std::vector<ad::Var>& masks);
double tv_loss(const MaskStack& masks);

/// ss:  clip + l2 * l2 + id * id + area * area
/// can: the same plus tv * tv
/// Throws ShapeError when `tv` presence disagrees with the variant.
LossReport total_loss(const LossParts& parts, const LossWeights& weights, Variant variant);
/// Graph form; summation order matches the scalar form exactly.
ad::Var total_loss(const LossTerms& terms, const LossWeights& weights, Variant variant);
/// Values of `terms` assembled into a report whose total is `total`.
LossReport report_of(const LossTerms& terms, const ad::Var& total);

}  // namespace coral
