#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/tensor.hpp"

namespace coral {

/// Sample from the input latent space, shape (d).
struct LatentZ {
  Tensor values;

  std::size_t dim() const { return values.size(); }
  /// Standard normal draw from the portable generator in rng.hpp.
  static LatentZ from_seed(std::uint64_t seed, std::size_t dim);
};

/// Extended latent code: one row per synthesis layer, shape (L, d).
struct WPlusCode {
  Tensor rows;

  std::size_t layers() const { return rows.dim(0); }
  std::size_t dim() const { return rows.dim(1); }

  friend bool operator==(const WPlusCode&, const WPlusCode&) = default;
};

/// (H, W, C) activations of one synthesis layer.
using FeatureMap = Tensor;

/// (H, W, 3) image. Values are unbounded; export clamps to [0, 1].
struct ImageRGB {
  Tensor pixels;

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;
};

/// Geometry of a progressive generator. Layers are numbered 1..L.
struct BackboneConfig {
  std::size_t layer_count = 0;
  std::size_t latent_dim = 0;
  std::vector<std::size_t> resolutions;  // H_l = W_l, one per layer
  std::vector<std::size_t> channels;     // d_l, one per layer
  std::vector<std::size_t> rgb_layers;   // layers carrying an RGB head
  std::size_t base_resolution = 4;       // constant input c
  std::size_t base_channels = 0;

  /// L=6, d=32, resolutions 4,4,8,8,16,32, 16 channels, RGB at {2,4,6}.
  static BackboneConfig toy();
  /// StyleGAN2-style layout: two layers per resolution from 4 up to `top`
  /// (18 layers at 1024), RGB heads on even layers. Channel counts follow the
  /// usual 512-capped schedule divided by `channel_divisor`.
  static BackboneConfig progressive(std::size_t top_resolution, std::size_t latent_dim,
                                    std::size_t channel_divisor = 1);

  std::size_t resolution(std::size_t layer) const { return resolutions.at(layer - 1); }
  std::size_t channel_count(std::size_t layer) const { return channels.at(layer - 1); }
  std::size_t image_resolution() const { return resolutions.back(); }
  bool has_rgb(std::size_t layer) const;

  /// Throws ShapeError when the invariants do not hold.
  void validate() const;

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct ForwardResult {
  ImageRGB image;
  std::vector<FeatureMap> features;  // features[l - 1] is f^(l)
};

/// Differentiable forward products: the image and every layer's features.
struct ForwardGraph {
  ad::Var image;
  std::vector<ad::Var> features;
};

/// Synthesis generator interface. Implementations are immutable after
/// construction and safe to call from several threads at once.
///
/// A pretrained full-scale adapter implements the same four primitives:
/// `block` must be a pure function of (input, code) with any noise buffers
/// frozen, and `to_rgb` returns the head's contribution already resampled to
/// the output resolution.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const BackboneConfig& config() const = 0;
  virtual WPlusCode map_latent(const LatentZ& z) const = 0;
  virtual ad::Var base() const = 0;
  virtual ad::Var block(std::size_t layer, const ad::Var& input, const ad::Var& code) const = 0;
  virtual ad::Var to_rgb(std::size_t layer, const ad::Var& features) const = 0;
  /// Stable digest of geometry and weights.
  virtual std::string fingerprint() const = 0;

  ForwardResult forward(const WPlusCode& w) const;
  ForwardGraph forward_graph(const std::vector<ad::Var>& code_rows) const;

  void check_code(const WPlusCode& w) const;
};

/// Splits a code into per-layer constant Vars.
std::vector<ad::Var> code_rows(const WPlusCode& w);

/// Small deterministic generator with the structure of a style-based
/// synthesis network:
///   mapping  w = W2 lrelu(W1 z + b1) + b2 + offset_l
///   block l  f = tanh(modconv3x3(upsample(f_prev), A_l w_l + a_l))
///   rgb l    1x1 conv to 3 channels, nearest-upsampled to output size
class ToyBackbone final : public Backbone {
 public:
  using Parameters = std::map<std::string, Tensor>;

  /// Fixed-seed initialization; weights are N(0, 1/fan_in), rounded to float32
  /// so checkpoints reproduce them exactly.
  static std::shared_ptr<ToyBackbone> create(const BackboneConfig& config,
                                             std::uint64_t seed = 0);

  ToyBackbone(BackboneConfig config, Parameters params);

  const BackboneConfig& config() const override { return config_; }
  WPlusCode map_latent(const LatentZ& z) const override;
  ad::Var base() const override;
  ad::Var block(std::size_t layer, const ad::Var& input, const ad::Var& code) const override;
  ad::Var to_rgb(std::size_t layer, const ad::Var& features) const override;
  std::string fingerprint() const override { return fingerprint_; }

  const Parameters& parameters() const { return params_; }
  const Tensor& parameter(const std::string& name) const;

  static std::vector<std::pair<std::string, Shape>> parameter_layout(const BackboneConfig& c);

 private:
  BackboneConfig config_;
  Parameters params_;
  std::string fingerprint_;
};

inline constexpr int kBackboneFormatVersion = 1;

/// Writes `manifest.txt` plus one blob per parameter into `dir`.
void save_checkpoint(const ToyBackbone& backbone, const std::filesystem::path& dir);

/// Loads a checkpoint directory. When `expected_layers` is given, a checkpoint
/// with a different layer count is rejected with VersionError.
std::shared_ptr<Backbone> load_pretrained(const std::filesystem::path& dir,
                                          std::optional<std::size_t> expected_layers = {});

}  // namespace coral
