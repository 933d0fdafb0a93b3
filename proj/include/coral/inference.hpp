#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "coral/backbone.hpp"
#include "coral/blending.hpp"
#include "coral/edit_model.hpp"
#include "coral/losses.hpp"

namespace coral {

inline constexpr int kArtifactFormatVersion = 1;
inline constexpr double kDefaultTau = 0.85;

/// A trained edit plus everything needed to replay it.
struct EditArtifact {
  std::string prompt;
  double default_tau = kDefaultTau;
  LossWeights weights;
  std::string backbone_fingerprint;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t iterations = 0;
  std::string segmenter;  // make_segmenter description; empty for the attention variant
  std::string scorer;
  std::string embedder;
  bool dual_clip = true;
  // Backbone geometry the parameter shapes follow.
  std::size_t geometry_layers = 0;
  std::size_t geometry_latent_dim = 0;
  std::vector<std::size_t> geometry_channels;
  EditModel model;

  Variant variant() const { return model.variant; }
  EditorKind editor() const { return model.editor; }
  std::size_t edit_cutoff() const { return model.edit_cutoff; }

  friend bool operator==(const EditArtifact&, const EditArtifact&) = default;
};

/// Writes manifest.txt and one float32 blob per tensor. Parameters must
/// already be float32-representable (training rounds them) so that loading
/// reproduces the artifact exactly; otherwise RangeError.
void save_artifact(const EditArtifact& artifact, const std::filesystem::path& dir);
/// Throws FormatError (missing/corrupt manifest or blob), VersionError,
/// ChecksumError (blob bytes disagree with the manifest checksum).
EditArtifact load_artifact(const std::filesystem::path& dir);

struct EditResult {
  ImageRGB edited;          // I*
  ImageRGB original;        // I
  MaskStack masks;          // thresholded and toggled
  std::vector<double> area_fractions;  // per layer 1..L
  EditDelta delta;          // alpha-scaled
};

/// w = map_latent(z); delta = alpha * editor(w); masks from the selector,
/// thresholded at tau, toggled-off layers zeroed; I* = blended_forward.
/// `layer_toggles` lists edit_cutoff or L flags (true = layer enabled).
/// Throws FingerprintError, RangeError (tau outside [0, 1] or non-finite
/// alpha) and ShapeError (toggle count).
EditResult apply_edit(const Backbone& backbone, const EditArtifact& artifact, const LatentZ& z,
                      double alpha, double tau,
                      const std::optional<std::vector<bool>>& layer_toggles = std::nullopt);

/// (sum m) / (H_l * W_l) per layer.
std::vector<double> area_fractions(const MaskStack& masks);

struct EditMetrics {
  double pixel_mse = 0.0;
  double id_similarity = 0.0;
  std::vector<double> area_fractions;
};

EditMetrics edit_metrics(const EditResult& result, const IdentityEmbedder& embedder);

/// 8-bit RGB PNG after clamping to [0, 1].
std::string encode_png(const ImageRGB& image);
/// 8-bit grayscale PNG of a (H, W) map clamped to [0, 1].
std::string encode_png(const LayerMask& mask);
void write_png(const std::filesystem::path& path, const ImageRGB& image);
void write_png(const std::filesystem::path& path, const LayerMask& mask);

}  // namespace coral
