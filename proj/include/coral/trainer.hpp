#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coral/backbone.hpp"
#include "coral/edit_model.hpp"
#include "coral/inference.hpp"
#include "coral/losses.hpp"
#include "coral/rng.hpp"
#include "coral/selectors.hpp"
#include "coral/tensor_io.hpp"

namespace coral {

inline constexpr std::size_t kDefaultEditCutoff = 13;

struct TrainConfig {
  std::string prompt;
  Variant variant = Variant::ss;
  EditorKind editor = EditorKind::global;
  LossWeights weights;
  std::size_t batch_size = 3;
  std::size_t max_iterations = 20000;
  double learning_rate = 0.0;  // 0 = per-variant default
  std::uint64_t seed = 0;
  /// Unset means min(13, L).
  std::optional<std::size_t> edit_cutoff;
  std::size_t eval_every = 100;
  std::size_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  double default_tau = kDefaultTau;
  bool dual_clip = true;
  double grad_clip = 10.0;
  bool early_stop = false;
  std::size_t plateau_window = 500;
  double plateau_tolerance = 1e-3;
  std::string segmenter = "grid:4x4";
  std::string scorer = "region-intensity";
  std::string embedder = "pooled:4";

  /// Published loss weights and the default learning rate for the pairing.
  static TrainConfig defaults(std::string prompt, Variant variant, EditorKind editor);
  /// 0.01 for ss-global, 0.0005 otherwise.
  static double default_learning_rate(Variant variant, EditorKind editor);

  /// Overrides fields from `key=value` entries (same names as the fields,
  /// plus lambda_l2 / lambda_id / lambda_area / lambda_tv). Unknown keys throw
  /// FormatError.
  void apply(const io::Manifest& entries);

  double effective_learning_rate() const;
  std::size_t effective_edit_cutoff(const BackboneConfig& config) const;
  /// Throws RangeError / FormatError on invalid fields.
  void validate(const BackboneConfig& config) const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct TrainState {
  std::uint64_t iteration = 0;
  EditModel model;
  AdamState adam;
  Rng rng;
  LossReport running;  // exponential moving average of per-step reports
  double plateau_reference = 0.0;  // smoothed clip at the last window boundary
  bool stopped_early = false;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Everything a run needs besides its mutable state.
class Trainer {
 public:
  Trainer(std::shared_ptr<const Backbone> backbone, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  const Backbone& backbone() const { return *backbone_; }
  std::size_t edit_cutoff() const { return cutoff_; }

  TrainState initial_state() const;

  /// One update on the given latent batch. Throws ShapeError on batch size
  /// mismatch and NonFiniteLossError before touching `state` when any loss
  /// is not finite.
  LossReport step(TrainState& state, const std::vector<LatentZ>& z_batch) const;
  /// Draws a standard-normal batch from state.rng, then steps.
  LossReport step(TrainState& state) const;

  /// Mean loss of `model` over any nonempty batch, without updating.
  LossReport evaluate(const EditModel& model, const std::vector<LatentZ>& z_batch) const;

  /// Float32-rounded parameters packaged with the run's settings.
  EditArtifact make_artifact(const TrainState& state) const;

 private:
  struct Batch;
  Batch forward_batch(const EditModel& model, const std::vector<ad::Var>& params,
                      const std::vector<LatentZ>& z_batch) const;

  std::shared_ptr<const Backbone> backbone_;
  TrainConfig config_;
  std::size_t cutoff_;
  std::unique_ptr<Segmenter> segmenter_;
  std::unique_ptr<SemanticScorer> scorer_;
  std::unique_ptr<IdentityEmbedder> embedder_;
};

void save_train_state(const TrainState& state, const std::filesystem::path& dir);
/// `layout` supplies tensor names and shapes (normally trainer.initial_state()).
TrainState load_train_state(const std::filesystem::path& dir, const TrainState& layout);

struct TrainOptions {
  std::filesystem::path out_dir;             // artifact, loss.csv, checkpoints/
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many steps in this call (for tests of resumption).
  std::optional<std::uint64_t> stop_after;
};

struct TrainOutcome {
  EditArtifact artifact;
  TrainState state;
  std::vector<LossReport> history;  // reports of the steps run in this call
};

/// Runs steps until max_iterations (or an early stop), appending one CSV row
/// per step to out_dir/loss.csv, checkpointing every checkpoint_every steps to
/// out_dir/checkpoints/iter_<n>, and saving the final artifact into out_dir.
TrainOutcome train(const Trainer& trainer, const TrainOptions& options);

}  // namespace coral
