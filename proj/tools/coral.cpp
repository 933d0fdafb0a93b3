// Command-line front end: backbone setup, training, applying edits, serving.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <future>
#include <sstream>

#include "coral/error.hpp"
#include "coral/inference.hpp"
#include "coral/service.hpp"
#include "coral/tensor_io.hpp"
#include "coral/trainer.hpp"

namespace fs = std::filesystem;
using namespace coral;

namespace {

std::shared_ptr<Backbone> open_backbone(const std::string& dir) {
  if (dir.empty()) return ToyBackbone::create(BackboneConfig::toy(), 0);
  return load_pretrained(dir);
}

std::vector<bool> parse_toggles(const std::string& list) {
  std::vector<bool> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "1" || item == "on" || item == "true") out.push_back(true);
    else if (item == "0" || item == "off" || item == "false") out.push_back(false);
    else throw FormatError("layer toggle '" + item + "' is not 0/1");
  }
  return out;
}

int init_backbone(const std::string& out, std::uint64_t seed) {
  const auto backbone = ToyBackbone::create(BackboneConfig::toy(), seed);
  save_checkpoint(*backbone, out);
  spdlog::info("wrote toy backbone {} to {}", backbone->fingerprint(), out);
  return 0;
}

struct TrainArgs {
  std::string prompt, variant, editor, config, out, backbone, resume;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg =
      TrainConfig::defaults(a.prompt, parse_variant(a.variant), parse_editor_kind(a.editor));
  if (!a.config.empty()) cfg.apply(io::Manifest::load(a.config));
  const Trainer trainer(open_backbone(a.backbone), cfg);
  TrainOptions options{a.out, std::nullopt, std::nullopt};
  if (!a.resume.empty()) options.resume_from = a.resume;
  const TrainOutcome result = train(trainer, options);
  spdlog::info("trained {} iterations; artifact in {}", result.state.iteration, a.out);
  return 0;
}

struct ApplyArgs {
  std::string artifact, out, backbone, toggles;
  std::uint64_t seed = 0;
  double alpha = 1.0;
  double tau = -1.0;
};

int run_apply(const ApplyArgs& a) {
  const auto backbone = open_backbone(a.backbone);
  const EditArtifact artifact = load_artifact(a.artifact);
  std::optional<std::vector<bool>> toggles;
  if (!a.toggles.empty()) toggles = parse_toggles(a.toggles);
  const double tau = a.tau < 0.0 ? artifact.default_tau : a.tau;
  const EditResult r = apply_edit(*backbone, artifact,
                                  LatentZ::from_seed(a.seed, backbone->config().latent_dim),
                                  a.alpha, tau, toggles);
  const EditMetrics m = edit_metrics(r, *make_embedder(artifact.embedder));

  const fs::path out(a.out);
  fs::create_directories(out);
  write_png(out / "original.png", r.original);
  write_png(out / "edited.png", r.edited);
  for (std::size_t l = 1; l <= artifact.edit_cutoff(); ++l)
    write_png(out / ("mask_layer_" + std::to_string(l) + ".png"), r.masks.layer(l));
  std::string csv = "metric,value\n";
  csv += "pixel_mse," + io::format_double(m.pixel_mse) + "\n";
  csv += "id_similarity," + io::format_double(m.id_similarity) + "\n";
  for (std::size_t l = 1; l <= artifact.edit_cutoff(); ++l)
    csv += "area_fraction_layer_" + std::to_string(l) + "," +
           io::format_double(m.area_fractions[l - 1]) + "\n";
  io::write_file(out / "metrics.csv", csv);
  return 0;
}

int run_serve(const std::string& backbone_dir, const std::string& host) {
  Service service;
  HttpServer server(service);
  const int port = server.bind(host, port_from_env());
  server.start();
  spdlog::info("listening on {}:{}", host, port);
  service.initialize(open_backbone(backbone_dir), artifact_dir_from_env());
  spdlog::info("ready: {}", service.get_health().body);
  std::promise<void>().get_future().wait();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coral: region- and layer-selective latent image edits"};
  app.require_subcommand(1);

  std::string init_out;
  std::uint64_t init_seed = 0;
  auto* init = app.add_subcommand("init-backbone", "Write a toy backbone checkpoint");
  init->add_option("--out", init_out, "Checkpoint directory")->required();
  init->add_option("--seed", init_seed, "Initialization seed");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train an edit for one prompt");
  tr->add_option("--prompt", ta.prompt, "Edit text")->required();
  tr->add_option("--variant", ta.variant, "ss or can")->required()->check(CLI::IsMember({"ss", "can"}));
  tr->add_option("--editor", ta.editor, "global or mapper")
      ->required()
      ->check(CLI::IsMember({"global", "mapper"}));
  tr->add_option("--config", ta.config, "key=value overrides")->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "Output directory")->required();
  tr->add_option("--backbone", ta.backbone, "Backbone checkpoint (default: seed-0 toy)");
  tr->add_option("--resume", ta.resume, "Training checkpoint to resume from");

  ApplyArgs aa;
  auto* ap = app.add_subcommand("apply", "Apply a trained edit to one latent");
  ap->add_option("--artifact", aa.artifact, "Artifact directory")->required();
  ap->add_option("--seed", aa.seed, "Latent seed")->required();
  ap->add_option("--alpha", aa.alpha, "Edit strength")->check(CLI::Range(-1.5, 1.5));
  ap->add_option("--tau", aa.tau, "Mask threshold (default: artifact's)")->check(CLI::Range(0.0, 1.0));
  ap->add_option("--toggle-layers", aa.toggles, "Comma-separated 0/1 per edited layer");
  ap->add_option("--out", aa.out, "Output directory")->required();
  ap->add_option("--backbone", aa.backbone, "Backbone checkpoint (default: seed-0 toy)");

  std::string serve_backbone, serve_host = "0.0.0.0";
  auto* sv = app.add_subcommand("serve", "HTTP service (CORAL_PORT, CORAL_ARTIFACT_DIR)");
  sv->add_option("--backbone", serve_backbone, "Backbone checkpoint (default: seed-0 toy)");
  sv->add_option("--host", serve_host, "Bind address");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*init) return init_backbone(init_out, init_seed);
    if (*tr) return run_train(ta);
    if (*ap) return run_apply(aa);
    if (*sv) return run_serve(serve_backbone, serve_host);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
