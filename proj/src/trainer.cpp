#include "coral/trainer.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "coral/error.hpp"

namespace coral {
namespace {

namespace fs = std::filesystem;

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kRunningDecay = 0.98;

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config key '" + key + "' expects true or false, got '" + v + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw FormatError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<Tensor> zeros_like_model(const EditModel& model) {
  std::vector<Tensor> out;
  model.visit([&out](const std::string&, const Tensor& t) { out.push_back(Tensor::zeros_like(t)); });
  return out;
}

bool finite_report(const LossReport& r) {
  for (double v : {r.clip, r.l2, r.id, r.area, r.tv, r.total})
    if (!std::isfinite(v)) return false;
  return true;
}

std::string describe(const LossReport& r) {
  std::ostringstream s;
  s << "clip=" << r.clip << " l2=" << r.l2 << " id=" << r.id << " area=" << r.area
    << " tv=" << r.tv << " total=" << r.total;
  return s.str();
}

void mix(LossReport& acc, const LossReport& r, double keep) {
  auto f = [keep](double a, double b) { return keep * a + (1.0 - keep) * b; };
  acc = {f(acc.clip, r.clip), f(acc.l2, r.l2),     f(acc.id, r.id),
         f(acc.area, r.area), f(acc.tv, r.tv), f(acc.total, r.total)};
}

std::string csv_row(std::uint64_t iteration, const LossReport& r) {
  std::string s = std::to_string(iteration);
  for (double v : {r.clip, r.l2, r.id, r.area, r.tv, r.total}) s += "," + io::format_double(v);
  return s + "\n";
}

constexpr const char* kCsvHeader = "iteration,clip,l2,id,area,tv,total\n";

/// Keeps the header and rows before `iteration` so a resumed run rewrites
/// the tail it is about to repeat.
void prepare_log(const fs::path& path, std::uint64_t iteration, bool resume) {
  std::string kept = kCsvHeader;
  if (resume && fs::exists(path)) {
    std::istringstream in(io::read_file(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) >= iteration) break;
      kept += line + "\n";
    }
  }
  io::write_file(path, kept);
}

}  // namespace

double TrainConfig::default_learning_rate(Variant variant, EditorKind editor) {
  return variant == Variant::ss && editor == EditorKind::global ? 0.01 : 0.0005;
}

TrainConfig TrainConfig::defaults(std::string prompt, Variant variant, EditorKind editor) {
  TrainConfig c;
  c.prompt = std::move(prompt);
  c.variant = variant;
  c.editor = editor;
  c.weights = LossWeights::preset(variant, editor);
  if (variant == Variant::can) c.segmenter.clear();
  return c;
}

void TrainConfig::apply(const io::Manifest& entries) {
  if (auto v = entries.find("variant")) variant = parse_variant(*v);
  if (auto e = entries.find("editor")) editor = parse_editor_kind(*e);
  if (entries.contains("variant") || entries.contains("editor")) {
    weights = LossWeights::preset(variant, editor);
    if (variant == Variant::can && !entries.contains("segmenter")) segmenter.clear();
  }
  for (const auto& [key, value] : entries.entries()) {
    if (key == "variant" || key == "editor") continue;
    if (key == "prompt") prompt = value;
    else if (key == "batch_size") batch_size = parse_size(key, value);
    else if (key == "max_iterations") max_iterations = parse_size(key, value);
    else if (key == "learning_rate") learning_rate = parse_real(key, value);
    else if (key == "seed") seed = parse_size(key, value);
    else if (key == "edit_cutoff") edit_cutoff = parse_size(key, value);
    else if (key == "eval_every") eval_every = parse_size(key, value);
    else if (key == "checkpoint_every") checkpoint_every = parse_size(key, value);
    else if (key == "default_tau") default_tau = parse_real(key, value);
    else if (key == "dual_clip") dual_clip = parse_bool(key, value);
    else if (key == "grad_clip") grad_clip = parse_real(key, value);
    else if (key == "early_stop") early_stop = parse_bool(key, value);
    else if (key == "plateau_window") plateau_window = parse_size(key, value);
    else if (key == "plateau_tolerance") plateau_tolerance = parse_real(key, value);
    else if (key == "segmenter") segmenter = value;
    else if (key == "scorer") scorer = value;
    else if (key == "embedder") embedder = value;
    else if (key == "lambda_l2") weights.lambda_l2 = parse_real(key, value);
    else if (key == "lambda_id") weights.lambda_id = parse_real(key, value);
    else if (key == "lambda_area") weights.lambda_area = parse_real(key, value);
    else if (key == "lambda_tv") weights.lambda_tv = parse_real(key, value);
    else throw FormatError("unknown config key '" + key + "'");
  }
}

double TrainConfig::effective_learning_rate() const {
  return learning_rate > 0.0 ? learning_rate : default_learning_rate(variant, editor);
}

std::size_t TrainConfig::effective_edit_cutoff(const BackboneConfig& config) const {
  return edit_cutoff.value_or(std::min(kDefaultEditCutoff, config.layer_count));
}

void TrainConfig::validate(const BackboneConfig& config) const {
  if (prompt.empty()) throw FormatError("prompt is empty");
  if (prompt.find('\n') != std::string::npos || prompt.front() == ' ' || prompt.back() == ' ')
    throw FormatError("prompt must be one line without surrounding spaces");
  if (batch_size < 1) throw RangeError("batch_size must be >= 1");
  if (max_iterations < 1) throw RangeError("max_iterations must be >= 1");
  const double lr = effective_learning_rate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw RangeError("learning rate must be positive");
  const std::size_t cutoff = effective_edit_cutoff(config);
  if (cutoff < 1 || cutoff > config.layer_count)
    throw RangeError("edit_cutoff " + std::to_string(cutoff) + " outside 1.." +
                     std::to_string(config.layer_count));
  if (!(default_tau >= 0.0 && default_tau <= 1.0)) throw RangeError("default_tau outside [0, 1]");
  if (!(grad_clip > 0.0)) throw RangeError("grad_clip must be positive");
  if (plateau_window < 1) throw RangeError("plateau_window must be >= 1");
  if (variant == Variant::ss && segmenter.empty())
    throw FormatError("segment selection needs a segmenter");
  weights.validate();
}

struct Trainer::Batch {
  ad::Var total;
  LossReport report;
};

Trainer::Trainer(std::shared_ptr<const Backbone> backbone, TrainConfig config)
    : backbone_(std::move(backbone)), config_(std::move(config)) {
  if (!backbone_) throw Error("trainer needs a backbone");
  config_.validate(backbone_->config());
  cutoff_ = config_.effective_edit_cutoff(backbone_->config());
  if (config_.variant == Variant::ss) segmenter_ = make_segmenter(config_.segmenter);
  scorer_ = make_scorer(config_.scorer);
  embedder_ = make_embedder(config_.embedder);
}

TrainState Trainer::initial_state() const {
  TrainState s;
  s.model = EditModel::init(backbone_->config(), config_.variant, config_.editor, cutoff_,
                            segmenter_ ? segmenter_->class_count() : 0, config_.seed);
  s.adam.m = zeros_like_model(s.model);
  s.adam.v = zeros_like_model(s.model);
  s.rng = Rng(config_.seed);
  return s;
}

Trainer::Batch Trainer::forward_batch(const EditModel& model, const std::vector<ad::Var>& params,
                                      const std::vector<LatentZ>& z_batch) const {
  if (z_batch.empty()) throw ShapeError("empty latent batch");
  const LossSetup setup{config_.prompt, config_.weights, scorer_.get(), embedder_.get(),
                        config_.dual_clip};
  const double inv = 1.0 / static_cast<double>(z_batch.size());
  Batch b;
  for (const auto& z : z_batch) {
    const WPlusCode w = backbone_->map_latent(z);
    const EditGraph g = edit_graph(*backbone_, model, params, w, segmenter_.get());
    const LossTerms terms = loss_terms(g, model, params, setup);
    const ad::Var total = total_loss(terms, config_.weights, config_.variant);
    const LossReport r = report_of(terms, total);
    b.total = b.total.defined() ? ad::add(b.total, total) : total;
    b.report.clip += r.clip * inv;
    b.report.l2 += r.l2 * inv;
    b.report.id += r.id * inv;
    b.report.area += r.area * inv;
    b.report.tv += r.tv * inv;
    b.report.total += r.total * inv;
  }
  b.total = ad::scale(b.total, inv);
  return b;
}

LossReport Trainer::evaluate(const EditModel& model, const std::vector<LatentZ>& z_batch) const {
  std::vector<ad::Var> params;
  model.visit([&params](const std::string&, const Tensor& t) {
    params.push_back(ad::Var::constant(t));
  });
  return forward_batch(model, params, z_batch).report;
}

LossReport Trainer::step(TrainState& state, const std::vector<LatentZ>& z_batch) const {
  if (z_batch.size() != config_.batch_size)
    throw ShapeError("batch has " + std::to_string(z_batch.size()) + " latents, expected " +
                     std::to_string(config_.batch_size));
  std::vector<ad::Var> params;
  state.model.visit([&params](const std::string&, const Tensor& t) {
    params.push_back(ad::Var::parameter(t));
  });
  const Batch b = forward_batch(state.model, params, z_batch);
  if (!finite_report(b.report))
    throw NonFiniteLossError("non-finite loss at iteration " + std::to_string(state.iteration) +
                             ": " + describe(b.report));
  ad::backward(b.total);

  std::vector<Tensor> grads;
  double norm_sq = 0.0;
  for (const auto& p : params) {
    grads.push_back(p.grad());
    for (double g : grads.back().storage()) norm_sq += g * g;
  }
  const double norm = std::sqrt(norm_sq);
  if (!std::isfinite(norm))
    throw NonFiniteLossError("non-finite gradient at iteration " + std::to_string(state.iteration));
  const double clip = norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;

  const double t = static_cast<double>(state.iteration + 1);
  const double lr = config_.effective_learning_rate();
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  std::size_t k = 0;
  state.model.visit([&](const std::string&, Tensor& p) {
    Tensor& m = state.adam.m[k];
    Tensor& v = state.adam.v[k];
    const Tensor& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
    }
    ++k;
  });

  if (state.iteration == 0)
    state.running = b.report;
  else
    mix(state.running, b.report, kRunningDecay);
  ++state.iteration;

  if (config_.early_stop && state.iteration % config_.plateau_window == 0) {
    const double now = state.running.clip;
    const double ref = state.plateau_reference;
    if (ref > 0.0 && (ref - now) / ref < config_.plateau_tolerance) state.stopped_early = true;
    state.plateau_reference = now;
  }
  return b.report;
}

LossReport Trainer::step(TrainState& state) const {
  std::vector<LatentZ> batch;
  for (std::size_t i = 0; i < config_.batch_size; ++i)
    batch.push_back(LatentZ{state.rng.normal_tensor({backbone_->config().latent_dim})});
  return step(state, batch);
}

EditArtifact Trainer::make_artifact(const TrainState& state) const {
  EditArtifact a;
  a.prompt = config_.prompt;
  a.default_tau = config_.default_tau;
  a.weights = config_.weights;
  a.backbone_fingerprint = backbone_->fingerprint();
  a.learning_rate = config_.effective_learning_rate();
  a.seed = config_.seed;
  a.iterations = state.iteration;
  a.segmenter = config_.variant == Variant::ss ? segmenter_->describe() : "";
  a.scorer = scorer_->describe();
  a.embedder = embedder_->describe();
  a.dual_clip = config_.dual_clip;
  const auto& c = backbone_->config();
  a.geometry_layers = c.layer_count;
  a.geometry_latent_dim = c.latent_dim;
  a.geometry_channels = c.channels;
  a.model = state.model;
  a.model.visit([](const std::string&, Tensor& t) { round_to_float(t); });
  return a;
}

void save_train_state(const TrainState& s, const fs::path& dir) {
  fs::create_directories(dir);
  io::Manifest m;
  m.set("format", std::string("coral-train-state"));
  m.set("format_version", std::int64_t{1});
  m.set("iteration", std::to_string(s.iteration));
  m.set("rng", s.rng.serialize());
  m.set("running.clip", s.running.clip);
  m.set("running.l2", s.running.l2);
  m.set("running.id", s.running.id);
  m.set("running.area", s.running.area);
  m.set("running.tv", s.running.tv);
  m.set("running.total", s.running.total);
  m.set("plateau_reference", s.plateau_reference);
  m.set("stopped_early", std::string(s.stopped_early ? "true" : "false"));
  std::size_t k = 0;
  s.model.visit([&](const std::string& name, const Tensor& t) {
    for (const auto& [file, tensor] : {std::pair<std::string, const Tensor*>{name + ".bin", &t},
                                       {"adam.m." + name + ".bin", &s.adam.m.at(k)},
                                       {"adam.v." + name + ".bin", &s.adam.v.at(k)}}) {
      const std::string bytes = io::encode_blob(*tensor, io::Precision::f64);
      io::write_file(dir / file, bytes);
      m.set("checksum." + file, io::hex32(io::crc32(bytes)));
    }
    ++k;
  });
  m.save(dir / "manifest.txt");
}

TrainState load_train_state(const fs::path& dir, const TrainState& layout) {
  const io::Manifest m = io::Manifest::load(dir / "manifest.txt");
  if (m.get("format") != "coral-train-state")
    throw FormatError(dir.string() + " is not a training checkpoint");
  if (m.get_int("format_version") != 1) throw VersionError("unsupported checkpoint version");
  TrainState s = layout;
  s.iteration = std::stoull(m.get("iteration"));
  s.rng = Rng::deserialize(m.get("rng"));
  s.running = {m.get_double("running.clip"), m.get_double("running.l2"),
               m.get_double("running.id"),   m.get_double("running.area"),
               m.get_double("running.tv"),   m.get_double("running.total")};
  s.plateau_reference = m.get_double("plateau_reference");
  s.stopped_early = m.get("stopped_early") == "true";
  auto load = [&](const std::string& file, Tensor& into) {
    const std::string bytes = io::read_file(dir / file);
    if (io::hex32(io::crc32(bytes)) != m.get("checksum." + file))
      throw ChecksumError("checkpoint blob " + file + " fails its checksum");
    Tensor t = io::decode_blob(bytes, file);
    if (t.shape() != into.shape()) throw FormatError("checkpoint blob " + file + " has wrong shape");
    into = std::move(t);
  };
  std::size_t k = 0;
  s.model.visit([&](const std::string& name, Tensor& t) {
    load(name + ".bin", t);
    load("adam.m." + name + ".bin", s.adam.m.at(k));
    load("adam.v." + name + ".bin", s.adam.v.at(k));
    ++k;
  });
  return s;
}

TrainOutcome train(const Trainer& trainer, const TrainOptions& options) {
  const TrainConfig& cfg = trainer.config();
  fs::create_directories(options.out_dir);
  TrainOutcome out;
  out.state = options.resume_from ? load_train_state(*options.resume_from, trainer.initial_state())
                                  : trainer.initial_state();
  const fs::path log_path = options.out_dir / "loss.csv";
  prepare_log(log_path, out.state.iteration, options.resume_from.has_value());
  std::ofstream log(log_path, std::ios::app | std::ios::binary);

  std::uint64_t steps = 0;
  while (out.state.iteration < cfg.max_iterations && !out.state.stopped_early &&
         (!options.stop_after || steps < *options.stop_after)) {
    const LossReport r = trainer.step(out.state);
    ++steps;
    out.history.push_back(r);
    log << csv_row(out.state.iteration - 1, r);
    if (cfg.eval_every && out.state.iteration % cfg.eval_every == 0)
      spdlog::info("iteration {}: {}", out.state.iteration, describe(out.state.running));
    if (cfg.checkpoint_every && out.state.iteration % cfg.checkpoint_every == 0)
      save_train_state(out.state,
                       options.out_dir / "checkpoints" / ("iter_" + std::to_string(out.state.iteration)));
  }
  log.flush();
  if (out.state.stopped_early)
    spdlog::info("stopping at iteration {}: clip loss plateaued", out.state.iteration);
  out.artifact = trainer.make_artifact(out.state);
  save_artifact(out.artifact, options.out_dir);
  return out;
}

}  // namespace coral
