// Acceptance run: one PASS/FAIL line per top-level criterion. Exits nonzero if
// any criterion fails.

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <sstream>

#include "coral/blending.hpp"
#include "coral/inference.hpp"
#include "coral/service.hpp"
#include "coral/tensor_io.hpp"
#include "coral/trainer.hpp"
#include "support.hpp"

using namespace coral;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kPrompt = "brighten the upper-left corner";

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const Variant kVariants[] = {Variant::ss, Variant::can};
const EditorKind kEditors[] = {EditorKind::global, EditorKind::mapper};

std::string combo(Variant v, EditorKind e) { return to_string(v) + "-" + to_string(e); }

// ---------------------------------------------------------------------------

void collapse_identities() {
  const Stopwatch clock;
  const BackboneConfig c = BackboneConfig::toy();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto bb = test::toy_backbone(i);
    const WPlusCode w = test::random_code(c, 1000 + i);
    const WPlusCode w2{test::random_tensor({c.layer_count, c.latent_dim}, 2000 + i, 0.5)};
    WPlusCode edited = w;
    for (std::size_t k = 0; k < w.rows.size(); ++k) edited.rows[k] += w2.rows[k];
    worst = std::max(worst, max_abs_diff(blended_forward(*bb, w, edited, MaskStack::ones(c)).image.pixels,
                                         bb->forward(edited).image.pixels));
    worst = std::max(worst, max_abs_diff(blended_forward(*bb, w, edited, MaskStack::zeros(c)).image.pixels,
                                         bb->forward(w).image.pixels));
  }
  const double t = clock.seconds();
  report("blending collapse identities", worst <= 1e-5 && t < 30.0,
         fmt("100 cases, max abs error %.3g (<= 1e-5), %.2f s (< 30 s)", worst, t));
}

void feedforward_vs_feat() {
  const Stopwatch clock;
  const BackboneConfig c = BackboneConfig::toy();
  const auto bb = test::toy_backbone();
  const WPlusCode w = bb->map_latent(LatentZ::from_seed(0, c.latent_dim));
  WPlusCode w2 = w;
  Rng rng(77);
  for (std::size_t k = 0; k < c.latent_dim; ++k) w2.rows.at(1, k) += rng.normal();
  MaskStack masks = MaskStack::ones(c);
  masks.layer(3).fill(0.0);

  const Tensor base = bb->forward(w).image.pixels;
  const Tensor ours = blended_forward(*bb, w, w2, masks).image.pixels;
  double sq = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) sq += (ours[i] - base[i]) * (ours[i] - base[i]);
  const double rms = std::sqrt(sq / static_cast<double>(base.size()));
  const double feat =
      max_abs_diff(feat_blend_forward(*bb, w, w2, masks.layer(3), 3).pixels, base);
  const double t = clock.seconds();
  report("feedforwarding vs FEAT contrast", rms > 1e-3 && feat <= 1e-5 && t < 10.0,
         fmt("blended RMS change %.3g (> 1e-3), FEAT max abs change %.3g (<= 1e-5), %.2f s (< 10 s)",
             rms, feat, t));
}

// ---------------------------------------------------------------------------

void gradient_suite() {
  const Stopwatch clock;
  const auto bb = test::toy_backbone();
  const BackboneConfig& c = bb->config();
  const RegionIntensityScorer scorer;
  const PooledIdentityEmbedder embedder;
  const auto segmenter = make_segmenter("grid:4x4");
  constexpr int kPoints = 20;
  double worst = 0.0;
  int checks = 0;
  for (Variant v : kVariants)
    for (EditorKind e : kEditors) {
      const LossWeights weights = LossWeights::preset(v, e);
      const LossSetup setup{kPrompt, weights, &scorer, &embedder, true};
      for (int p = 0; p < kPoints; ++p) {
        const std::uint64_t seed = 500 + static_cast<std::uint64_t>(p);
        EditModel layout = EditModel::init(c, v, e, c.layer_count, segmenter->class_count(), seed);
        Rng rng(seed);
        std::vector<Tensor> params;
        layout.visit([&](const std::string& name, Tensor& t) {
          const bool logits = name == "selector.logits" || name == "editor.directions";
          for (double& x : t.storage()) x += rng.normal() * (logits ? 1.0 : 0.2);
          params.push_back(t);
        });
        const WPlusCode w = bb->map_latent(LatentZ::from_seed(seed, c.latent_dim));
        const test::ScalarFn f = [&](const std::vector<ad::Var>& vars) {
          const EditGraph g = edit_graph(*bb, layout, vars, w, segmenter.get());
          return total_loss(loss_terms(g, layout, vars, setup), weights, v);
        };
        std::vector<std::size_t> selector, editor;
        for (std::size_t i = 0; i < params.size(); ++i)
          (i < layout.selector_tensor_count() ? selector : editor).push_back(i);
        for (const auto& group : {selector, editor}) {
          worst = std::max(worst, test::directional_gradient_error(f, params, group, 2, seed * 3));
          ++checks;
        }
      }
    }
  const double t = clock.seconds();
  report("gradient suite", worst <= 1e-4 && t < 300.0,
         fmt("%d points x 4 variant/editor pairs, %d group checks, max relative error %.3g "
             "(<= 1e-4), %.1f s (< 300 s)",
             kPoints, checks, worst, t));
}

void loss_arithmetic() {
  MaskStack single;
  single.masks.push_back(Tensor({32, 32}, 1.0));
  const double can = area_loss_can(single);
  const double ss = area_loss_ss(Tensor({5, 18}));
  MaskStack checker;
  checker.masks.push_back(Tensor({2, 2}, std::vector<double>{0, 1, 1, 0}));
  const double tv = tv_loss(checker);
  report("loss arithmetic", can == 32.0 && std::abs(ss - 45.0) <= 1e-6 && tv == 4.0,
         fmt("area_can %.17g (== 32), area_ss %.17g (45 +- 1e-6), tv %.17g (== 4)", can, ss, tv));
}

// ---------------------------------------------------------------------------

// Toy training settings per variant/editor pair, chosen on the seed-0 toy
// backbone. The identity term is off: the pooled stand-in embedder reads the
// raw colour of the quadrant the prompt asks to change.
struct ToyRun {
  Variant variant;
  EditorKind editor;
  std::size_t steps;
  double learning_rate;
  double lambda_area;
  double lambda_tv;
};

const ToyRun kToyRuns[] = {
    {Variant::ss, EditorKind::global, 1500, 0.01, 0.05, 0.0},
    {Variant::ss, EditorKind::mapper, 1500, 0.005, 0.03, 0.0},
    {Variant::can, EditorKind::global, 2000, 0.02, 0.03, 0.01},
    {Variant::can, EditorKind::mapper, 1500, 0.005, 0.03, 0.01},
};

TrainConfig toy_config(const ToyRun& r) {
  TrainConfig c = TrainConfig::defaults(kPrompt, r.variant, r.editor);
  c.max_iterations = r.steps;
  c.learning_rate = r.learning_rate;
  c.weights.lambda_id = 0.0;
  c.weights.lambda_area = r.lambda_area;
  c.weights.lambda_tv = r.lambda_tv;
  c.checkpoint_every = 0;
  c.eval_every = 0;
  return c;
}

struct Localization {
  double iou = 0.0;
  double outside = 0.0;       // mean abs change outside the support
  double outside_count = 0.0;  // mean number of pixel channels outside
};

// Union of the thresholded masks at image resolution against the upper-left
// quadrant; the support is the union of the quadrant's receptive fields over
// the layers whose mask is not all zero.
Localization localization(const Backbone& bb, const EditArtifact& a,
                          const std::vector<LatentZ>& z_batch, double tau) {
  const BackboneConfig& c = bb.config();
  const std::size_t n = c.image_resolution();
  Localization out;
  for (const auto& z : z_batch) {
    const EditResult r = apply_edit(bb, a, z, 1.0, tau);
    Tensor mask({n, n}), support({n, n});
    for (std::size_t l = 1; l <= c.layer_count; ++l) {
      const LayerMask& m = r.masks.layer(l);
      const std::size_t res = m.dim(0), f = n / res;
      bool any = false;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          if (m.at(y / f, x / f) > 0.0) {
            mask.at(y, x) = 1.0;
            any = true;
          }
      if (!any) continue;
      Tensor quadrant({res, res});
      for (std::size_t y = 0; y < res / 2; ++y)
        for (std::size_t x = 0; x < res / 2; ++x) quadrant.at(y, x) = 1.0;
      const Tensor s = receptive_support(c, l, quadrant);
      for (std::size_t i = 0; i < s.size(); ++i) support[i] = std::max(support[i], s[i]);
    }
    double inter = 0.0, uni = 0.0, change = 0.0, count = 0.0;
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const bool q = y < n / 2 && x < n / 2, m = mask.at(y, x) > 0.0;
        inter += q && m;
        uni += q || m;
        if (support.at(y, x) > 0.0) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          change += std::abs(r.edited.pixels.at(y, x, ch) - r.original.pixels.at(y, x, ch));
          count += 1.0;
        }
      }
    const double k = static_cast<double>(z_batch.size());
    out.iou += (uni > 0.0 ? inter / uni : 0.0) / k;
    out.outside += (count > 0.0 ? change / count : 0.0) / k;
    out.outside_count += count / k;
  }
  return out;
}

struct Trained {
  std::string id;
  fs::path dir;
  EditArtifact artifact;
};

std::vector<Trained> toy_training(const std::shared_ptr<ToyBackbone>& bb, const fs::path& root) {
  std::vector<LatentZ> eval;
  for (std::uint64_t s = 100; s < 108; ++s) eval.push_back(LatentZ::from_seed(s, 32));
  std::vector<Trained> trained;
  std::vector<std::string> lines;
  bool pass = true;
  for (const ToyRun& run : kToyRuns) {
    const Stopwatch clock;
    const Trainer trainer(bb, toy_config(run));
    const std::string id = combo(run.variant, run.editor);
    const fs::path dir = root / id;
    const TrainOutcome out = train(trainer, {dir, std::nullopt, std::nullopt});
    const double t = clock.seconds();
    const double before = trainer.evaluate(trainer.initial_state().model, eval).clip;
    const double after = trainer.evaluate(out.state.model, eval).clip;
    const Localization loc = localization(*bb, out.artifact, eval, 0.85);
    const bool ok = loc.iou >= 0.5 && after <= 0.5 * before && loc.outside <= 1e-3 &&
                    out.state.iteration <= 2000 && t <= 600.0;
    pass = pass && ok;
    lines.push_back(fmt("%s %s: %llu steps, IoU %.3f, clip %.4f -> %.4f (ratio %.3f), outside "
                        "change %.3g over %.0f values, %.0f s",
                        ok ? "ok" : "failed", id.c_str(),
                        static_cast<unsigned long long>(out.state.iteration), loc.iou, before, after,
                        after / before, loc.outside, loc.outside_count, t));
    trained.push_back({id, dir, out.artifact});
  }
  std::string detail = "IoU >= 0.5, clip ratio <= 0.5, outside mean abs change <= 1e-3, "
                       "<= 2000 steps, <= 600 s per run";
  for (const auto& l : lines) detail += "\n    " + l;
  report("toy end-to-end training", pass, detail);
  return trained;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  return out;
}

void determinism_and_persistence(const std::shared_ptr<ToyBackbone>& bb, const fs::path& root) {
  bool pass = true;
  std::string detail;
  for (const ToyRun& run : kToyRuns) {
    TrainConfig c = toy_config(run);
    c.max_iterations = 25;
    c.checkpoint_every = 10;
    const Trainer trainer(bb, c);
    const std::string id = combo(run.variant, run.editor);
    const fs::path a = root / (id + "-a"), b = root / (id + "-b");
    const TrainOutcome first = train(trainer, {a, std::nullopt, std::nullopt});
    train(trainer, {b, std::nullopt, std::nullopt});
    const auto fa = files_under(a), fb = files_under(b);
    const bool same_bytes = fa == fb;

    const EditArtifact loaded = load_artifact(a);
    bool same_apply = loaded == first.artifact;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const LatentZ z = LatentZ::from_seed(s, 32);
      const EditResult x = apply_edit(*bb, first.artifact, z, 1.0, 0.5);
      const EditResult y = apply_edit(*bb, loaded, z, 1.0, 0.5);
      same_apply = same_apply && x.edited == y.edited && x.masks == y.masks;
    }
    pass = pass && same_bytes && same_apply;
    detail += fmt("\n    %s: %zu files byte-identical across runs: %s; reloaded apply bit-identical: %s",
                  id.c_str(), fa.size(), same_bytes ? "yes" : "no", same_apply ? "yes" : "no");
  }
  report("determinism and persistence", pass, "two fixed-seed runs per pair" + detail);
}

void inference_contracts(const std::shared_ptr<ToyBackbone>& bb, const std::vector<Trained>& runs) {
  if (runs.empty()) return report("inference contracts", false, "no trained artifacts");
  const double taus[] = {0.0, 0.25, 0.5, 0.85, 1.0};
  bool exact = true, monotone = true;
  int cases = 0;
  for (const auto& r : runs)
    for (std::uint64_t s = 200; s < 210; ++s) {
      const LatentZ z = LatentZ::from_seed(s, 32);
      const EditResult zero = apply_edit(*bb, r.artifact, z, 0.0, r.artifact.default_tau);
      exact = exact && zero.edited == zero.original &&
              zero.original == bb->forward(bb->map_latent(z)).image;
      std::vector<double> prev;
      for (double tau : taus) {
        const auto f = apply_edit(*bb, r.artifact, z, 1.0, tau).area_fractions;
        for (std::size_t l = 0; l < prev.size(); ++l) monotone = monotone && f[l] <= prev[l];
        prev = f;
      }
      ++cases;
    }
  report("inference contracts", exact && monotone,
         fmt("%d artifact/latent cases: alpha=0 bit-exact %s, area fractions non-increasing over "
             "tau {0, 0.25, 0.5, 0.85, 1} %s",
             cases, exact ? "yes" : "no", monotone ? "yes" : "no"));
}

void service_conformance(const std::shared_ptr<ToyBackbone>& bb, const std::vector<Trained>& runs,
                         const fs::path& root) {
  if (runs.empty()) return report("service conformance", false, "no trained artifacts");
  const fs::path dir = root / "served";
  fs::create_directories(dir);
  for (const auto& r : runs) save_artifact(r.artifact, dir / r.id);
  save_artifact(runs.front().artifact, dir / "corrupt");
  io::write_file(dir / "corrupt" / "manifest.txt", "garbage");

  std::vector<std::string> failed;
  auto expect = [&failed](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  Service service;
  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client client("127.0.0.1", port);
  auto early = client.Get("/health");
  expect(early && early->status == 503, "503 before initialization");
  service.initialize(bb, dir);

  auto health = client.Get("/health");
  auto edits = client.Get("/edits");
  expect(health && health->status == 200, "GET /health 200");
  expect(edits && edits->status == 200, "GET /edits 200");
  if (health && edits) {
    const json h = json::parse(health->body), e = json::parse(edits->body);
    expect(h["artifact_count"] == e.size() && e.size() == runs.size(), "artifact count");
    expect(h["backbone_fingerprint"] == bb->fingerprint(), "fingerprint");
    for (const auto& item : e)
      for (const char* key : {"id", "prompt", "variant", "editor_kind", "edit_cutoff", "default_tau"})
        expect(item.contains(key), std::string("edit field ") + key);
  }

  auto post = [&](const json& body) { return client.Post("/apply", body.dump(), "application/json"); };
  for (const auto& r : runs) {
    const json body = {{"artifact_id", r.id}, {"seed", 42}, {"alpha", 1.0}, {"tau", 0.85}};
    auto a = post(body), b = post(body);
    expect(a && a->status == 200, "POST /apply 200 for " + r.id);
    expect(a && b && a->body == b->body, "deterministic response for " + r.id);
    if (a && a->status == 200) {
      const json out = json::parse(a->body);
      for (const char* key : {"edited_image", "original_image", "masks", "area_fractions", "metrics"})
        expect(out.contains(key), std::string("apply field ") + key);
      expect(out["masks"].size() == r.artifact.edit_cutoff(), "mask count for " + r.id);
    }
    auto zero = post({{"artifact_id", r.id}, {"seed", 42}, {"alpha", 0.0}, {"tau", 0.85}});
    if (zero && zero->status == 200) {
      const json out = json::parse(zero->body);
      expect(out["edited_image"] == out["original_image"], "alpha=0 image for " + r.id);
    } else {
      expect(false, "alpha=0 request for " + r.id);
    }
  }
  auto missing = post({{"artifact_id", "corrupt"}, {"seed", 1}, {"alpha", 1.0}, {"tau", 0.5}});
  expect(missing && missing->status == 404, "404 for unknown artifact");
  auto bad_json = client.Post("/apply", "{", "application/json");
  expect(bad_json && bad_json->status == 422, "422 for malformed JSON");
  auto bad_tau = post({{"artifact_id", runs.front().id}, {"seed", 1}, {"alpha", 1.0}, {"tau", 2.0}});
  expect(bad_tau && bad_tau->status == 422, "422 for tau out of range");
  auto bad_seed = post({{"artifact_id", runs.front().id}, {"seed", "x"}, {"alpha", 1.0}, {"tau", 0.5}});
  expect(bad_seed && bad_seed->status == 422, "422 for non-integer seed");
  auto bad_toggles = post({{"artifact_id", runs.front().id}, {"seed", 1}, {"alpha", 1.0},
                           {"tau", 0.5}, {"layer_toggles", {true}}});
  expect(bad_toggles && bad_toggles->status == 422, "422 for toggle count");
  server.stop();

  std::string detail = fmt("HTTP on port %d, %zu artifacts plus one corrupt", port, runs.size());
  for (const auto& f : failed) detail += "\n    failed: " + f;
  report("service conformance", failed.empty(), detail);
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const fs::path root = test::scratch_dir("acceptance");
  const auto bb = test::toy_backbone();

  auto guarded = [](const char* name, const auto& f) {
    try {
      f();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  };
  guarded("blending collapse identities", collapse_identities);
  guarded("feedforwarding vs FEAT contrast", feedforward_vs_feat);
  guarded("gradient suite", gradient_suite);
  guarded("loss arithmetic", loss_arithmetic);
  std::vector<Trained> runs;
  guarded("toy end-to-end training", [&] { runs = toy_training(bb, root / "toy"); });
  guarded("determinism and persistence", [&] { determinism_and_persistence(bb, root / "determinism"); });
  guarded("inference contracts", [&] { inference_contracts(bb, runs); });
  guarded("service conformance", [&] { service_conformance(bb, runs, root); });

  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
