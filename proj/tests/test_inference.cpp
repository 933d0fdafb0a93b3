#include <doctest.h>

#include <cmath>

#include "coral/error.hpp"
#include "coral/inference.hpp"
#include "coral/tensor_io.hpp"
#include "coral/trainer.hpp"
#include "artifacts.hpp"
#include "support.hpp"

using namespace coral;
namespace fs = std::filesystem;

TEST_CASE("zero strength reproduces the original exactly") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)})
    for (std::uint64_t seed : {0u, 7u, 123u}) {
      const LatentZ z = LatentZ::from_seed(seed, 32);
      const EditResult r = apply_edit(*bb, a, z, 0.0, 0.3);
      CHECK(r.edited == r.original);
      CHECK(r.original == bb->forward(bb->map_latent(z)).image);
    }
}

TEST_CASE("threshold one leaves the image untouched") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)}) {
    const EditResult r = apply_edit(*bb, a, LatentZ::from_seed(3, 32), 1.0, 1.0);
    CHECK(r.edited == r.original);
    for (double f : r.area_fractions) CHECK(f == 0.0);
  }
}

TEST_CASE("edits are visible and match the blending oracle") {
  const auto bb = test::toy_backbone();
  const EditArtifact a = test::ss_artifact(bb);
  const LatentZ z = LatentZ::from_seed(4, 32);
  const EditResult r = apply_edit(*bb, a, z, 1.0, 0.5);
  CHECK(max_abs_diff(r.edited.pixels, r.original.pixels) > 1e-3);
  // Layer 2 runs at 4x4, so grid cell 0 is exactly pixel (0, 0).
  CHECK(r.area_fractions[1] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0)) / 16.0).epsilon(1e-12));
  CHECK(r.area_fractions[0] == 0.0);
  const WPlusCode w = bb->map_latent(z);
  const WPlusCode w2 = apply_delta(w, r.delta);
  CHECK(max_abs_diff(r.edited.pixels, test::oracle::forward(*bb, w, &w2, &r.masks.masks)) < 1e-10);
}

TEST_CASE("single layer toggles") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)}) {
    const LatentZ z = LatentZ::from_seed(11, 32);
    const EditResult all = apply_edit(*bb, a, z, 1.0, 0.5);
    const WPlusCode w = bb->map_latent(z);
    const WPlusCode w2 = apply_delta(w, all.delta);
    for (std::size_t l = 1; l <= a.edit_cutoff(); ++l) {
      std::vector<bool> on(a.edit_cutoff(), false);
      on[l - 1] = true;
      const EditResult one = apply_edit(*bb, a, z, 1.0, 0.5, on);
      for (std::size_t k = 1; k <= bb->config().layer_count; ++k) {
        if (k == l) CHECK(one.masks.layer(k) == all.masks.layer(k));
        else CHECK(one.area_fractions[k - 1] == 0.0);
      }
      const Tensor expect = test::oracle::forward(*bb, w, &w2, &one.masks.masks);
      CHECK(max_abs_diff(one.edited.pixels, expect) < 1e-10);
    }
    const EditResult none = apply_edit(*bb, a, z, 1.0, 0.5, std::vector<bool>(6, false));
    CHECK(none.edited == none.original);
  }
}

TEST_CASE("higher thresholds never grow the masks") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)}) {
    const LatentZ z = LatentZ::from_seed(21, 32);
    std::vector<double> prev(6, 2.0);
    for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
      const EditResult r = apply_edit(*bb, a, z, 1.0, tau);
      for (std::size_t l = 0; l < 6; ++l) {
        CHECK(r.area_fractions[l] <= prev[l]);
        prev[l] = r.area_fractions[l];
      }
    }
  }
}

TEST_CASE("negative strength negates the delta") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)}) {
    const LatentZ z = LatentZ::from_seed(5, 32);
    const EditResult pos = apply_edit(*bb, a, z, 0.7, 0.5);
    const EditResult neg = apply_edit(*bb, a, z, -0.7, 0.5);
    CHECK(pos.masks == neg.masks);
    for (std::size_t l = 0; l < pos.delta.rows.size(); ++l)
      CHECK(pos.delta.rows[l] + neg.delta.rows[l] == 0.0);
  }
}

TEST_CASE("argument errors") {
  const auto bb = test::toy_backbone();
  const EditArtifact a = test::ss_artifact(bb);
  const LatentZ z = LatentZ::from_seed(0, 32);
  CHECK_THROWS_AS(apply_edit(*bb, a, z, 1.0, 1.2), RangeError);
  CHECK_THROWS_AS(apply_edit(*bb, a, z, 1.0, -0.1), RangeError);
  CHECK_THROWS_AS(apply_edit(*bb, a, z, std::nan(""), 0.5), RangeError);
  CHECK_THROWS_AS(apply_edit(*bb, a, z, 1.0, 0.5, std::vector<bool>(3, true)), ShapeError);
  CHECK_THROWS_AS(apply_edit(*test::toy_backbone(1), a, z, 1.0, 0.5), FingerprintError);
}

TEST_CASE("artifact persistence") {
  const auto bb = test::toy_backbone();
  for (const EditArtifact& a : {test::ss_artifact(bb), test::can_artifact(bb)}) {
    const auto dir = test::scratch_dir("artifact");
    save_artifact(a, dir);
    const EditArtifact back = load_artifact(dir);
    CHECK(back == a);
    const LatentZ z = LatentZ::from_seed(8, 32);
    CHECK(apply_edit(*bb, back, z, 1.0, 0.5).edited == apply_edit(*bb, a, z, 1.0, 0.5).edited);
  }

  const EditArtifact a = test::ss_artifact(bb);
  const auto dir = test::scratch_dir("artifact_bad");
  save_artifact(a, dir);
  const fs::path blob = dir / "editor.directions.bin";
  const std::string bytes = io::read_file(blob);
  io::write_file(blob, bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_AS(load_artifact(dir), ChecksumError);
  fs::remove(blob);
  CHECK_THROWS_AS(load_artifact(dir), FormatError);
  CHECK_THROWS_AS(load_artifact(dir / "missing"), FormatError);

  EditArtifact rough = a;
  rough.model.direction.directions[0] = 0.1;
  CHECK_THROWS_AS(save_artifact(rough, test::scratch_dir("artifact_rough")), RangeError);
}

TEST_CASE("metrics") {
  const BackboneConfig c = BackboneConfig::toy();
  EditResult r;
  r.original.pixels = Tensor({32, 32, 3});
  r.original.pixels.fill(0.5);
  r.edited.pixels = r.original.pixels;
  for (double& v : r.edited.pixels.storage()) v += 0.1;
  r.masks = MaskStack::zeros(c);
  r.masks.layer(2).at(0, 0) = 1.0;
  r.masks.layer(2).at(1, 0) = 0.5;
  r.area_fractions = area_fractions(r.masks);
  CHECK(r.area_fractions[1] == 1.5 / 16.0);
  CHECK(r.area_fractions[0] == 0.0);
  const PooledIdentityEmbedder embedder;
  const EditMetrics m = edit_metrics(r, embedder);
  CHECK(m.pixel_mse == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(m.id_similarity == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.area_fractions == r.area_fractions);
}

TEST_CASE("png encoding") {
  ImageRGB img{Tensor({5, 7, 3})};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = double(i % 11) / 10.0;
  const std::string png = encode_png(img);
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  auto be32 = [&](std::size_t at) {
    return std::uint32_t(std::uint8_t(png[at])) << 24 | std::uint32_t(std::uint8_t(png[at + 1])) << 16 |
           std::uint32_t(std::uint8_t(png[at + 2])) << 8 | std::uint32_t(std::uint8_t(png[at + 3]));
  };
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(be32(16) == 7);
  CHECK(be32(20) == 5);
  CHECK(png[24] == 8);
  CHECK(png[25] == 2);
  CHECK(be32(29) == io::crc32(png.substr(12, 17)));

  ImageRGB wild = img, clamped = img;
  wild.pixels[0] = -3.0;
  clamped.pixels[0] = 0.0;
  wild.pixels[1] = 9.0;
  clamped.pixels[1] = 1.0;
  CHECK(encode_png(wild) == encode_png(clamped));

  LayerMask mask({4, 4});
  const std::string gray = encode_png(mask);
  CHECK(gray[25] == 0);
  CHECK_THROWS_AS(encode_png(LayerMask({4, 4, 1})), ShapeError);
}
