#include "coral/inference.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

#include "coral/error.hpp"
#include "coral/tensor_io.hpp"

namespace coral {
namespace {

namespace fs = std::filesystem;

std::string blob_name(const std::string& tensor) { return tensor + ".bin"; }

bool float_exact(const Tensor& t) {
  return std::all_of(t.storage().begin(), t.storage().end(),
                     [](double v) { return static_cast<double>(static_cast<float>(v)) == v; });
}

BackboneConfig geometry_from(const io::Manifest& m) {
  BackboneConfig c;
  c.layer_count = static_cast<std::size_t>(m.get_int("layers"));
  c.latent_dim = static_cast<std::size_t>(m.get_int("latent_dim"));
  c.channels = m.get_sizes("channels");
  if (c.channels.size() != c.layer_count) throw FormatError("artifact channels list has wrong length");
  c.resolutions.assign(c.layer_count, 1);
  return c;
}

std::uint8_t to_byte(double v) {
  const double c = std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

std::string encode_png_bytes(std::size_t height, std::size_t width, int color_type,
                             const std::vector<std::uint8_t>& pixels) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png: cannot create info struct");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<char*>(data), n);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = pixels.size() / height;
  for (std::size_t y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

void save_artifact(const EditArtifact& a, const fs::path& dir) {
  if (a.prompt.find('\n') != std::string::npos) throw FormatError("prompt contains a newline");
  fs::create_directories(dir);
  io::Manifest m;
  m.set("format", std::string("coral-edit"));
  m.set("format_version", std::int64_t{kArtifactFormatVersion});
  m.set("prompt", a.prompt);
  m.set("variant", to_string(a.variant()));
  m.set("editor", to_string(a.editor()));
  m.set("edit_cutoff", a.edit_cutoff());
  m.set("default_tau", a.default_tau);
  m.set("lambda_l2", a.weights.lambda_l2);
  m.set("lambda_id", a.weights.lambda_id);
  m.set("lambda_area", a.weights.lambda_area);
  m.set("lambda_tv", a.weights.lambda_tv);
  m.set("backbone_fingerprint", a.backbone_fingerprint);
  m.set("learning_rate", a.learning_rate);
  m.set("seed", std::to_string(a.seed));
  m.set("iterations", std::to_string(a.iterations));
  m.set("segmenter", a.segmenter);
  m.set("scorer", a.scorer);
  m.set("embedder", a.embedder);
  m.set("dual_clip", std::string(a.dual_clip ? "true" : "false"));
  if (a.variant() == Variant::ss) m.set("selector_classes", a.model.selection.classes());
  m.set("layers", a.geometry_layers);
  m.set("latent_dim", a.geometry_latent_dim);
  m.set("channels", io::join_sizes(a.geometry_channels));

  std::vector<std::pair<std::string, std::string>> blobs;
  a.model.visit([&](const std::string& name, const Tensor& t) {
    if (!float_exact(t))
      throw RangeError("artifact tensor " + name + " is not float32-representable");
    blobs.emplace_back(blob_name(name), io::encode_blob(t, io::Precision::f32));
  });
  for (const auto& [file, bytes] : blobs) {
    io::write_file(dir / file, bytes);
    m.set("checksum." + file, io::hex32(io::crc32(bytes)));
  }
  m.save(dir / "manifest.txt");
}

EditArtifact load_artifact(const fs::path& dir) {
  const io::Manifest m = io::Manifest::load(dir / "manifest.txt");
  if (m.get("format") != "coral-edit") throw FormatError(dir.string() + " is not an edit artifact");
  if (m.get_int("format_version") != kArtifactFormatVersion)
    throw VersionError("artifact format version " + m.get("format_version") + ", expected " +
                       std::to_string(kArtifactFormatVersion));
  EditArtifact a;
  a.prompt = m.get("prompt");
  a.default_tau = m.get_double("default_tau");
  a.weights = {m.get_double("lambda_l2"), m.get_double("lambda_id"), m.get_double("lambda_area"),
               m.get_double("lambda_tv")};
  a.backbone_fingerprint = m.get("backbone_fingerprint");
  a.learning_rate = m.get_double("learning_rate");
  a.seed = std::stoull(m.get("seed"));
  a.iterations = std::stoull(m.get("iterations"));
  a.segmenter = m.get("segmenter");
  a.scorer = m.get("scorer");
  a.embedder = m.get("embedder");
  a.dual_clip = m.get("dual_clip") == "true";

  const BackboneConfig geometry = geometry_from(m);
  a.geometry_layers = geometry.layer_count;
  a.geometry_latent_dim = geometry.latent_dim;
  a.geometry_channels = geometry.channels;
  const Variant variant = parse_variant(m.get("variant"));
  const std::size_t classes =
      variant == Variant::ss ? static_cast<std::size_t>(m.get_int("selector_classes")) : 0;
  a.model = EditModel::init(geometry, variant, parse_editor_kind(m.get("editor")),
                            static_cast<std::size_t>(m.get_int("edit_cutoff")), classes, 0);
  a.model.visit([&](const std::string& name, Tensor& t) {
    const std::string file = blob_name(name);
    if (!fs::exists(dir / file)) throw FormatError("artifact blob " + file + " is missing");
    const std::string bytes = io::read_file(dir / file);
    if (io::hex32(io::crc32(bytes)) != m.get("checksum." + file))
      throw ChecksumError("artifact blob " + file + " fails its checksum");
    Tensor loaded = io::decode_blob(bytes, file);
    if (loaded.shape() != t.shape())
      throw FormatError("artifact blob " + file + " has shape " + shape_string(loaded.shape()) +
                        ", expected " + shape_string(t.shape()));
    t = std::move(loaded);
  });
  return a;
}

std::vector<double> area_fractions(const MaskStack& masks) {
  std::vector<double> out;
  for (const auto& m : masks.masks) {
    double s = 0.0;
    for (double v : m.storage()) s += v;
    out.push_back(m.empty() ? 0.0 : s / static_cast<double>(m.size()));
  }
  return out;
}

EditResult apply_edit(const Backbone& backbone, const EditArtifact& artifact, const LatentZ& z,
                      double alpha, double tau,
                      const std::optional<std::vector<bool>>& layer_toggles) {
  if (artifact.backbone_fingerprint != backbone.fingerprint())
    throw FingerprintError("artifact was trained on backbone " + artifact.backbone_fingerprint +
                           ", loaded backbone is " + backbone.fingerprint());
  if (!(tau >= 0.0 && tau <= 1.0))
    throw RangeError("threshold tau must lie in [0, 1], got " + std::to_string(tau));
  if (!std::isfinite(alpha)) throw RangeError("edit strength alpha must be finite");
  const auto& config = backbone.config();
  if (layer_toggles && layer_toggles->size() != artifact.edit_cutoff() &&
      layer_toggles->size() != config.layer_count)
    throw ShapeError("layer_toggles has " + std::to_string(layer_toggles->size()) +
                     " entries, expected " + std::to_string(artifact.edit_cutoff()) + " or " +
                     std::to_string(config.layer_count));

  const WPlusCode w = backbone.map_latent(z);
  ForwardResult original = backbone.forward(w);
  EditResult r;
  r.delta = scale_delta(artifact.model.delta(w, config), alpha);
  const auto segmenter =
      artifact.segmenter.empty() ? nullptr : make_segmenter(artifact.segmenter);
  r.masks = apply_threshold(artifact.model.masks(original, segmenter.get(), config), tau);
  if (layer_toggles)
    for (std::size_t l = 1; l <= layer_toggles->size(); ++l)
      if (!(*layer_toggles)[l - 1]) r.masks.layer(l).fill(0.0);
  r.edited = blended_forward(backbone, w, apply_delta(w, r.delta), r.masks).image;
  r.original = std::move(original.image);
  r.area_fractions = area_fractions(r.masks);
  return r;
}

EditMetrics edit_metrics(const EditResult& result, const IdentityEmbedder& embedder) {
  const Tensor& a = result.edited.pixels;
  const Tensor& b = result.original.pixels;
  if (a.shape() != b.shape()) throw ShapeError("edit_metrics: image shapes differ");
  EditMetrics m;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  m.pixel_mse = s / static_cast<double>(a.size());
  m.id_similarity = 1.0 - id_loss(result.edited, result.original, embedder);
  m.area_fractions = result.area_fractions;
  return m;
}

std::string encode_png(const ImageRGB& image) {
  std::vector<std::uint8_t> px;
  px.reserve(image.pixels.size());
  for (double v : image.pixels.storage()) px.push_back(to_byte(v));
  return encode_png_bytes(image.height(), image.width(), PNG_COLOR_TYPE_RGB, px);
}

std::string encode_png(const LayerMask& mask) {
  if (mask.rank() != 2) throw ShapeError("mask PNG needs a 2-D map");
  std::vector<std::uint8_t> px;
  px.reserve(mask.size());
  for (double v : mask.storage()) px.push_back(to_byte(v));
  return encode_png_bytes(mask.dim(0), mask.dim(1), PNG_COLOR_TYPE_GRAY, px);
}

void write_png(const fs::path& path, const ImageRGB& image) {
  io::write_file(path, encode_png(image));
}

void write_png(const fs::path& path, const LayerMask& mask) {
  io::write_file(path, encode_png(mask));
}

}  // namespace coral
