#include "coral/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "coral/error.hpp"
#include "coral/rng.hpp"
#include "coral/tensor_io.hpp"

namespace coral {
namespace {

constexpr double kMappingSlope = 0.2;

std::string layer_key(std::size_t layer, const char* suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

io::Manifest geometry_manifest(const BackboneConfig& c) {
  io::Manifest m;
  m.set("format", std::string("coral-backbone"));
  m.set("format_version", std::int64_t{kBackboneFormatVersion});
  m.set("kind", std::string("toy"));
  m.set("layers", c.layer_count);
  m.set("latent_dim", c.latent_dim);
  m.set("resolutions", io::join_sizes(c.resolutions));
  m.set("channels", io::join_sizes(c.channels));
  m.set("rgb_layers", io::join_sizes(c.rgb_layers));
  m.set("base_resolution", c.base_resolution);
  m.set("base_channels", c.base_channels);
  return m;
}

ad::Var constant_ref(const Tensor& t) { return ad::Var::constant(t); }

}  // namespace

LatentZ LatentZ::from_seed(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  return LatentZ{rng.normal_tensor({dim})};
}

BackboneConfig BackboneConfig::toy() {
  BackboneConfig c;
  c.layer_count = 6;
  c.latent_dim = 32;
  c.resolutions = {4, 4, 8, 8, 16, 32};
  c.channels = std::vector<std::size_t>(6, 16);
  c.rgb_layers = {2, 4, 6};
  c.base_resolution = 4;
  c.base_channels = 16;
  return c;
}

BackboneConfig BackboneConfig::progressive(std::size_t top_resolution, std::size_t latent_dim,
                                           std::size_t channel_divisor) {
  if (top_resolution < 4 || (top_resolution & (top_resolution - 1)) != 0)
    throw RangeError("progressive: top resolution must be a power of two >= 4");
  if (channel_divisor == 0) throw RangeError("progressive: channel divisor must be positive");
  BackboneConfig c;
  c.latent_dim = latent_dim;
  for (std::size_t r = 4; r <= top_resolution; r *= 2) {
    const std::size_t ch = std::max<std::size_t>(1, std::min<std::size_t>(512, 32768 / r) / channel_divisor);
    for (int k = 0; k < 2; ++k) {
      c.resolutions.push_back(r);
      c.channels.push_back(ch);
    }
  }
  c.layer_count = c.resolutions.size();
  for (std::size_t l = 2; l <= c.layer_count; l += 2) c.rgb_layers.push_back(l);
  c.base_resolution = 4;
  c.base_channels = c.channels.front();
  return c;
}

bool BackboneConfig::has_rgb(std::size_t layer) const {
  return std::find(rgb_layers.begin(), rgb_layers.end(), layer) != rgb_layers.end();
}

void BackboneConfig::validate() const {
  if (layer_count == 0 || latent_dim == 0) throw ShapeError("config: empty generator");
  if (resolutions.size() != layer_count || channels.size() != layer_count)
    throw ShapeError("config: per-layer lists must have one entry per layer");
  if (rgb_layers.empty()) throw ShapeError("config: no RGB heads");
  for (std::size_t l : rgb_layers)
    if (l < 1 || l > layer_count)
      throw ShapeError("config: RGB layer " + std::to_string(l) + " outside 1.." +
                       std::to_string(layer_count));
  std::size_t prev = base_resolution;
  for (std::size_t l = 0; l < layer_count; ++l) {
    if (resolutions[l] < prev || resolutions[l] % prev != 0)
      throw ShapeError("config: resolutions must grow by integer factors");
    if (channels[l] == 0) throw ShapeError("config: zero channels");
    prev = resolutions[l];
  }
  for (std::size_t l : rgb_layers)
    if (image_resolution() % resolutions[l - 1] != 0)
      throw ShapeError("config: RGB head resolution does not divide output size");
  if (base_channels == 0) throw ShapeError("config: base tensor needs channels");
}

std::vector<ad::Var> code_rows(const WPlusCode& w) {
  std::vector<ad::Var> rows;
  rows.reserve(w.layers());
  for (std::size_t l = 0; l < w.layers(); ++l) {
    Tensor r({w.dim()});
    std::copy(w.rows.row(l).begin(), w.rows.row(l).end(), r.data());
    rows.push_back(ad::Var::constant(std::move(r)));
  }
  return rows;
}

void Backbone::check_code(const WPlusCode& w) const {
  const auto& c = config();
  if (w.rows.rank() != 2 || w.layers() != c.layer_count)
    throw ShapeError("W+ code has shape " + shape_string(w.rows.shape()) + ", expected " +
                     std::to_string(c.layer_count) + " rows");
  if (w.dim() != c.latent_dim)
    throw DimensionError("W+ rows have dimension " + std::to_string(w.dim()) + ", expected " +
                         std::to_string(c.latent_dim));
}

ForwardGraph Backbone::forward_graph(const std::vector<ad::Var>& code_rows) const {
  const auto& c = config();
  if (code_rows.size() != c.layer_count)
    throw ShapeError("forward: expected " + std::to_string(c.layer_count) + " code rows");
  ForwardGraph out;
  ad::Var f = base();
  for (std::size_t l = 1; l <= c.layer_count; ++l) {
    f = block(l, f, code_rows[l - 1]);
    out.features.push_back(f);
    if (c.has_rgb(l)) {
      ad::Var contrib = to_rgb(l, f);
      out.image = out.image.defined() ? ad::add(out.image, contrib) : contrib;
    }
  }
  return out;
}

ForwardResult Backbone::forward(const WPlusCode& w) const {
  check_code(w);
  ForwardGraph g = forward_graph(code_rows(w));
  ForwardResult r;
  r.image.pixels = g.image.value();
  r.features.reserve(g.features.size());
  for (const auto& f : g.features) r.features.push_back(f.value());
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, Shape>> ToyBackbone::parameter_layout(const BackboneConfig& c) {
  const std::size_t d = c.latent_dim;
  std::vector<std::pair<std::string, Shape>> layout{
      {"mapping.w1", {d, d}},
      {"mapping.b1", {d}},
      {"mapping.w2", {d, d}},
      {"mapping.b2", {d}},
      {"mapping.offsets", {c.layer_count, d}},
      {"const", {c.base_resolution, c.base_resolution, c.base_channels}},
  };
  std::size_t c_in = c.base_channels;
  for (std::size_t l = 1; l <= c.layer_count; ++l) {
    const std::size_t c_out = c.channel_count(l);
    layout.push_back({layer_key(l, "affine.weight"), {c_in, d}});
    layout.push_back({layer_key(l, "affine.bias"), {c_in}});
    layout.push_back({layer_key(l, "conv.weight"), {c_out, c_in, 3, 3}});
    layout.push_back({layer_key(l, "conv.bias"), {c_out}});
    if (c.has_rgb(l)) {
      layout.push_back({layer_key(l, "rgb.weight"), {3, c_out}});
      layout.push_back({layer_key(l, "rgb.bias"), {3}});
    }
    c_in = c_out;
  }
  return layout;
}

std::shared_ptr<ToyBackbone> ToyBackbone::create(const BackboneConfig& config,
                                                 std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Parameters params;
  for (const auto& [name, shape] : parameter_layout(config)) {
    Tensor t(shape);
    const bool is_bias = name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2");
    if (name.ends_with("affine.bias")) {
      t.fill(1.0);
    } else if (is_bias) {
      // zero
    } else if (name == "const") {
      t = rng.normal_tensor(shape);
    } else if (name == "mapping.offsets") {
      t = rng.normal_tensor(shape, 0.5);
    } else {
      // fan_in is the product of all dims after the first
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      t = rng.normal_tensor(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    }
    round_to_float(t);
    params.emplace(name, std::move(t));
  }
  return std::make_shared<ToyBackbone>(config, std::move(params));
}

ToyBackbone::ToyBackbone(BackboneConfig config, Parameters params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  std::string digest_input = geometry_manifest(config_).serialize();
  for (const auto& [name, shape] : parameter_layout(config_)) {
    auto it = params_.find(name);
    if (it == params_.end()) throw FormatError("toy backbone: missing parameter " + name);
    if (it->second.shape() != shape)
      throw FormatError("toy backbone: parameter " + name + " has shape " +
                        shape_string(it->second.shape()) + ", expected " + shape_string(shape));
    digest_input += name;
    digest_input += io::encode_blob(it->second);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(io::fnv1a64(digest_input)));
  fingerprint_ = buf;
}

const Tensor& ToyBackbone::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw FormatError("toy backbone: no parameter " + name);
  return it->second;
}

WPlusCode ToyBackbone::map_latent(const LatentZ& z) const {
  const std::size_t d = config_.latent_dim;
  if (z.values.rank() != 1 || z.dim() != d)
    throw DimensionError("latent has dimension " + std::to_string(z.values.size()) +
                         ", expected " + std::to_string(d));
  const Tensor& w1 = parameter("mapping.w1");
  const Tensor& b1 = parameter("mapping.b1");
  const Tensor& w2 = parameter("mapping.w2");
  const Tensor& b2 = parameter("mapping.b2");
  const Tensor& offsets = parameter("mapping.offsets");

  std::vector<double> h(d), u(d);
  for (std::size_t o = 0; o < d; ++o) {
    double s = b1[o];
    for (std::size_t i = 0; i < d; ++i) s += w1.at(o, i) * z.values[i];
    h[o] = s > 0.0 ? s : kMappingSlope * s;
  }
  for (std::size_t o = 0; o < d; ++o) {
    double s = b2[o];
    for (std::size_t i = 0; i < d; ++i) s += w2.at(o, i) * h[i];
    u[o] = s;
  }
  WPlusCode w{Tensor({config_.layer_count, d})};
  for (std::size_t l = 0; l < config_.layer_count; ++l)
    for (std::size_t k = 0; k < d; ++k) w.rows.at(l, k) = u[k] + offsets.at(l, k);
  return w;
}

ad::Var ToyBackbone::base() const { return constant_ref(parameter("const")); }

ad::Var ToyBackbone::block(std::size_t layer, const ad::Var& input, const ad::Var& code) const {
  if (layer < 1 || layer > config_.layer_count)
    throw RangeError("block: layer " + std::to_string(layer) + " out of range");
  const std::size_t prev_res = layer == 1 ? config_.base_resolution : config_.resolution(layer - 1);
  const std::size_t prev_ch = layer == 1 ? config_.base_channels : config_.channel_count(layer - 1);
  if (input.shape() != Shape{prev_res, prev_res, prev_ch})
    throw ShapeError("block " + std::to_string(layer) + ": input " + shape_string(input.shape()) +
                     " does not match previous layer output");
  if (code.value().size() != config_.latent_dim)
    throw DimensionError("block " + std::to_string(layer) + ": code dimension mismatch");

  const ad::Var style = ad::linear(constant_ref(parameter(layer_key(layer, "affine.weight"))), code,
                                   constant_ref(parameter(layer_key(layer, "affine.bias"))));
  const ad::Var up = ad::upsample_nearest(input, config_.resolution(layer) / prev_res);
  return ad::tanh(ad::modconv3x3(up, style, parameter(layer_key(layer, "conv.weight")),
                                 parameter(layer_key(layer, "conv.bias"))));
}

ad::Var ToyBackbone::to_rgb(std::size_t layer, const ad::Var& features) const {
  if (!config_.has_rgb(layer))
    throw RangeError("to_rgb: layer " + std::to_string(layer) + " has no RGB head");
  const ad::Var rgb = ad::conv1x1(features, constant_ref(parameter(layer_key(layer, "rgb.weight"))),
                                  constant_ref(parameter(layer_key(layer, "rgb.bias"))));
  return ad::upsample_nearest(rgb, config_.image_resolution() / config_.resolution(layer));
}

// ---------------------------------------------------------------------------

void save_checkpoint(const ToyBackbone& backbone, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = backbone.config();
  for (const auto& [name, shape] : ToyBackbone::parameter_layout(c))
    io::write_file(dir / (name + ".bin"), io::encode_blob(backbone.parameter(name)));
  geometry_manifest(c).save(dir / "manifest.txt");
}

std::shared_ptr<Backbone> load_pretrained(const std::filesystem::path& dir,
                                          std::optional<std::size_t> expected_layers) {
  if (!std::filesystem::is_directory(dir))
    throw FormatError("checkpoint directory not found: " + dir.string());
  const io::Manifest m = io::Manifest::load(dir / "manifest.txt");
  if (m.get("format") != "coral-backbone") throw FormatError("not a backbone checkpoint");
  if (m.get_int("format_version") != kBackboneFormatVersion)
    throw VersionError("backbone format version " + m.get("format_version") +
                       " is not supported");
  if (m.get("kind") != "toy")
    throw FormatError("backbone kind '" + m.get("kind") + "' has no in-process adapter");

  BackboneConfig c;
  c.layer_count = static_cast<std::size_t>(m.get_int("layers"));
  c.latent_dim = static_cast<std::size_t>(m.get_int("latent_dim"));
  c.resolutions = m.get_sizes("resolutions");
  c.channels = m.get_sizes("channels");
  c.rgb_layers = m.get_sizes("rgb_layers");
  c.base_resolution = static_cast<std::size_t>(m.get_int("base_resolution"));
  c.base_channels = static_cast<std::size_t>(m.get_int("base_channels"));
  if (expected_layers && *expected_layers != c.layer_count)
    throw VersionError("checkpoint has " + std::to_string(c.layer_count) +
                       " layers, expected " + std::to_string(*expected_layers));
  try {
    c.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint geometry invalid: ") + e.what());
  }

  ToyBackbone::Parameters params;
  for (const auto& [name, shape] : ToyBackbone::parameter_layout(c)) {
    const auto path = dir / (name + ".bin");
    if (!std::filesystem::exists(path)) throw FormatError("checkpoint is missing " + name);
    Tensor t = io::decode_blob(io::read_file(path), name);
    if (t.shape() != shape)
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_string(t.shape()));
    params.emplace(name, std::move(t));
  }
  return std::make_shared<ToyBackbone>(std::move(c), std::move(params));
}

}  // namespace coral
