#include "coral/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <json.hpp>

#include "coral/error.hpp"

namespace coral {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

HttpReply not_ready() { return {503, json{{"status", "initializing"}}.dump()}; }

}  // namespace

std::string base64_encode(std::string_view bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = static_cast<std::uint8_t>(bytes[i]) << 16 |
                            static_cast<std::uint8_t>(bytes[i + 1]) << 8 |
                            static_cast<std::uint8_t>(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(n >> s) & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = static_cast<std::uint8_t>(bytes[i]) << 16;
    if (rest == 2) n |= static_cast<std::uint8_t>(bytes[i + 1]) << 8;
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

void Service::initialize(std::shared_ptr<const Backbone> backbone, const fs::path& artifact_dir) {
  if (!backbone) throw Error("service needs a backbone");
  backbone_ = std::move(backbone);
  artifacts_.clear();
  if (fs::is_directory(artifact_dir)) {
    for (const auto& entry : fs::directory_iterator(artifact_dir)) {
      if (!entry.is_directory()) continue;
      const std::string id = entry.path().filename().string();
      try {
        EditArtifact a = load_artifact(entry.path());
        if (a.backbone_fingerprint != backbone_->fingerprint()) {
          spdlog::warn("skipping artifact '{}': trained on backbone {}, serving {}", id,
                       a.backbone_fingerprint, backbone_->fingerprint());
          continue;
        }
        artifacts_.emplace(id, std::move(a));
      } catch (const std::exception& e) {
        spdlog::warn("skipping artifact '{}': {}", id, e.what());
      }
    }
  } else {
    spdlog::warn("artifact directory {} does not exist; serving no edits", artifact_dir.string());
  }
  ready_.store(true);
}

HttpReply Service::get_edits() const {
  if (!ready()) return not_ready();
  json list = json::array();
  for (const auto& [id, a] : artifacts_)
    list.push_back({{"id", id},
                    {"prompt", a.prompt},
                    {"variant", to_string(a.variant())},
                    {"editor_kind", to_string(a.editor())},
                    {"edit_cutoff", a.edit_cutoff()},
                    {"default_tau", a.default_tau}});
  return {200, list.dump()};
}

HttpReply Service::get_health() const {
  if (!ready()) return not_ready();
  return {200, json{{"status", "ok"},
                    {"backbone_fingerprint", backbone_->fingerprint()},
                    {"artifact_count", artifacts_.size()}}
                   .dump()};
}

HttpReply Service::post_apply(const std::string& body) const {
  if (!ready()) return not_ready();
  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return error_reply(422, "body is not a JSON object");
  if (!req.contains("artifact_id") || !req["artifact_id"].is_string())
    return error_reply(422, "artifact_id must be a string");
  if (!req.contains("seed") || !req["seed"].is_number_unsigned())
    return error_reply(422, "seed must be a non-negative integer");
  for (const char* key : {"alpha", "tau"})
    if (!req.contains(key) || !req[key].is_number())
      return error_reply(422, std::string(key) + " must be a number");
  std::optional<std::vector<bool>> toggles;
  if (req.contains("layer_toggles") && !req["layer_toggles"].is_null()) {
    const json& t = req["layer_toggles"];
    if (!t.is_array() || !std::all_of(t.begin(), t.end(), [](const json& v) { return v.is_boolean(); }))
      return error_reply(422, "layer_toggles must be a list of booleans");
    toggles = t.get<std::vector<bool>>();
  }

  const auto it = artifacts_.find(req["artifact_id"].get<std::string>());
  if (it == artifacts_.end())
    return error_reply(404, "unknown artifact '" + req["artifact_id"].get<std::string>() + "'");
  const EditArtifact& artifact = it->second;
  const double alpha = req["alpha"].get<double>();
  const double tau = req["tau"].get<double>();
  if (!(tau >= 0.0 && tau <= 1.0)) return error_reply(422, "tau must lie in [0, 1]");
  if (!std::isfinite(alpha)) return error_reply(422, "alpha must be finite");
  const std::size_t cutoff = artifact.edit_cutoff();
  if (toggles && toggles->size() != cutoff && toggles->size() != backbone_->config().layer_count)
    return error_reply(422, "layer_toggles must have " + std::to_string(cutoff) + " entries");

  try {
    std::lock_guard lock(worker_);
    const LatentZ z = LatentZ::from_seed(req["seed"].get<std::uint64_t>(),
                                         backbone_->config().latent_dim);
    const EditResult r = apply_edit(*backbone_, artifact, z, alpha, tau, toggles);
    const EditMetrics m = edit_metrics(r, *make_embedder(artifact.embedder));
    json masks = json::array();
    for (std::size_t l = 1; l <= cutoff; ++l) masks.push_back(base64_encode(encode_png(r.masks.layer(l))));
    const std::vector<double> fractions(r.area_fractions.begin(), r.area_fractions.begin() + cutoff);
    json out = {{"edited_image", base64_encode(encode_png(r.edited))},
                {"original_image", base64_encode(encode_png(r.original))},
                {"masks", masks},
                {"area_fractions", fractions},
                {"metrics",
                 {{"pixel_mse", m.pixel_mse},
                  {"id_similarity", m.id_similarity},
                  {"area_fractions", fractions}}}};
    return {200, out.dump()};
  } catch (const std::exception& e) {
    spdlog::error("apply failed for artifact '{}': {}", it->first, e.what());
    return error_reply(500, e.what());
  }
}

HttpServer::HttpServer(Service& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->Get("/edits", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.get_edits());
  });
  server_->Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.get_health());
  });
  server_->Post("/apply", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.post_apply(req.body));
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  if (!server_->bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

int port_from_env() {
  const char* v = std::getenv("CORAL_PORT");
  if (!v || !*v) return kDefaultPort;
  try {
    std::size_t used = 0;
    const int port = std::stoi(v, &used);
    if (used == std::string_view(v).size() && port > 0 && port < 65536) return port;
  } catch (const std::exception&) {
  }
  throw RangeError(std::string("CORAL_PORT '") + v + "' is not a valid port");
}

fs::path artifact_dir_from_env() {
  const char* v = std::getenv("CORAL_ARTIFACT_DIR");
  return v && *v ? fs::path(v) : fs::path("artifacts");
}

}  // namespace coral
