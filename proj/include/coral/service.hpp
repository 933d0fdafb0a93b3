#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "coral/backbone.hpp"
#include "coral/inference.hpp"

namespace httplib {
class Server;
}

namespace coral {

inline constexpr int kDefaultPort = 8787;

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

/// Request handling behind the HTTP routes. Handlers never mutate state after
/// initialize(); inference calls run one at a time.
class Service {
 public:
  /// Loads every readable artifact directory under `artifact_dir` whose
  /// fingerprint matches `backbone`; others are skipped with a warning.
  /// Until this returns, every route answers 503.
  void initialize(std::shared_ptr<const Backbone> backbone,
                  const std::filesystem::path& artifact_dir);
  bool ready() const { return ready_.load(); }

  HttpReply get_edits() const;
  HttpReply post_apply(const std::string& body) const;
  HttpReply get_health() const;

 private:
  std::shared_ptr<const Backbone> backbone_;
  std::map<std::string, EditArtifact> artifacts_;  // id = directory name
  std::atomic<bool> ready_{false};
  mutable std::mutex worker_;
};

/// cpp-httplib front end for a Service.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  /// Returns the bound port (an ephemeral one when `port` is 0).
  int bind(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void listen();
  /// Serves on a background thread.
  void start();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

/// Port from CORAL_PORT, else the default. Throws RangeError for junk values.
int port_from_env();
/// Artifact directory from CORAL_ARTIFACT_DIR, else "artifacts".
std::filesystem::path artifact_dir_from_env();

std::string base64_encode(std::string_view bytes);

}  // namespace coral
