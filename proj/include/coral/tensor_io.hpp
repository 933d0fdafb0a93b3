#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coral/tensor.hpp"

// On-disk building blocks shared by backbone checkpoints, edit artifacts and
// training checkpoints.
//
// Tensor blob layout (all integers little-endian):
//   8-byte magic   "CORALF32" (float32 payload) or "CORALF64" (float64 payload)
//   uint64 rank
//   uint64 dims[rank]
//   payload        row-major values
//
// Manifests are UTF-8 `key=value` lines; blank lines and lines starting with
// '#' are ignored. Key order is preserved so written manifests are byte-stable.

namespace coral::io {

enum class Precision { f32, f64 };

std::string encode_blob(const Tensor& t, Precision precision = Precision::f32);
/// Throws FormatError on bad magic, ChecksumError when the payload is truncated.
Tensor decode_blob(std::string_view bytes, const std::string& what);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);
std::string hex32(std::uint32_t v);
/// FNV-1a 64-bit, used for backbone fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

class Manifest {
 public:
  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::size_t value) {
    set(key, static_cast<std::int64_t>(value));
  }

  bool contains(const std::string& key) const;
  /// Throws FormatError when the key is missing.
  const std::string& get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string serialize() const;
  static Manifest parse(std::string_view text);
  static Manifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Round-trip-exact decimal rendering of a double.
std::string format_double(double v);
std::string join_sizes(const std::vector<std::size_t>& values);

}  // namespace coral::io
