#include "coral/tensor_io.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "coral/error.hpp"

namespace coral::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "blob encoding assumes a little-endian host");

constexpr std::string_view kMagic32 = "CORALF32";
constexpr std::string_view kMagic64 = "CORALF64";

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(std::string_view bytes, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > bytes.size()) throw ChecksumError(what + ": truncated blob");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string encode_blob(const Tensor& t, Precision precision) {
  std::string out;
  out.reserve(8 + 8 * (1 + t.rank()) + t.size() * 8);
  out.append(precision == Precision::f32 ? kMagic32 : kMagic64);
  put<std::uint64_t>(out, t.rank());
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  for (double v : t.storage()) {
    if (precision == Precision::f32)
      put<float>(out, static_cast<float>(v));
    else
      put<double>(out, v);
  }
  return out;
}

Tensor decode_blob(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 8) throw FormatError(what + ": missing blob header");
  const std::string_view magic = bytes.substr(0, 8);
  bool wide;
  if (magic == kMagic32)
    wide = false;
  else if (magic == kMagic64)
    wide = true;
  else
    throw FormatError(what + ": bad blob magic");
  std::size_t pos = 8;
  const auto rank = take<std::uint64_t>(bytes, pos, what);
  if (rank > 8) throw FormatError(what + ": implausible rank " + std::to_string(rank));
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(take<std::uint64_t>(bytes, pos, what));
  const std::size_t n = element_count(shape);
  const std::size_t width = wide ? 8 : 4;
  if (bytes.size() - pos != n * width)
    throw ChecksumError(what + ": payload holds " + std::to_string(bytes.size() - pos) +
                        " bytes, shape " + shape_string(shape) + " needs " +
                        std::to_string(n * width));
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < n; ++i)
    t[i] = wide ? take<double>(bytes, pos, what) : take<float>(bytes, pos, what);
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

void Manifest::set(const std::string& key, std::string value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
    throw FormatError("invalid manifest key '" + key + "'");
  if (value.find('\n') != std::string::npos)
    throw FormatError("manifest value for '" + key + "' contains a newline");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = std::move(value);
      return;
    }
  entries_.emplace_back(key, std::move(value));
}

void Manifest::set(const std::string& key, double value) { set(key, format_double(value)); }

void Manifest::set(const std::string& key, std::int64_t value) {
  set(key, std::to_string(value));
}

bool Manifest::contains(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> Manifest::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw FormatError("manifest is missing key '" + key + "'");
}

double Manifest::get_double(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError("manifest key '" + key + "' is not a number: " + s);
  return v;
}

std::int64_t Manifest::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError("manifest key '" + key + "' is not an integer: " + s);
  return v;
}

std::vector<std::size_t> Manifest::get_sizes(const std::string& key) const {
  const std::string& s = get(key);
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find(',', start), s.size());
    std::size_t v = 0;
    auto res = std::from_chars(s.data() + start, s.data() + end, v);
    if (res.ec != std::errc{} || res.ptr != s.data() + end)
      throw FormatError("manifest key '" + key + "' is not a size list: " + s);
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

std::string Manifest::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

Manifest Manifest::parse(std::string_view text) {
  Manifest m;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    const std::string line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw FormatError("manifest line " + std::to_string(line_no) + " is not key=value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (m.contains(key)) throw FormatError("manifest key '" + key + "' repeated");
    m.set(key, trim(std::string_view(line).substr(eq + 1)));
  }
  return m;
}

Manifest Manifest::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FormatError("missing manifest " + path.string());
  return parse(read_file(path));
}

void Manifest::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

}  // namespace coral::io
