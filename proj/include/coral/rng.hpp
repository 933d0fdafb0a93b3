#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "coral/tensor.hpp"

namespace coral {

/// Seeded generator with a portable normal sampler.
///
/// Uniforms take the top 53 bits of a mt19937_64 draw; normals use the
/// cosine branch of Box-Muller (two uniforms per sample, no caching), so the
/// sequence depends only on the seed and never on the standard library's
/// distribution implementations. Latent vectors crossing the service boundary
/// are derived with this generator.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();  // [0, 1)
  double normal();
  Tensor normal_tensor(Shape shape, double stddev = 1.0);

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace coral
