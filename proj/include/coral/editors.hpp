#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "coral/autodiff.hpp"
#include "coral/backbone.hpp"
#include "coral/edit_delta.hpp"

namespace coral {

inline constexpr double kMapperSlope = 0.2;

/// One learned direction per edited layer, shared by every image.
struct GlobalDirectionParams {
  Tensor directions;  // (edit_cutoff, d)

  static GlobalDirectionParams zeros(std::size_t edit_cutoff, std::size_t dim) {
    return {Tensor({edit_cutoff, dim})};
  }
  std::size_t edit_cutoff() const { return directions.dim(0); }

  void visit(const std::function<void(const std::string&, Tensor&)>& f) { f("directions", directions); }
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
    f("directions", directions);
  }
};

struct LinearParams {
  Tensor weight;  // (out, in)
  Tensor bias;    // (out)
};

/// lrelu(a(x)) - lrelu(b(x)).
struct BiEqualParams {
  LinearParams a;
  LinearParams b;
};

/// Four BiEqual layers then a plain linear output (no activation).
struct MapperGroupParams {
  std::string name;  // coarse | medium | fine
  std::size_t first_layer = 0;
  std::size_t last_layer = 0;  // inclusive, already clipped to the edit cutoff
  std::array<BiEqualParams, 4> biequal;
  LinearParams out;
};

/// Image-conditioned editor: layers 1-4 use the coarse network, 5-8 medium,
/// 9-edit_cutoff fine. Groups that fall past the cutoff are omitted.
struct MapperParams {
  std::size_t edit_cutoff = 0;
  std::vector<MapperGroupParams> groups;

  /// Hidden width d. Random BiEqual weights, zero output layer so the initial
  /// delta is exactly zero.
  static MapperParams init(const BackboneConfig& config, std::size_t edit_cutoff,
                           std::uint64_t seed);
  /// Index into `groups` serving `layer`, or -1 past the cutoff.
  int group_of(std::size_t layer) const;

  void visit(const std::function<void(const std::string&, Tensor&)>& f);
  void visit(const std::function<void(const std::string&, const Tensor&)>& f) const;
};

inline constexpr std::size_t kMapperTensorsPerGroup = 18;

/// Rows 1..edit_cutoff from the direction matrix, zeros after.
EditDelta global_delta(const GlobalDirectionParams& params, const BackboneConfig& config);
std::vector<ad::Var> global_delta_graph(const ad::Var& directions, const BackboneConfig& config);

/// delta^(l) = g_group(l)(w^(l)); zero rows past the cutoff.
EditDelta mapper_delta(const WPlusCode& w, const MapperParams& params, const BackboneConfig& config);
/// `params` holds the mapper tensors in visit order (18 per group).
std::vector<ad::Var> mapper_delta_graph(const std::vector<ad::Var>& w_rows,
                                        const std::vector<ad::Var>& params,
                                        const MapperParams& layout, const BackboneConfig& config);

/// alpha * delta. Negative alpha reverses the edit.
EditDelta scale_delta(const EditDelta& delta, double alpha);

}  // namespace coral
