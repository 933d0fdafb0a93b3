#include "coral/editors.hpp"

#include <algorithm>
#include <cmath>

#include "coral/error.hpp"
#include "coral/rng.hpp"

namespace coral {
namespace {

struct GroupSpan {
  const char* name;
  std::size_t first;
  std::size_t last;  // 0 = up to the cutoff
};

constexpr std::array<GroupSpan, 3> kGroups{{{"coarse", 1, 4}, {"medium", 5, 8}, {"fine", 9, 0}}};

template <class Params, class F>
void visit_mapper(Params& p, const F& f) {
  for (auto& g : p.groups) {
    for (std::size_t i = 0; i < g.biequal.size(); ++i) {
      const std::string prefix = g.name + ".biequal" + std::to_string(i) + ".";
      f(prefix + "a.weight", g.biequal[i].a.weight);
      f(prefix + "a.bias", g.biequal[i].a.bias);
      f(prefix + "b.weight", g.biequal[i].b.weight);
      f(prefix + "b.bias", g.biequal[i].b.bias);
    }
    f(g.name + ".out.weight", g.out.weight);
    f(g.name + ".out.bias", g.out.bias);
  }
}

EditDelta to_delta(const std::vector<ad::Var>& rows) {
  return EditDelta{ad::stack(rows).value()};
}

ad::Var zero_row(std::size_t d) { return ad::Var::constant(Tensor({d})); }

}  // namespace

MapperParams MapperParams::init(const BackboneConfig& config, std::size_t edit_cutoff,
                                std::uint64_t seed) {
  if (edit_cutoff < 1 || edit_cutoff > config.layer_count)
    throw RangeError("edit cutoff " + std::to_string(edit_cutoff) + " outside 1.." +
                     std::to_string(config.layer_count));
  const std::size_t d = config.latent_dim;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);
  MapperParams p;
  p.edit_cutoff = edit_cutoff;
  for (const auto& span : kGroups) {
    if (span.first > edit_cutoff) break;
    MapperGroupParams g;
    g.name = span.name;
    g.first_layer = span.first;
    g.last_layer = span.last == 0 ? edit_cutoff : std::min(span.last, edit_cutoff);
    for (auto& be : g.biequal) {
      be.a = {rng.normal_tensor({d, d}, stddev), Tensor({d})};
      be.b = {rng.normal_tensor({d, d}, stddev), Tensor({d})};
    }
    g.out = {Tensor({d, d}), Tensor({d})};
    p.groups.push_back(std::move(g));
  }
  return p;
}

int MapperParams::group_of(std::size_t layer) const {
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (layer >= groups[i].first_layer && layer <= groups[i].last_layer) return static_cast<int>(i);
  return -1;
}

void MapperParams::visit(const std::function<void(const std::string&, Tensor&)>& f) {
  visit_mapper(*this, f);
}

void MapperParams::visit(const std::function<void(const std::string&, const Tensor&)>& f) const {
  visit_mapper(*this, f);
}

std::vector<ad::Var> global_delta_graph(const ad::Var& directions, const BackboneConfig& config) {
  const Tensor& dir = directions.value();
  if (dir.rank() != 2 || dir.dim(1) != config.latent_dim || dir.dim(0) < 1 ||
      dir.dim(0) > config.layer_count)
    throw ShapeError("global direction has shape " + shape_string(dir.shape()));
  std::vector<ad::Var> rows;
  for (std::size_t l = 1; l <= config.layer_count; ++l)
    rows.push_back(l <= dir.dim(0) ? ad::row(directions, l - 1) : zero_row(config.latent_dim));
  return rows;
}

EditDelta global_delta(const GlobalDirectionParams& params, const BackboneConfig& config) {
  return to_delta(global_delta_graph(ad::Var::constant(params.directions), config));
}

std::vector<ad::Var> mapper_delta_graph(const std::vector<ad::Var>& w_rows,
                                        const std::vector<ad::Var>& params,
                                        const MapperParams& layout, const BackboneConfig& config) {
  const std::size_t d = config.latent_dim;
  if (w_rows.size() != config.layer_count)
    throw ShapeError("mapper: expected one code row per layer");
  if (params.size() != layout.groups.size() * kMapperTensorsPerGroup)
    throw ShapeError("mapper: parameter count does not match layout");
  std::vector<ad::Var> rows;
  for (std::size_t l = 1; l <= config.layer_count; ++l) {
    const int g = layout.group_of(l);
    if (g < 0) {
      rows.push_back(zero_row(d));
      continue;
    }
    if (w_rows[l - 1].value().size() != d)
      throw DimensionError("mapper: code row " + std::to_string(l) + " has wrong dimension");
    const ad::Var* p = &params[static_cast<std::size_t>(g) * kMapperTensorsPerGroup];
    ad::Var h = w_rows[l - 1];
    for (std::size_t i = 0; i < 4; ++i, p += 4) {
      const ad::Var left = ad::leaky_relu(ad::linear(p[0], h, p[1]), kMapperSlope);
      const ad::Var right = ad::leaky_relu(ad::linear(p[2], h, p[3]), kMapperSlope);
      h = ad::sub(left, right);
    }
    rows.push_back(ad::linear(p[0], h, p[1]));
  }
  return rows;
}

EditDelta mapper_delta(const WPlusCode& w, const MapperParams& params,
                       const BackboneConfig& config) {
  if (w.rows.rank() != 2 || w.layers() != config.layer_count)
    throw ShapeError("mapper: code has shape " + shape_string(w.rows.shape()));
  if (w.dim() != config.latent_dim)
    throw DimensionError("mapper: code dimension " + std::to_string(w.dim()) + ", expected " +
                         std::to_string(config.latent_dim));
  std::vector<ad::Var> pv;
  params.visit([&pv](const std::string&, const Tensor& t) { pv.push_back(ad::Var::constant(t)); });
  return to_delta(mapper_delta_graph(code_rows(w), pv, params, config));
}

EditDelta scale_delta(const EditDelta& delta, double alpha) {
  EditDelta out = delta;
  for (double& v : out.rows.storage()) v *= alpha;
  return out;
}

}  // namespace coral
