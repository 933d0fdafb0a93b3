#pragma once

#include "coral/backbone.hpp"

namespace coral {

/// Per-layer latent edit, shape (L, d). Rows past the edit cutoff are zero.
struct EditDelta {
  Tensor rows;

  std::size_t layers() const { return rows.dim(0); }
  std::size_t dim() const { return rows.dim(1); }

  static EditDelta zeros(std::size_t layers, std::size_t dim) {
    return EditDelta{Tensor({layers, dim})};
  }

  friend bool operator==(const EditDelta&, const EditDelta&) = default;
};

/// w + delta, row by row. Throws ShapeError on mismatch.
WPlusCode apply_delta(const WPlusCode& w, const EditDelta& delta);

}  // namespace coral
