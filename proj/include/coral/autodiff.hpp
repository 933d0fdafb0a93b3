#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "coral/tensor.hpp"

// Minimal tape-free reverse-mode differentiation over Tensor values.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that pushes the output gradient into its parents.
// `backward(root)` walks the graph in reverse topological order. Graphs are
// built per call and are not shared between threads.

namespace coral::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> propagate;
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  /// Gradient accumulated by the last backward pass; zeros if none reached here.
  Tensor grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->value.shape(); }
  /// Scalar value of a single-element Var.
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates. Root must hold one element.
void backward(const Var& root);

// Elementwise arithmetic (shapes must match exactly).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var add_scalar(const Var& a, double k);

// Reductions to a scalar of shape (1).
Var sum(const Var& a);
Var mean(const Var& a);
Var square_sum(const Var& a);
Var dot(const Var& a, const Var& b);
/// Sum of a * weights for a constant weight tensor of the same size.
Var weighted_sum(const Var& a, const Tensor& weights);

// Pointwise nonlinearities.
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);

/// weight (out, in) * x (in) + bias (out).
Var linear(const Var& weight, const Var& x, const Var& bias);

/// Style-modulated 3x3 convolution with frozen kernel and bias.
Var modconv3x3(const Var& input, const Var& style, const Tensor& kernel,
               const Tensor& bias);
Var conv1x1(const Var& input, const Var& weight, const Var& bias);
Var upsample_nearest(const Var& input, std::size_t factor);
/// Averages non-overlapping factor x factor blocks of an (H, W, C) map.
Var avg_pool(const Var& input, std::size_t factor);

/// mask (H, W) broadcast over channels: mask * edited + (1 - mask) * original.
Var blend(const Var& mask, const Var& edited, const Var& original);

/// Sum of squared differences between horizontal and vertical neighbours of a
/// 2-D map; pairs never wrap past the border.
Var total_variation(const Var& mask);

Var reshape(const Var& a, Shape shape);
/// Column `col` of a (rows, cols) matrix as a (rows) vector.
Var column(const Var& matrix, std::size_t col);
/// Sum over p of weights[p] * basis[p, ...]; basis has leading dim = weights.size().
Var combine(const Tensor& basis, const Var& weights);
/// Stacks equally shaped vectors into a (n, d) matrix.
Var stack(const std::vector<Var>& rows);
/// Row r of a (n, d) matrix.
Var row(const Var& matrix, std::size_t r);

Var center(const Var& a);
/// a / ||a||_2.
Var normalize(const Var& a);

}  // namespace coral::ad
