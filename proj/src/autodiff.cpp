#include "coral/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "coral/error.hpp"
#include "coral/kernels.hpp"

namespace coral::ad {
namespace {

using Propagate = std::function<void(Node&)>;

Var make(Tensor value, std::initializer_list<const Var*> inputs, Propagate fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var* v) { return v->requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    for (const Var* v : inputs) n->parents.push_back(v->node());
    n->propagate = std::move(fn);
  }
  return Var(std::move(n));
}

void accumulate(Node& target, Tensor g) {
  if (!target.requires_grad) return;
  if (target.grad.empty()) {
    target.grad = std::move(g);
    return;
  }
  double* dst = target.grad.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

Tensor scalar(double v) { return Tensor({1}, v); }

template <class F, class D>
Var pointwise(const Var& a, F f, D df) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make(std::move(out), {&a}, [df](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = self.grad[i] * df(p.value[i], self.value[i]);
    accumulate(p, std::move(g));
  });
}

}  // namespace

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor(node_->value.shape());
}

double Var::item() const {
  if (node_->value.size() != 1)
    throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad = Tensor(root.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->propagate && !n->grad.empty()) n->propagate(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {&a, &b}, [](Node& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {&a, &b}, [](Node& self) {
    accumulate(parent(self, 0), self.grad);
    Tensor g = self.grad;
    for (double& v : g.storage()) v = -v;
    accumulate(parent(self, 1), std::move(g));
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pb.value[i];
      accumulate(pa, std::move(g));
    }
    if (pb.requires_grad) {
      Tensor g = self.grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= pa.value[i];
      accumulate(pb, std::move(g));
    }
  });
}

Var scale(const Var& a, double k) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= k;
  return make(std::move(out), {&a}, [k](Node& self) {
    Tensor g = self.grad;
    for (double& v : g.storage()) v *= k;
    accumulate(parent(self, 0), std::move(g));
  });
}

Var add_scalar(const Var& a, double k) {
  Tensor out = a.value();
  for (double& v : out.storage()) v += k;
  return make(std::move(out), {&a},
              [](Node& self) { accumulate(parent(self, 0), self.grad); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().storage()) s += v;
  return make(scalar(s), {&a}, [](Node& self) {
    Node& p = parent(self, 0);
    accumulate(p, Tensor(p.value.shape(), self.grad[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var square_sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().storage()) s += v * v;
  return make(scalar(s), {&a}, [](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * p.value[i] * self.grad[0];
    accumulate(p, std::move(g));
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.value().size() != b.value().size()) throw ShapeError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return make(scalar(s), {&a, &b}, [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const double go = self.grad[0];
    if (pa.requires_grad) {
      Tensor g(pa.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = go * pb.value[i];
      accumulate(pa, std::move(g));
    }
    if (pb.requires_grad) {
      Tensor g(pb.value.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = go * pa.value[i];
      accumulate(pb, std::move(g));
    }
  });
}

Var weighted_sum(const Var& a, const Tensor& weights) {
  if (a.value().size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += a.value()[i] * weights[i];
  return make(scalar(s), {&a}, [weights](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[0] * weights[i];
    accumulate(p, std::move(g));
  });
}

Var sigmoid(const Var& a) {
  return pointwise(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& a) {
  return pointwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return pointwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
  return pointwise(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var linear(const Var& weight, const Var& x, const Var& bias) {
  const Tensor& w = weight.value();
  if (w.rank() != 2 || w.dim(1) != x.value().size() || w.dim(0) != bias.value().size())
    throw ShapeError("linear: weight " + shape_string(w.shape()) + " input " +
                     shape_string(x.shape()) + " bias " + shape_string(bias.shape()));
  const std::size_t out_dim = w.dim(0), in_dim = w.dim(1);
  Tensor out({out_dim});
  for (std::size_t o = 0; o < out_dim; ++o) {
    double s = bias.value()[o];
    for (std::size_t i = 0; i < in_dim; ++i) s += w.at(o, i) * x.value()[i];
    out[o] = s;
  }
  return make(std::move(out), {&weight, &x, &bias}, [out_dim, in_dim](Node& self) {
    Node& pw = parent(self, 0);
    Node& px = parent(self, 1);
    Node& pb = parent(self, 2);
    if (pw.requires_grad) {
      Tensor g(pw.value.shape());
      for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t i = 0; i < in_dim; ++i) g.at(o, i) = self.grad[o] * px.value[i];
      accumulate(pw, std::move(g));
    }
    if (px.requires_grad) {
      Tensor g(px.value.shape());
      for (std::size_t o = 0; o < out_dim; ++o)
        for (std::size_t i = 0; i < in_dim; ++i) g[i] += self.grad[o] * pw.value.at(o, i);
      accumulate(px, std::move(g));
    }
    accumulate(pb, self.grad);
  });
}

Var modconv3x3(const Var& input, const Var& style, const Tensor& kernel,
               const Tensor& bias) {
  Tensor out = kernels::modconv3x3(input.value(), style.value(), kernel, bias);
  return make(std::move(out), {&input, &style}, [kernel](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    auto g = kernels::modconv3x3_backward(px.value, ps.value, kernel, self.grad);
    accumulate(px, std::move(g.input));
    accumulate(ps, std::move(g.style));
  });
}

Var conv1x1(const Var& input, const Var& weight, const Var& bias) {
  Tensor out = kernels::conv1x1(input.value(), weight.value(), bias.value());
  return make(std::move(out), {&input, &weight, &bias}, [](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    Node& pb = parent(self, 2);
    auto g = kernels::conv1x1_backward(px.value, pw.value, self.grad);
    accumulate(px, std::move(g.input));
    accumulate(pw, std::move(g.weight));
    accumulate(pb, std::move(g.bias));
  });
}

Var upsample_nearest(const Var& input, std::size_t factor) {
  if (factor == 1) return input;
  Tensor out = kernels::upsample_nearest(input.value(), factor);
  return make(std::move(out), {&input}, [factor](Node& self) {
    accumulate(parent(self, 0), kernels::upsample_nearest_backward(self.grad, factor));
  });
}

Var avg_pool(const Var& input, std::size_t factor) {
  const Tensor& x = input.value();
  if (x.rank() != 3 || factor == 0 || x.dim(0) % factor || x.dim(1) % factor)
    throw ShapeError("avg_pool: " + shape_string(x.shape()) + " by " + std::to_string(factor));
  const std::size_t h = x.dim(0) / factor, w = x.dim(1) / factor, c = x.dim(2);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < x.dim(0); ++y)
    for (std::size_t xx = 0; xx < x.dim(1); ++xx)
      for (std::size_t k = 0; k < c; ++k) out.at(y / factor, xx / factor, k) += x.at(y, xx, k) * inv;
  return make(std::move(out), {&input}, [factor, inv](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    for (std::size_t y = 0; y < g.dim(0); ++y)
      for (std::size_t xx = 0; xx < g.dim(1); ++xx)
        for (std::size_t k = 0; k < g.dim(2); ++k)
          g.at(y, xx, k) = self.grad.at(y / factor, xx / factor, k) * inv;
    accumulate(p, std::move(g));
  });
}

Var blend(const Var& mask, const Var& edited, const Var& original) {
  require_same(edited, original, "blend");
  const Tensor& m = mask.value();
  const Tensor& e = edited.value();
  if (m.rank() != 2 || e.rank() != 3 || m.dim(0) != e.dim(0) || m.dim(1) != e.dim(1))
    throw ShapeError("blend: mask " + shape_string(m.shape()) + " features " +
                     shape_string(e.shape()));
  const std::size_t pixels = m.size(), c = e.dim(2);
  Tensor out(e.shape());
  // o + m (e - o) is exact wherever m = 0 or e = o.
  const Tensor& o = original.value();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double mv = m[p];
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      out[i] = o[i] + mv * (e[i] - o[i]);
    }
  }
  return make(std::move(out), {&mask, &edited, &original}, [pixels, c](Node& self) {
    Node& pm = parent(self, 0);
    Node& pe = parent(self, 1);
    Node& po = parent(self, 2);
    if (pm.requires_grad) {
      Tensor g(pm.value.shape());
      for (std::size_t p = 0; p < pixels; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k)
          s += self.grad[p * c + k] * (pe.value[p * c + k] - po.value[p * c + k]);
        g[p] = s;
      }
      accumulate(pm, std::move(g));
    }
    if (pe.requires_grad) {
      Tensor g(pe.value.shape());
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t k = 0; k < c; ++k) g[p * c + k] = self.grad[p * c + k] * pm.value[p];
      accumulate(pe, std::move(g));
    }
    if (po.requires_grad) {
      Tensor g(po.value.shape());
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t k = 0; k < c; ++k)
          g[p * c + k] = self.grad[p * c + k] * (1.0 - pm.value[p]);
      accumulate(po, std::move(g));
    }
  });
}

Var total_variation(const Var& mask) {
  const Tensor& m = mask.value();
  if (m.rank() != 2) throw ShapeError("total_variation: expected 2-D map");
  const std::size_t h = m.dim(0), w = m.dim(1);
  double s = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (y + 1 < h) { const double d = m.at(y, x) - m.at(y + 1, x); s += d * d; }
      if (x + 1 < w) { const double d = m.at(y, x) - m.at(y, x + 1); s += d * d; }
    }
  return make(scalar(s), {&mask}, [h, w](Node& self) {
    Node& p = parent(self, 0);
    const double go = self.grad[0];
    Tensor g(p.value.shape());
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (y + 1 < h) {
          const double d = 2.0 * go * (p.value.at(y, x) - p.value.at(y + 1, x));
          g.at(y, x) += d;
          g.at(y + 1, x) -= d;
        }
        if (x + 1 < w) {
          const double d = 2.0 * go * (p.value.at(y, x) - p.value.at(y, x + 1));
          g.at(y, x) += d;
          g.at(y, x + 1) -= d;
        }
      }
    accumulate(p, std::move(g));
  });
}

Var reshape(const Var& a, Shape shape) {
  if (element_count(shape) != a.value().size())
    throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  Tensor out(std::move(shape), a.value().storage());
  return make(std::move(out), {&a}, [](Node& self) {
    Node& p = parent(self, 0);
    accumulate(p, Tensor(p.value.shape(), self.grad.storage()));
  });
}

Var column(const Var& matrix, std::size_t col) {
  const Tensor& m = matrix.value();
  if (m.rank() != 2 || col >= m.dim(1)) throw ShapeError("column: index out of range");
  const std::size_t rows = m.dim(0);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) out[r] = m.at(r, col);
  return make(std::move(out), {&matrix}, [rows, col](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    for (std::size_t r = 0; r < rows; ++r) g.at(r, col) = self.grad[r];
    accumulate(p, std::move(g));
  });
}

Var combine(const Tensor& basis, const Var& weights) {
  const std::size_t n = weights.value().size();
  if (basis.rank() < 1 || basis.dim(0) != n) throw ShapeError("combine: basis/weight mismatch");
  Shape out_shape(basis.shape().begin() + 1, basis.shape().end());
  const std::size_t stride = element_count(out_shape);
  Tensor out(out_shape);
  for (std::size_t p = 0; p < n; ++p) {
    const double wv = weights.value()[p];
    const double* b = basis.data() + p * stride;
    for (std::size_t i = 0; i < stride; ++i) out[i] += wv * b[i];
  }
  return make(std::move(out), {&weights}, [basis, n, stride](Node& self) {
    Tensor g({n});
    for (std::size_t p = 0; p < n; ++p) {
      const double* b = basis.data() + p * stride;
      double s = 0.0;
      for (std::size_t i = 0; i < stride; ++i) s += self.grad[i] * b[i];
      g[p] = s;
    }
    accumulate(parent(self, 0), std::move(g));
  });
}

Var stack(const std::vector<Var>& rows) {
  if (rows.empty()) throw ShapeError("stack: no rows");
  const std::size_t d = rows.front().value().size();
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].value().size() != d) throw ShapeError("stack: ragged rows");
    std::copy_n(rows[r].value().data(), d, out.data() + r * d);
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  if (std::any_of(rows.begin(), rows.end(), [](const Var& v) { return v.requires_grad(); })) {
    n->requires_grad = true;
    for (const Var& v : rows) n->parents.push_back(v.node());
    n->propagate = [d](Node& self) {
      for (std::size_t r = 0; r < self.parents.size(); ++r) {
        Node& p = *self.parents[r];
        if (!p.requires_grad) continue;
        Tensor g(p.value.shape());
        std::copy_n(self.grad.data() + r * d, d, g.data());
        accumulate(p, std::move(g));
      }
    };
  }
  return Var(std::move(n));
}

Var row(const Var& matrix, std::size_t r) {
  const Tensor& m = matrix.value();
  if (m.rank() != 2 || r >= m.dim(0)) throw ShapeError("row: index out of range");
  const std::size_t d = m.dim(1);
  Tensor out({d});
  std::copy_n(m.data() + r * d, d, out.data());
  return make(std::move(out), {&matrix}, [r, d](Node& self) {
    Node& p = parent(self, 0);
    Tensor g(p.value.shape());
    std::copy_n(self.grad.data(), d, g.data() + r * d);
    accumulate(p, std::move(g));
  });
}

Var center(const Var& a) {
  const std::size_t n = a.value().size();
  double mu = 0.0;
  for (double v : a.value().storage()) mu += v;
  mu /= static_cast<double>(n);
  Tensor out = a.value();
  for (double& v : out.storage()) v -= mu;
  return make(std::move(out), {&a}, [n](Node& self) {
    double gm = 0.0;
    for (double v : self.grad.storage()) gm += v;
    gm /= static_cast<double>(n);
    Tensor g = self.grad;
    for (double& v : g.storage()) v -= gm;
    accumulate(parent(self, 0), std::move(g));
  });
}

Var normalize(const Var& a) {
  double ss = 0.0;
  for (double v : a.value().storage()) ss += v * v;
  const double norm = std::sqrt(ss);
  if (norm == 0.0) throw ShapeError("normalize: zero-norm vector");
  Tensor out = a.value();
  for (double& v : out.storage()) v /= norm;
  return make(std::move(out), {&a}, [norm](Node& self) {
    // d(x/|x|) = (g - y <y, g>) / |x|
    double yg = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) yg += self.value[i] * self.grad[i];
    Tensor g(self.value.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = (self.grad[i] - self.value[i] * yg) / norm;
    accumulate(parent(self, 0), std::move(g));
  });
}

}  // namespace coral::ad
