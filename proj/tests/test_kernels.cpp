#include <doctest.h>

#include <omp.h>

#include "coral/kernels.hpp"
#include "support.hpp"

using namespace coral;
namespace k = coral::kernels;

namespace {

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Case {
  Tensor input, style, kernel, bias, grad_out;
};

Case make_case(std::size_t n, std::size_t ci, std::size_t co, std::uint64_t seed) {
  return {test::random_tensor({n, n, ci}, seed), test::random_tensor({ci}, seed + 1),
          test::random_tensor({co, ci, 3, 3}, seed + 2), test::random_tensor({co}, seed + 3),
          test::random_tensor({n, n, co}, seed + 4)};
}

// The parallel kernels fix a different summation order than the serial ones,
// so they agree to rounding rather than bit for bit.
bool close(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && max_abs_diff(a, b) < 1e-12;
}

}  // namespace

TEST_CASE("parallel kernels agree with the serial reference") {
  for (std::size_t n : {1, 4, 7, 16}) {
    const Case c = make_case(n, 5, 3, n);
    CHECK(close(k::modconv3x3(c.input, c.style, c.kernel, c.bias),
                k::reference::modconv3x3(c.input, c.style, c.kernel, c.bias)));
    const auto g = k::modconv3x3_backward(c.input, c.style, c.kernel, c.grad_out);
    const auto r = k::reference::modconv3x3_backward(c.input, c.style, c.kernel, c.grad_out);
    CHECK(close(g.input, r.input));
    CHECK(close(g.style, r.style));

    const Tensor w = test::random_tensor({3, 5}, n + 9), b = test::random_tensor({3}, n + 10);
    CHECK(close(k::conv1x1(c.input, w, b), k::reference::conv1x1(c.input, w, b)));
    const auto cg = k::conv1x1_backward(c.input, w, c.grad_out);
    const auto cr = k::reference::conv1x1_backward(c.input, w, c.grad_out);
    CHECK(close(cg.input, cr.input));
    CHECK(close(cg.weight, cr.weight));
    CHECK(close(cg.bias, cr.bias));

    CHECK(k::upsample_nearest(c.input, 2) == k::reference::upsample_nearest(c.input, 2));
    const Tensor up_grad = test::random_tensor({2 * n, 2 * n, 5}, n + 11);
    CHECK(k::upsample_nearest_backward(up_grad, 2) ==
          k::reference::upsample_nearest_backward(up_grad, 2));
  }
}

TEST_CASE("results do not depend on the thread count") {
  const Case c = make_case(16, 16, 16, 3);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Tensor one = k::modconv3x3(c.input, c.style, c.kernel, c.bias);
  omp_set_num_threads(4);
  const Tensor four = k::modconv3x3(c.input, c.style, c.kernel, c.bias);
  omp_set_num_threads(saved);
  CHECK(one == four);
}

TEST_CASE("modconv matches a direct sum") {
  const Case c = make_case(5, 2, 2, 20);
  const Tensor out = k::reference::modconv3x3(c.input, c.style, c.kernel, c.bias);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t o = 0; o < 2; ++o) {
        double s = c.bias[o];
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx)
            for (std::size_t i = 0; i < 2; ++i) {
              const long yy = long(y + ky) - 1, xx = long(x + kx) - 1;
              if (yy < 0 || xx < 0 || yy >= 5 || xx >= 5) continue;
              s += c.kernel[((o * 2 + i) * 3 + ky) * 3 + kx] * c.style[i] *
                   c.input.at(std::size_t(yy), std::size_t(xx), i);
            }
        CHECK(out.at(y, x, o) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("backward kernels are adjoints of the forward maps") {
  const Case c = make_case(6, 4, 3, 30);
  const Tensor zero_bias({3});
  const Tensor y = k::modconv3x3(c.input, c.style, c.kernel, zero_bias);
  const auto g = k::modconv3x3_backward(c.input, c.style, c.kernel, c.grad_out);
  // Linear in the input and in the style separately.
  CHECK(inner(y, c.grad_out) == doctest::Approx(inner(c.input, g.input)).epsilon(1e-10));
  CHECK(inner(y, c.grad_out) == doctest::Approx(inner(c.style, g.style)).epsilon(1e-10));

  const Tensor w = test::random_tensor({3, 4}, 31);
  const Tensor y1 = k::conv1x1(c.input, w, Tensor({3}));
  const auto cg = k::conv1x1_backward(c.input, w, c.grad_out);
  CHECK(inner(y1, c.grad_out) == doctest::Approx(inner(c.input, cg.input)).epsilon(1e-10));
  CHECK(inner(y1, c.grad_out) == doctest::Approx(inner(w, cg.weight)).epsilon(1e-10));

  const Tensor up = k::upsample_nearest(c.input, 3);
  const Tensor probe = test::random_tensor(up.shape(), 32);
  CHECK(inner(up, probe) ==
        doctest::Approx(inner(c.input, k::upsample_nearest_backward(probe, 3))).epsilon(1e-10));
}
