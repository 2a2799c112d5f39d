// Tensor and autodiff engine checks: op semantics, broadcasting, convolution
// against a direct reference, and finite-difference gradients.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iscl/autograd.hpp"
#include "support/gradcheck.hpp"

using namespace iscl;
using iscl::testing::gradcheck;

namespace {

Tensor randt(std::vector<int64_t> shape, uint64_t seed, float scale = 1.0f) {
  RngStream rng(seed);
  return Tensor::randn(std::move(shape), rng, scale);
}

// Direct NCHW convolution, no im2col, used as the oracle.
Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor out({n, cout, ho, wo});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t oc = 0; oc < cout; ++oc)
      for (int64_t oi = 0; oi < ho; ++oi)
        for (int64_t oj = 0; oj < wo; ++oj) {
          double acc = b ? (*b)[oc] : 0.0;
          for (int64_t ic = 0; ic < cin; ++ic)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj) {
                int64_t ii = oi * stride + ki - pad;
                int64_t jj = oj * stride + kj - pad;
                if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
                acc += static_cast<double>(x[((in * cin + ic) * h + ii) * wd + jj]) *
                       w[((oc * cin + ic) * kh + ki) * kw + kj];
              }
          out[((in * cout + oc) * ho + oi) * wo + oj] = static_cast<float>(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("broadcast add/sub/mul semantics") {
  Var a = constant(Tensor::from({2, 2, 1, 1}, {1, 2, 3, 4}));
  Var b = constant(Tensor::from({1, 2, 1, 1}, {10, 20}));
  Var s = add(a, b);
  CHECK(s->value.shape() == std::vector<int64_t>({2, 2, 1, 1}));
  CHECK(s->value[0] == 11.0f);
  CHECK(s->value[1] == 22.0f);
  CHECK(s->value[2] == 13.0f);
  CHECK(s->value[3] == 24.0f);

  Var m = mul(a, b);
  CHECK(m->value[3] == 80.0f);

  CHECK_THROWS_AS(add(a, constant(Tensor::zeros({2, 3, 1, 1}))), Error);
}

TEST_CASE("mean_axes values and backward") {
  // (2,2,2,2) filled 1..16
  std::vector<float> vals(16);
  for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  Var x = parameter(Tensor::from({2, 2, 2, 2}, vals));
  Var mu = mean_axes(x, {0, 2, 3}, true);
  CHECK(mu->value.shape() == std::vector<int64_t>({1, 2, 1, 1}));
  // channel 0 entries: 1,2,3,4,9,10,11,12 -> mean 6.5
  CHECK(mu->value[0] == doctest::Approx(6.5));
  CHECK(mu->value[1] == doctest::Approx(10.5));

  Var loss = mean_all(mu);
  backward(loss);
  // d(mean of 2 channel-means)/dx = 1/(2*8)
  CHECK(x->grad[0] == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("conv2d forward matches direct reference") {
  for (int stride : {1, 2}) {
    Tensor x = randt({2, 3, 7, 9}, 11);
    Tensor w = randt({4, 3, 3, 3}, 12);
    Tensor b = randt({4}, 13);
    Var vx = constant(x), vw = constant(w), vb = constant(b);
    Var y = conv2d(vx, vw, &vb, stride, 1);
    Tensor ref = conv_reference(x, w, &b, stride, 1);
    REQUIRE(y->value.same_shape(ref));
    for (int64_t i = 0; i < ref.numel(); ++i)
      CHECK(y->value[i] == doctest::Approx(ref[i]).epsilon(1e-4));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Var x = parameter(randt({2, 2, 5, 5}, 21, 0.5f));
  Var w = parameter(randt({3, 2, 3, 3}, 22, 0.5f));
  Var b = parameter(randt({3}, 23, 0.5f));
  for (int stride : {1, 2}) {
    auto build = [&] { return mean_all(square(conv2d(x, w, &b, stride, 1))); };
    auto r = gradcheck(build, {x, w, b}, 1e-2);
    CHECK(r.rel_err < 1e-3);
  }
}

TEST_CASE("upsample and crop round trip gradients") {
  Var x = parameter(randt({1, 2, 5, 6}, 31, 0.5f));
  auto build = [&] { return mean_all(square(crop2d(upsample_nearest2(x), 9, 11))); };
  auto r = gradcheck(build, {x}, 1e-2);
  CHECK(r.rel_err < 1e-3);

  Var up = upsample_nearest2(x);
  CHECK(up->value.dim(2) == 10);
  CHECK(up->value.dim(3) == 12);
  CHECK(up->value[0] == x->value[0]);
}

TEST_CASE("elementwise op gradients") {
  Var x = parameter(randt({2, 1, 4, 4}, 41, 0.8f));
  Var y = parameter(randt({2, 1, 4, 4}, 42, 0.8f));

  auto checks = {
      std::function<Var()>([&] { return mean_all(mul(relu(x), y)); }),
      std::function<Var()>([&] { return mean_all(leaky_relu(sub(x, y), 0.2)); }),
      std::function<Var()>([&] { return mean_all(rsqrt_eps(square(x), 1e-3)); }),
      std::function<Var()>([&] { return mae(x, y); }),
      std::function<Var()>([&] { return mean_all(mul_scalar(add_scalar(x, 0.3), -2.0)); }),
  };
  for (const auto& build : checks) {
    auto r = gradcheck(build, {x, y}, 5e-3);
    CHECK(r.rel_err < 2e-3);
  }
}

TEST_CASE("detach stops gradient flow") {
  Var x = parameter(randt({2, 1, 4, 4}, 51));
  Var loss = mean_all(square(detach(x)));
  CHECK_FALSE(loss->requires_grad);
  x->drop_grad();
  backward(loss);  // no-op on a non-grad root
  CHECK_FALSE(x->grad.same_shape(x->value));
}

TEST_CASE("no-grad mode builds constant graphs") {
  Var x = parameter(randt({2, 1, 4, 4}, 61));
  NoGradGuard ng;
  Var y = mean_all(square(x));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}

TEST_CASE("backward requires scalar root") {
  Var x = parameter(randt({2, 2}, 71));
  Var y = square(x);
  CHECK_THROWS_AS(backward(y), Error);
}

TEST_CASE("gradient accumulation across shared subexpressions") {
  Var x = parameter(Tensor::from({1}, {3.0f}));
  Var y = add(mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 7
  backward(y);
  CHECK(x->grad[0] == doctest::Approx(7.0));
}
