// Learning-rate schedule, rectified adaptive-moment steps, SWA absorption
// and Lookahead synchronization.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iscl/optim.hpp"

using namespace iscl;

TEST_CASE("lr schedule: exact endpoints, midpoint, linearity") {
  OptimizerSpec spec;
  CHECK(lr_at(0, 1000, spec) == 1e-4);
  CHECK(lr_at(1000, 1000, spec) == 1e-6);
  CHECK(lr_at(500, 1000, spec) == doctest::Approx(5.05e-5).epsilon(1e-12));

  // second difference of a linear schedule vanishes
  for (int64_t i = 1; i + 1 <= 1000; ++i) {
    double d2 = lr_at(i + 1, 1000, spec) - 2.0 * lr_at(i, 1000, spec) + lr_at(i - 1, 1000, spec);
    CHECK(std::fabs(d2) < 1e-16);
  }
  // monotone non-increasing within [lr_end, lr_start]
  for (int64_t i = 0; i < 1000; ++i) {
    CHECK(lr_at(i + 1, 1000, spec) <= lr_at(i, 1000, spec));
    CHECK(lr_at(i, 1000, spec) <= spec.lr_start);
    CHECK(lr_at(i, 1000, spec) >= spec.lr_end);
  }

  CHECK_THROWS_AS(lr_at(0, 0, spec), Error);
  CHECK_THROWS_AS(lr_at(-1, 10, spec), Error);
  CHECK_THROWS_AS(lr_at(11, 10, spec), Error);
}

namespace {

// independent scalar reference of the rectified adaptive-moment update
struct ScalarRAdamRef {
  double m = 0, v = 0, theta;
  int64_t t = 0;
  OptimizerSpec spec;

  explicit ScalarRAdamRef(double theta0, OptimizerSpec s) : theta(theta0), spec(s) {}

  void step(double g, double lr) {
    ++t;
    m = spec.beta1 * m + (1 - spec.beta1) * g;
    v = spec.beta2 * v + (1 - spec.beta2) * g * g;
    // mirror float storage of the moments
    m = static_cast<float>(m);
    v = static_cast<float>(v);
    double b1t = std::pow(spec.beta1, t), b2t = std::pow(spec.beta2, t);
    double rho_inf = 2.0 / (1 - spec.beta2) - 1.0;
    double rho_t = rho_inf - 2.0 * t * b2t / (1 - b2t);
    double m_hat = m / (1 - b1t);
    if (rho_t > 4.0) {
      double rect = std::sqrt(((rho_t - 4) * (rho_t - 2) * rho_inf) /
                              ((rho_inf - 4) * (rho_inf - 2) * rho_t));
      theta -= lr * rect * m_hat / (std::sqrt(v / (1 - b2t)) + spec.eps);
    } else {
      theta -= lr * m_hat;
    }
    theta = static_cast<float>(theta);
  }
};

}  // namespace

TEST_CASE("radam matches an independent scalar reference over 12 steps") {
  OptimizerSpec spec;
  Var p = parameter(Tensor::from({1}, {0.5f}));
  RAdam opt({p}, spec);
  ScalarRAdamRef ref(0.5, spec);

  RngStream rng(8);
  for (int i = 0; i < 12; ++i) {
    double g = rng.normal();
    p->ensure_grad().fill(static_cast<float>(g));
    double lr = 1e-3;
    opt.step(lr);
    ref.step(g, lr);
    p->drop_grad();
    CHECK(p->value[0] == doctest::Approx(ref.theta).epsilon(1e-6));
  }
  CHECK(opt.step_count() == 12);
}

TEST_CASE("radam: first steps are unrectified, rectification engages later") {
  OptimizerSpec spec;  // beta2 = 0.999
  Var p = parameter(Tensor::from({1}, {1.0f}));
  RAdam opt({p}, spec);
  // t = 1: update must be exactly lr * g (bias-corrected momentum = g)
  p->ensure_grad().fill(2.0f);
  opt.step(0.01);
  CHECK(p->value[0] == doctest::Approx(1.0 - 0.01 * 2.0).epsilon(1e-7));
}

TEST_CASE("radam: zero gradient leaves parameters unchanged") {
  OptimizerSpec spec;
  Var p = parameter(Tensor::from({4}, {1, 2, 3, 4}));
  RAdam opt({p}, spec);
  for (int i = 0; i < 8; ++i) {
    p->ensure_grad().fill(0.0f);
    opt.step(1e-3);
  }
  CHECK(p->value[0] == 1.0f);
  CHECK(p->value[3] == 4.0f);

  // parameters without an accumulated gradient are skipped entirely
  p->drop_grad();
  opt.step(1e-3);
  CHECK(p->value[1] == 2.0f);
}

TEST_CASE("radam converges on a quadratic") {
  OptimizerSpec spec;
  spec.lr_start = 1e-2;
  Var p = parameter(Tensor::from({1}, {3.0f}));
  RAdam opt({p}, spec);
  for (int i = 0; i < 2000; ++i) {
    p->drop_grad();
    Var loss = mean_all(square(p));
    backward(loss);
    opt.step(1e-2);
  }
  CHECK(std::fabs(p->value[0]) < 1e-2);
}

TEST_CASE("swa absorb: first snapshot, worked examples, running mean property") {
  Tensor phi = Tensor::full({3}, 7.0f);
  Tensor theta = Tensor::full({3}, 2.0f);
  swa_absorb(phi, theta, 0);
  CHECK(phi[0] == 2.0f);  // n = 0 overwrites with the first snapshot

  phi = Tensor::full({1}, 0.0f);
  theta = Tensor::full({1}, 2.0f);
  swa_absorb(phi, theta, 1);
  CHECK(phi[0] == 1.0f);

  phi = Tensor::full({1}, 1.0f);
  theta = Tensor::full({1}, 5.0f);
  swa_absorb(phi, theta, 3);
  CHECK(phi[0] == 2.0f);

  // seven absorptions equal the arithmetic mean of the seven snapshots
  RngStream rng(77);
  Tensor acc = Tensor::zeros({16});
  Tensor mean = Tensor::zeros({16});
  for (int64_t n = 0; n < 7; ++n) {
    Tensor snap = Tensor::randn({16}, rng);
    for (int64_t i = 0; i < 16; ++i) mean[i] += snap[i] / 7.0f;
    swa_absorb(acc, snap, n);
  }
  for (int64_t i = 0; i < 16; ++i)
    CHECK(acc[i] == doctest::Approx(mean[i]).epsilon(1e-6));

  Tensor bad = Tensor::zeros({4});
  CHECK_THROWS_AS(swa_absorb(bad, theta, 1), Error);
  CHECK_THROWS_AS(swa_absorb(phi, theta, -1), Error);
}

TEST_CASE("lookahead sync: endpoints, midpoint, idempotence") {
  Tensor phi = Tensor::full({2}, 0.0f);
  Tensor theta = Tensor::full({2}, 10.0f);
  lookahead_sync(phi, theta, 0.5);
  CHECK(phi[0] == 5.0f);
  CHECK(theta[0] == 5.0f);  // fast weights reset to the slow weights

  phi = Tensor::full({2}, 1.0f);
  theta = Tensor::full({2}, 9.0f);
  lookahead_sync(phi, theta, 1.0);
  CHECK(phi[0] == 9.0f);
  CHECK(theta[0] == 9.0f);

  phi = Tensor::full({2}, 1.0f);
  theta = Tensor::full({2}, 9.0f);
  lookahead_sync(phi, theta, 0.0);
  CHECK(phi[0] == 1.0f);
  CHECK(theta[0] == 1.0f);

  // theta == phi is a fixed point
  phi = Tensor::full({2}, 3.0f);
  theta = Tensor::full({2}, 3.0f);
  lookahead_sync(phi, theta, 0.7);
  CHECK(phi[0] == 3.0f);
  CHECK(theta[0] == 3.0f);

  Tensor bad = Tensor::zeros({3});
  CHECK_THROWS_AS(lookahead_sync(bad, theta, 0.5), Error);
  CHECK_THROWS_AS(lookahead_sync(phi, theta, 1.5), Error);
}

TEST_CASE("network-level averaging walks parameters and buffers in lockstep") {
  RngStream rng(5);
  Extractor a(ExtractorConfig{3, 4}, rng);
  Extractor b(ExtractorConfig{3, 4}, rng);
  Extractor shadow(ExtractorConfig{3, 4}, rng);
  copy_net(shadow, a);

  swa_absorb_net(shadow, b, 0);  // first absorb: shadow == b
  std::vector<float> sv, bv;
  shadow.visit_params([&](const std::string&, const Var& v) {
    sv.insert(sv.end(), v->value.vec().begin(), v->value.vec().end());
  });
  b.visit_params([&](const std::string&, const Var& v) {
    bv.insert(bv.end(), v->value.vec().begin(), v->value.vec().end());
  });
  REQUIRE(sv.size() == bv.size());
  for (size_t i = 0; i < sv.size(); ++i) CHECK(sv[i] == bv[i]);

  // lookahead midpoint between distinct nets (bv holds b before the sync)
  Extractor slow(ExtractorConfig{3, 4}, rng);
  copy_net(slow, a);
  std::vector<float> av;
  a.visit_params([&](const std::string&, const Var& v) {
    av.insert(av.end(), v->value.vec().begin(), v->value.vec().end());
  });
  lookahead_sync_net(slow, b, 0.5);
  std::vector<float> slv;
  slow.visit_params([&](const std::string&, const Var& v) {
    slv.insert(slv.end(), v->value.vec().begin(), v->value.vec().end());
  });
  std::vector<float> bv_after;
  b.visit_params([&](const std::string&, const Var& v) {
    bv_after.insert(bv_after.end(), v->value.vec().begin(), v->value.vec().end());
  });
  for (size_t i = 0; i < slv.size(); ++i) {
    CHECK(slv[i] == doctest::Approx(0.5 * (av[i] + bv[i])).epsilon(1e-5));
    CHECK(bv_after[i] == slv[i]);  // fast weights were reset
  }
}
