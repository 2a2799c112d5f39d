#include "iscl/optim.hpp"

#include <cmath>

namespace iscl {

double lr_at(int64_t iteration, int64_t total_iterations, const OptimizerSpec& spec) {
  require(total_iterations > 0, ErrorCategory::Argument, "lr_at: total iterations must be > 0");
  require(iteration >= 0 && iteration <= total_iterations, ErrorCategory::Argument,
          "lr_at: iteration out of range");
  double u = static_cast<double>(iteration) / static_cast<double>(total_iterations);
  // convex combination keeps both endpoints exact
  return spec.lr_start * (1.0 - u) + spec.lr_end * u;
}

RAdam::RAdam(std::vector<Var> params, OptimizerSpec spec)
    : params_(std::move(params)), spec_(spec) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(Tensor::zeros(p->value.shape()));
    v_.emplace_back(Tensor::zeros(p->value.shape()));
  }
}

void RAdam::zero_grad() {
  for (auto& p : params_) p->drop_grad();
}

void RAdam::step(double lr) {
  ++t_;
  double b1 = spec_.beta1, b2 = spec_.beta2;
  double b1t = std::pow(b1, static_cast<double>(t_));
  double b2t = std::pow(b2, static_cast<double>(t_));
  double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * b2t / (1.0 - b2t);

  bool rectified = rho_t > 4.0;
  double rect = 0.0;
  if (rectified)
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));

  for (size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (!p.grad.same_shape(p.value)) continue;  // no gradient accumulated this step
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    int64_t n = p.value.numel();
    for (int64_t j = 0; j < n; ++j) {
      double gj = g[j];
      double mj = b1 * m[j] + (1.0 - b1) * gj;
      double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      double m_hat = mj / (1.0 - b1t);
      double update;
      if (rectified) {
        double v_hat = std::sqrt(vj / (1.0 - b2t));
        update = lr * rect * m_hat / (v_hat + spec_.eps);
      } else {
        update = lr * m_hat;
      }
      w[j] = static_cast<float>(w[j] - update);
    }
  }
}

void swa_absorb(Tensor& phi, const Tensor& theta, int64_t n_models) {
  require(phi.same_shape(theta), ErrorCategory::Shape, "swa_absorb: shape mismatch");
  require(n_models >= 0, ErrorCategory::Argument, "swa_absorb: n_models must be >= 0");
  double n = static_cast<double>(n_models);
  double inv = 1.0 / (n + 1.0);
  for (int64_t i = 0; i < phi.numel(); ++i)
    phi[i] = static_cast<float>((static_cast<double>(phi[i]) * n + theta[i]) * inv);
}

void lookahead_sync(Tensor& phi, Tensor& theta, double alpha) {
  require(phi.same_shape(theta), ErrorCategory::Shape, "lookahead_sync: shape mismatch");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCategory::Argument,
          "lookahead_sync: alpha must lie in [0,1]");
  for (int64_t i = 0; i < phi.numel(); ++i) {
    phi[i] = static_cast<float>(phi[i] + alpha * (static_cast<double>(theta[i]) - phi[i]));
    theta[i] = phi[i];
  }
}

}  // namespace iscl
