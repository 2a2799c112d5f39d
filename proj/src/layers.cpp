#include "iscl/layers.hpp"

#include <cmath>

namespace iscl {

Conv2dLayer Conv2dLayer::create(int in_ch, int out_ch, int ksize, int stride, int pad,
                                bool with_bias, RngStream& rng) {
  Conv2dLayer l;
  l.stride = stride;
  l.pad = pad;
  float fan_in = static_cast<float>(in_ch * ksize * ksize);
  float stddev = std::sqrt(2.0f / fan_in);
  l.weight = parameter(Tensor::randn({out_ch, in_ch, ksize, ksize}, rng, stddev));
  if (with_bias) l.bias = parameter(Tensor::zeros({out_ch}));
  return l;
}

Var Conv2dLayer::operator()(const Var& x) const {
  return conv2d(x, weight, bias ? &bias : nullptr, stride, pad);
}

int64_t Conv2dLayer::param_count() const {
  return weight->value.numel() + (bias ? bias->value.numel() : 0);
}

void Conv2dLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + "/weight", weight);
  if (bias) fn(prefix + "/bias", bias);
}

BatchInstanceNorm BatchInstanceNorm::create(int channels) {
  BatchInstanceNorm n;
  n.gamma = parameter(Tensor::full({1, channels, 1, 1}, 1.0f));
  n.beta = parameter(Tensor::zeros({1, channels, 1, 1}));
  n.rho = parameter(Tensor::full({1, channels, 1, 1}, 0.5f));
  n.running_mean = Tensor::zeros({1, channels, 1, 1});
  n.running_var_bn = Tensor::full({1, channels, 1, 1}, 1.0f);
  n.running_var_in = Tensor::full({1, channels, 1, 1}, 1.0f);
  return n;
}

Var batch_instance_norm(const Var& x, const Var& gamma, const Var& beta, const Var& rho,
                        bool training, float eps, const Tensor* run_mean,
                        const Tensor* run_var_bn, const Tensor* run_var_in,
                        Tensor* batch_mean_out, Tensor* batch_var_out,
                        Tensor* instance_var_mean_out) {
  require(x->value.rank() == 4, ErrorCategory::Shape, "batch_instance_norm: expects NCHW");
  float rlo = rho->value.min(), rhi = rho->value.max();
  require(rlo >= 0.0f && rhi <= 1.0f, ErrorCategory::Argument,
          "batch_instance_norm: rho must lie in [0,1]");

  Var xb, xi;
  if (training) {
    require(x->value.dim(0) > 1, ErrorCategory::DegenerateStats,
            "batch_instance_norm: batch statistics undefined for batch of size 1 in "
            "training mode (use inference mode)");
    Var mu_b = mean_axes(x, {0, 2, 3}, true);
    Var var_b = mean_axes(square(sub(x, mu_b)), {0, 2, 3}, true);
    xb = mul(sub(x, mu_b), rsqrt_eps(var_b, eps));
    Var mu_i = mean_axes(x, {2, 3}, true);
    Var var_i = mean_axes(square(sub(x, mu_i)), {2, 3}, true);
    xi = mul(sub(x, mu_i), rsqrt_eps(var_i, eps));
    if (batch_mean_out) *batch_mean_out = mu_b->value;
    if (batch_var_out) *batch_var_out = var_b->value;
    if (instance_var_mean_out) {
      // average per-sample spatial variance over the batch -> (1,C,1,1)
      const Tensor& vi = var_i->value;
      int64_t n = vi.dim(0), c = vi.dim(1);
      Tensor avg({1, c, 1, 1});
      for (int64_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += vi[i * c + j];
        avg[j] = static_cast<float>(s / static_cast<double>(n));
      }
      *instance_var_mean_out = std::move(avg);
    }
  } else {
    require(run_mean && run_var_bn && run_var_in, ErrorCategory::Argument,
            "batch_instance_norm: running statistics required in inference mode");
    Var mean_c = constant(*run_mean);
    xb = mul(sub(x, mean_c), rsqrt_eps(constant(*run_var_bn), eps));
    xi = mul(sub(x, mean_c), rsqrt_eps(constant(*run_var_in), eps));
  }
  // gamma * (rho * BN(x) + (1 - rho) * IN(x)) + beta
  Var one_minus_rho = add_scalar(neg(rho), 1.0);
  Var mix = add(mul(rho, xb), mul(one_minus_rho, xi));
  return add(mul(gamma, mix), beta);
}

Var BatchInstanceNorm::operator()(const Var& x, bool training) {
  Tensor mu_b, var_b, var_i_mean;
  Var out = batch_instance_norm(x, gamma, beta, rho, training, eps, &running_mean,
                                &running_var_bn, &running_var_in,
                                training ? &mu_b : nullptr, training ? &var_b : nullptr,
                                training ? &var_i_mean : nullptr);
  if (training) {
    float m = momentum;
    for (int64_t i = 0; i < running_mean.numel(); ++i) {
      running_mean[i] = (1.0f - m) * running_mean[i] + m * mu_b[i];
      running_var_bn[i] = (1.0f - m) * running_var_bn[i] + m * var_b[i];
      running_var_in[i] = (1.0f - m) * running_var_in[i] + m * var_i_mean[i];
    }
  }
  return out;
}

void BatchInstanceNorm::clamp_rho() {
  float* p = rho->value.data();
  for (int64_t i = 0; i < rho->value.numel(); ++i)
    p[i] = std::min(1.0f, std::max(0.0f, p[i]));
}

int64_t BatchInstanceNorm::param_count() const {
  return gamma->value.numel() + beta->value.numel() + rho->value.numel();
}

void BatchInstanceNorm::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + "/gamma", gamma);
  fn(prefix + "/beta", beta);
  fn(prefix + "/rho", rho);
}

void BatchInstanceNorm::visit_buffers(const std::string& prefix, BufferVisitor& fn) {
  fn(prefix + "/running_mean", running_mean);
  fn(prefix + "/running_var_bn", running_var_bn);
  fn(prefix + "/running_var_in", running_var_in);
}

InstanceNormLayer InstanceNormLayer::create(int channels) {
  InstanceNormLayer n;
  n.gamma = parameter(Tensor::full({1, channels, 1, 1}, 1.0f));
  n.beta = parameter(Tensor::zeros({1, channels, 1, 1}));
  return n;
}

Var InstanceNormLayer::operator()(const Var& x) const {
  Var mu = mean_axes(x, {2, 3}, true);
  Var var = mean_axes(square(sub(x, mu)), {2, 3}, true);
  Var xn = mul(sub(x, mu), rsqrt_eps(var, eps));
  return add(mul(gamma, xn), beta);
}

int64_t InstanceNormLayer::param_count() const {
  return gamma->value.numel() + beta->value.numel();
}

void InstanceNormLayer::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + "/gamma", gamma);
  fn(prefix + "/beta", beta);
}

}  // namespace iscl
