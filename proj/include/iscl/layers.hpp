#pragma once

#include <functional>
#include <optional>
#include <string>

#include "iscl/autograd.hpp"
#include "iscl/rng.hpp"

namespace iscl {

using ParamVisitor = std::function<void(const std::string&, const Var&)>;
using BufferVisitor = std::function<void(const std::string&, Tensor&)>;

struct Conv2dLayer {
  Var weight;  // (out, in, k, k)
  Var bias;    // (out) or null
  int stride = 1;
  int pad = 1;

  // Fan-in-scaled normal init: std = sqrt(2 / fan_in).
  static Conv2dLayer create(int in_ch, int out_ch, int ksize, int stride, int pad,
                            bool with_bias, RngStream& rng);

  Var operator()(const Var& x) const;
  int64_t param_count() const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

// Batch-Instance normalization. Training mode blends batch statistics
// (per channel over N,H,W) with instance statistics (per sample/channel over
// H,W) through the learnable gate rho, clamped to [0,1] after every
// optimizer step. Inference uses stored running statistics for both branches
// so a frozen network is a purely local (fully convolutional) function.
struct BatchInstanceNorm {
  Var gamma;  // (1,C,1,1), init 1
  Var beta;   // (1,C,1,1), init 0
  Var rho;    // (1,C,1,1), init 0.5
  Tensor running_mean;     // shared by both branches
  Tensor running_var_bn;   // variance over (N,H,W)
  Tensor running_var_in;   // mean over samples of per-sample spatial variance
  float eps = 1e-5f;
  float momentum = 0.1f;

  static BatchInstanceNorm create(int channels);

  Var operator()(const Var& x, bool training);
  void clamp_rho();
  int64_t param_count() const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
  void visit_buffers(const std::string& prefix, BufferVisitor& fn);
};

// Instance normalization with affine parameters; no running statistics, the
// normalization is recomputed per sample in every mode. Used by the
// discriminators so their scores are per-sample pure functions.
struct InstanceNormLayer {
  Var gamma;
  Var beta;
  float eps = 1e-5f;

  static InstanceNormLayer create(int channels);
  Var operator()(const Var& x) const;
  int64_t param_count() const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

// Free-function form of the batch-instance normalization used by the layer;
// exposed for direct contract tests. Statistics outputs are optional taps.
Var batch_instance_norm(const Var& x, const Var& gamma, const Var& beta, const Var& rho,
                        bool training, float eps, const Tensor* run_mean,
                        const Tensor* run_var_bn, const Tensor* run_var_in,
                        Tensor* batch_mean_out = nullptr, Tensor* batch_var_out = nullptr,
                        Tensor* instance_var_mean_out = nullptr);

}  // namespace iscl
