#pragma once

#include <cstdint>
#include <vector>

#include "iscl/autograd.hpp"
#include "iscl/models.hpp"

namespace iscl {

struct OptimizerSpec {
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear decay from lr_start at iteration 0 to lr_end at iteration == total.
double lr_at(int64_t iteration, int64_t total_iterations, const OptimizerSpec& spec);

// Rectified Adam. Uses the variance-rectification term when the moving
// second moment is tractable (rho_t > 4) and falls back to the bias-corrected
// first moment otherwise.
class RAdam {
 public:
  RAdam() = default;
  RAdam(std::vector<Var> params, OptimizerSpec spec);

  void zero_grad();
  void step(double lr);

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  size_t size() const { return params_.size(); }
  Tensor& moment1(size_t i) { return m_[i]; }
  Tensor& moment2(size_t i) { return v_[i]; }
  const Var& param(size_t i) const { return params_[i]; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
  OptimizerSpec spec_;
};

// SWA running-average absorb: phi' = (phi*n + theta)/(n+1), elementwise.
void swa_absorb(Tensor& phi, const Tensor& theta, int64_t n_models);

// Lookahead synchronization: phi' = phi + alpha*(theta - phi), then the fast
// weights are reset to the slow weights (theta' = phi').
void lookahead_sync(Tensor& phi, Tensor& theta, double alpha);

// Whole-network forms; parameters and running statistics are both averaged,
// keeping shadow networks self-consistent between statistic refreshes.
template <typename Net>
void swa_absorb_net(Net& shadow, Net& live, int64_t n_models) {
  std::vector<Tensor*> sp, lp;
  shadow.visit_params([&](const std::string&, const Var& v) { sp.push_back(&v->value); });
  live.visit_params([&](const std::string&, const Var& v) { lp.push_back(&v->value); });
  shadow.visit_buffers([&](const std::string&, Tensor& t) { sp.push_back(&t); });
  live.visit_buffers([&](const std::string&, Tensor& t) { lp.push_back(&t); });
  require(sp.size() == lp.size(), ErrorCategory::Shape, "swa_absorb: net mismatch");
  for (size_t i = 0; i < sp.size(); ++i) swa_absorb(*sp[i], *lp[i], n_models);
}

template <typename Net>
void lookahead_sync_net(Net& shadow, Net& live, double alpha) {
  std::vector<Tensor*> sp, lp;
  shadow.visit_params([&](const std::string&, const Var& v) { sp.push_back(&v->value); });
  live.visit_params([&](const std::string&, const Var& v) { lp.push_back(&v->value); });
  shadow.visit_buffers([&](const std::string&, Tensor& t) { sp.push_back(&t); });
  live.visit_buffers([&](const std::string&, Tensor& t) { lp.push_back(&t); });
  require(sp.size() == lp.size(), ErrorCategory::Shape, "lookahead_sync: net mismatch");
  for (size_t i = 0; i < sp.size(); ++i) lookahead_sync(*sp[i], *lp[i], alpha);
}

// Algorithm bookkeeping for both averaging schemes.
struct AveragingState {
  int64_t n_models = 0;    // SWA snapshots absorbed so far
  int64_t cycle_length = 1;  // c
  int64_t swa_start_epoch = 0;  // N_swa
  int64_t lookahead_period = 5;  // k
  double lookahead_alpha = 0.5;  // alpha

  void validate() const {
    require(cycle_length >= 1, ErrorCategory::Argument, "averaging: cycle length must be >= 1");
    require(lookahead_period >= 1, ErrorCategory::Argument, "averaging: period must be >= 1");
    require(lookahead_alpha >= 0.0 && lookahead_alpha <= 1.0, ErrorCategory::Argument,
            "averaging: alpha must lie in [0,1]");
    require(n_models >= 0, ErrorCategory::Argument, "averaging: n_models must be >= 0");
  }
};

}  // namespace iscl
