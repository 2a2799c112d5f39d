#include "iscl/losses.hpp"

#include <algorithm>
#include <cmath>

namespace iscl {

const std::vector<std::string>& LossBreakdown::field_names() {
  static const std::vector<std::string> names = {
      "l_F",   "l_G",  "l_cycle", "l_bypass", "l_nested", "l_gen_total", "l_DX",
      "l_DY",  "l_bst", "l_dis_total", "l_pseudo", "l_nc", "l_self_total"};
  return names;
}

std::vector<std::optional<double>> LossBreakdown::fields() const {
  return {l_F, l_G, l_cycle, l_bypass, l_nested, l_gen_total, l_DX,
          l_DY, l_bst, l_dis_total, l_pseudo, l_nc, l_self_total};
}

bool LossBreakdown::all_finite() const {
  for (const auto& f : fields())
    if (f && !std::isfinite(*f)) return false;
  return true;
}

double LossBreakdown::max_magnitude() const {
  double m = 0.0;
  for (const auto& f : fields())
    if (f) m = std::max(m, std::fabs(*f));
  return m;
}

Var gen_adv_loss(const Var& fake_scores) {
  require(fake_scores->value.numel() > 0, ErrorCategory::Argument,
          "gen_adv_loss: empty score vector");
  return neg(mean_all(fake_scores));
}

Var cycle_loss(const Var& x, const Var& x_rec, const Var& y, const Var& y_rec) {
  return add(mae(x, x_rec), mae(y, y_rec));
}

Var bypass_loss(const Var& f_x, const Var& pseudo_clean, const Var& y,
                const Var& f_pseudo_noisy) {
  return add(mae(f_x, pseudo_clean), mae(y, f_pseudo_noisy));
}

namespace {

// mean(max(0, 1 - s)) and mean(max(0, 1 + s)) over a score vector.
Var hinge_real(const Var& scores) { return mean_all(relu(add_scalar(neg(scores), 1.0))); }
Var hinge_fake(const Var& scores) { return mean_all(relu(add_scalar(scores, 1.0))); }

}  // namespace

Var disc_hinge_loss(const Var& real_scores, const Var& fake_scores) {
  require(real_scores->value.numel() > 0 && fake_scores->value.numel() > 0,
          ErrorCategory::Argument, "disc_hinge_loss: empty score vector");
  return add(hinge_real(real_scores), hinge_fake(fake_scores));
}

Var boost_loss(const Var& scores_fake_clean, const Var& scores_fake_noisy) {
  require(scores_fake_clean->value.numel() > 0 && scores_fake_noisy->value.numel() > 0,
          ErrorCategory::Argument, "boost_loss: empty score vector");
  return add(hinge_fake(scores_fake_clean), hinge_fake(scores_fake_noisy));
}

Var pseudo_noise_loss(const Var& h_x, const Var& x, const Var& f_x) {
  Var label = detach(sub(x, f_x));
  return mae(h_x, label);
}

Var noise_consistency_loss(const Var& g_y, const Var& y, const Var& h_g_y) {
  Var target = sub(detach(g_y), y);
  return mae(target, h_g_y);
}

Var ensemble_denoise(const Var& x, const Var& f_x, const Var& h_x, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, ErrorCategory::Argument,
          "ensemble_denoise: gamma must lie in [0,1]");
  Var pseudo_clean = sub(x, h_x);
  return add(mul_scalar(f_x, gamma), mul_scalar(pseudo_clean, 1.0 - gamma));
}

Tensor ensemble_denoise(const Tensor& x, const Tensor& f_x, const Tensor& h_x, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, ErrorCategory::Argument,
          "ensemble_denoise: gamma must lie in [0,1]");
  require(x.same_shape(f_x) && x.same_shape(h_x), ErrorCategory::Shape,
          "ensemble_denoise: shape mismatch");
  Tensor out(x.shape());
  float g = static_cast<float>(gamma);
  float ig = static_cast<float>(1.0 - gamma);
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = g * f_x[i] + ig * (x[i] - h_x[i]);
  return out;
}

}  // namespace iscl
