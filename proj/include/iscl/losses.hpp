#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iscl/autograd.hpp"

namespace iscl {

// Per-iteration objective values. Terms not active under the current
// ablation flags stay unset and serialize as empty CSV cells.
struct LossBreakdown {
  std::optional<double> l_F, l_G, l_cycle, l_bypass, l_nested, l_gen_total;
  std::optional<double> l_DX, l_DY, l_bst, l_dis_total;
  std::optional<double> l_pseudo, l_nc, l_self_total;
  double lambda = 0.0;

  static const std::vector<std::string>& field_names();
  std::vector<std::optional<double>> fields() const;
  bool all_finite() const;
  double max_magnitude() const;
};

// Generator hinge objective: -mean(scores of fakes). Applies to both the
// denoiser (through D_Y(F(x))) and the noiser (through D_X(G(y))).
Var gen_adv_loss(const Var& fake_scores);

// MAE(x, x_rec) + MAE(y, y_rec), each mean over all elements.
Var cycle_loss(const Var& x, const Var& x_rec, const Var& y, const Var& y_rec);

// MAE(F(x), x - H(x)) + MAE(y, F(y + H(x))). The extractor outputs feeding
// pseudo_clean and f_pseudo_noisy must be detached by the caller; only the
// denoiser learns from this term.
Var bypass_loss(const Var& f_x, const Var& pseudo_clean, const Var& y,
                const Var& f_pseudo_noisy);

// Canonical hinge: mean(max(0, 1-real)) + mean(max(0, 1+fake)).
Var disc_hinge_loss(const Var& real_scores, const Var& fake_scores);

// Extra fake-sample hinge for D_Y(x - H(x)) and D_X(y + H(x)); extractor
// outputs are constants here (discriminator update only).
Var boost_loss(const Var& scores_fake_clean, const Var& scores_fake_noisy);

// MAE(H(x), stop_grad(x - F(x))): the pseudo-noise label is a constant
// target, so no gradient reaches the denoiser.
Var pseudo_noise_loss(const Var& h_x, const Var& x, const Var& f_x);

// MAE(stop_grad(G(y)) - y, H(G(y))): the caller must also feed H a detached
// G(y) so the noiser receives no gradient through the extractor input.
Var noise_consistency_loss(const Var& g_y, const Var& y, const Var& h_g_y);

// Deployed ensemble: gamma*F(x) + (1-gamma)*(x - H(x)).
Var ensemble_denoise(const Var& x, const Var& f_x, const Var& h_x, double gamma);
Tensor ensemble_denoise(const Tensor& x, const Tensor& f_x, const Tensor& h_x, double gamma);

}  // namespace iscl
