#pragma once

#include <string>
#include <vector>

#include "iscl/tensor.hpp"

namespace iscl {

// 99.0 dB stands in for the infinite PSNR of a zero-MSE pair so aggregates
// stay finite.
inline constexpr double kPsnrCap = 99.0;

// 10*log10(data_range^2 / MSE) with double accumulation.
double psnr(const Tensor& ref, const Tensor& test, double data_range);

// Mean local SSIM, Gaussian window 11x11 sigma 1.5, K1=0.01, K2=0.03,
// valid-region windowing. Images must be at least 11x11.
double ssim(const Tensor& ref, const Tensor& test, double data_range);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;

  static MetricStats of(const std::vector<double>& values);
};

// Per-run evaluation record: one PSNR/SSIM per validation image plus
// aggregates, for each of the three outputs (F path, extractor path,
// ensemble).
struct MetricsRecord {
  std::string run_id;
  std::string ablation;
  double gamma = 0.5;
  std::vector<double> psnr_f, psnr_h, psnr_ens;
  std::vector<double> ssim_f, ssim_h, ssim_ens;
  bool available = false;  // false when no clean references exist

  MetricStats psnr_f_stats() const { return MetricStats::of(psnr_f); }
  MetricStats psnr_h_stats() const { return MetricStats::of(psnr_h); }
  MetricStats psnr_ens_stats() const { return MetricStats::of(psnr_ens); }
  MetricStats ssim_ens_stats() const { return MetricStats::of(ssim_ens); }
};

}  // namespace iscl
