#include "iscl/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace iscl {

double psnr(const Tensor& ref, const Tensor& test, double data_range) {
  require(ref.same_shape(test), ErrorCategory::Shape, "psnr: shape mismatch");
  require(data_range > 0.0, ErrorCategory::Argument, "psnr: data_range must be > 0");
  require(ref.numel() > 0, ErrorCategory::Argument, "psnr: empty images");
  double mse = 0.0;
  for (int64_t i = 0; i < ref.numel(); ++i) {
    double d = static_cast<double>(ref[i]) - test[i];
    mse += d * d;
  }
  mse /= static_cast<double>(ref.numel());
  if (mse == 0.0) return kPsnrCap;
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> win = [] {
    std::vector<double> w(kWin * kWin);
    double sum = 0.0;
    int r = kWin / 2;
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) {
        double dy = i - r, dx = j - r;
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
        w[i * kWin + j] = v;
        sum += v;
      }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return win;
}

}  // namespace

double ssim(const Tensor& ref, const Tensor& test, double data_range) {
  require(ref.same_shape(test), ErrorCategory::Shape, "ssim: shape mismatch");
  require(ref.rank() == 2, ErrorCategory::Shape, "ssim: expects 2-D images");
  require(data_range > 0.0, ErrorCategory::Argument, "ssim: data_range must be > 0");
  int64_t h = ref.dim(0), w = ref.dim(1);
  require(h >= kWin && w >= kWin, ErrorCategory::Argument,
          "ssim: image smaller than the 11x11 window");

  const auto& win = gaussian_window();
  double c1 = (0.01 * data_range) * (0.01 * data_range);
  double c2 = (0.03 * data_range) * (0.03 * data_range);

  double total = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i + kWin <= h; ++i) {
    for (int64_t j = 0; j + kWin <= w; ++j) {
      double mu_x = 0.0, mu_y = 0.0;
      for (int a = 0; a < kWin; ++a)
        for (int b = 0; b < kWin; ++b) {
          double g = win[a * kWin + b];
          mu_x += g * ref[(i + a) * w + (j + b)];
          mu_y += g * test[(i + a) * w + (j + b)];
        }
      double var_x = 0.0, var_y = 0.0, cov = 0.0;
      for (int a = 0; a < kWin; ++a)
        for (int b = 0; b < kWin; ++b) {
          double g = win[a * kWin + b];
          double dx = ref[(i + a) * w + (j + b)] - mu_x;
          double dy = test[(i + a) * w + (j + b)] - mu_y;
          var_x += g * dx * dx;
          var_y += g * dy * dy;
          cov += g * dx * dy;
        }
      double num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
      double den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

MetricStats MetricStats::of(const std::vector<double>& values) {
  MetricStats s;
  if (values.empty()) return s;
  double sum = 0.0;
  s.min = values[0];
  s.max = values[0];
  for (double v : values) {
    sum += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
  }
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

}  // namespace iscl
