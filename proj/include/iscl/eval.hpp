#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iscl/trainer.hpp"

namespace iscl {

enum class DenoiseMode { Ensemble, FOnly, HOnly };

struct DenoiseOptions {
  double gamma = 0.5;
  DenoiseMode mode = DenoiseMode::Ensemble;
  bool use_averaged = true;  // deploy the phi (averaged) networks
  bool clip = true;          // clip to [0,1] before returning
};

// Whole-image denoising; input and output are 2-D [0,1] images.
Tensor denoise_image(ModelBundle& bundle, const Tensor& img2d, const DenoiseOptions& opts);

// Tile-based denoising with 50% overlap; overlapping predictions are
// averaged. Tile positions are clamped so the grid covers the image; the
// optional taps receive the tile top-left coordinates for seam analysis.
Tensor denoise_tiled(ModelBundle& bundle, const Tensor& img2d, const DenoiseOptions& opts,
                     int64_t tile, std::vector<int64_t>* ys = nullptr,
                     std::vector<int64_t>* xs = nullptr);

struct GammaPoint {
  double gamma = 0.0;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

// One ensemble evaluation per grid value over the validation split. F(x) and
// H(x) are computed once per image, so the gamma endpoints coincide exactly
// with the single-network scores.
std::vector<GammaPoint> gamma_sweep(ModelBundle& bundle, const ImageCache& cache,
                                    const DatasetSplit& split, const std::vector<double>& grid);

std::string gamma_curve_csv(const std::vector<GammaPoint>& curve);

struct LadderRow {
  std::string label;  // "(A)", "(A)+(B)", ...
  AblationFlags flags;
  bool failed = false;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  MetricsRecord record;
};

// Trains the five cumulative configurations with identical seeds and budgets
// and evaluates each on the validation split. A diverging run marks its row
// failed and the ladder continues. Rows without the extractor report the
// denoiser output; rows with it report the ensemble.
std::vector<LadderRow> run_ablation_ladder(const TrainConfig& base, const DatasetSplit& split,
                                           const ImageCache& cache,
                                           const std::filesystem::path& out_dir = {});

std::string ladder_csv(const std::vector<LadderRow>& rows);
std::string ladder_table(const std::vector<LadderRow>& rows);

// Mean PSNR/SSIM of a trained bundle over the validation split.
MetricsRecord evaluate_bundle(ModelBundle& bundle, const ImageCache& cache,
                              const DatasetSplit& split, double gamma);

}  // namespace iscl
