#include "iscl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace iscl {

namespace {

Tensor clip01(Tensor t) {
  float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = std::min(1.0f, std::max(0.0f, p[i]));
  return t;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

Tensor blend(const Tensor& x4, const Tensor& f, const Tensor& h, const DenoiseOptions& opts) {
  switch (opts.mode) {
    case DenoiseMode::FOnly: return f;
    case DenoiseMode::HOnly: return ensemble_denoise(x4, f, h, 0.0);
    case DenoiseMode::Ensemble: return ensemble_denoise(x4, f, h, opts.gamma);
  }
  fail(ErrorCategory::Argument, "denoise: unknown mode");
}

}  // namespace

Tensor denoise_image(ModelBundle& bundle, const Tensor& img2d, const DenoiseOptions& opts) {
  require(img2d.rank() == 2, ErrorCategory::Shape, "denoise: expects a 2-D image");
  Tensor x4 = Tensor::from({1, 1, img2d.dim(0), img2d.dim(1)}, img2d.vec());
  Generator& f_net = opts.use_averaged ? bundle.phi_F : bundle.F;
  Extractor& h_net = opts.use_averaged ? bundle.phi_H : bundle.H;
  Tensor f = opts.mode == DenoiseMode::HOnly ? Tensor(x4.shape()) : f_net.infer(x4);
  Tensor h = opts.mode == DenoiseMode::FOnly ? Tensor(x4.shape()) : h_net.infer(x4);
  Tensor out = blend(x4, f, h, opts);
  Tensor out2 = Tensor::from({img2d.dim(0), img2d.dim(1)}, out.vec());
  return opts.clip ? clip01(std::move(out2)) : out2;
}

Tensor denoise_tiled(ModelBundle& bundle, const Tensor& img2d, const DenoiseOptions& opts,
                     int64_t tile, std::vector<int64_t>* ys, std::vector<int64_t>* xs) {
  require(img2d.rank() == 2, ErrorCategory::Shape, "denoise_tiled: expects a 2-D image");
  int64_t h = img2d.dim(0), w = img2d.dim(1);
  require(tile >= 32 && tile % 2 == 0, ErrorCategory::Argument,
          "denoise_tiled: tile must be even and at least 32");
  require(h >= tile && w >= tile, ErrorCategory::Argument,
          "denoise_tiled: image smaller than the tile");
  int64_t stride = tile / 2;

  auto positions = [&](int64_t extent) {
    std::vector<int64_t> pos;
    for (int64_t p = 0;; p += stride) {
      if (p + tile >= extent) {
        pos.push_back(extent - tile);
        break;
      }
      pos.push_back(p);
    }
    return pos;
  };
  std::vector<int64_t> ypos = positions(h), xpos = positions(w);
  if (ys) *ys = ypos;
  if (xs) *xs = xpos;

  DenoiseOptions tile_opts = opts;
  tile_opts.clip = false;  // clip once after stitching
  Tensor sum({h, w});
  Tensor count({h, w});
  Tensor patch({tile, tile});
  for (int64_t y0 : ypos) {
    for (int64_t x0 : xpos) {
      for (int64_t i = 0; i < tile; ++i)
        for (int64_t j = 0; j < tile; ++j)
          patch[i * tile + j] = img2d[(y0 + i) * w + (x0 + j)];
      Tensor out = denoise_image(bundle, patch, tile_opts);
      for (int64_t i = 0; i < tile; ++i)
        for (int64_t j = 0; j < tile; ++j) {
          sum[(y0 + i) * w + (x0 + j)] += out[i * tile + j];
          count[(y0 + i) * w + (x0 + j)] += 1.0f;
        }
    }
  }
  for (int64_t i = 0; i < sum.numel(); ++i) sum[i] /= count[i];
  return opts.clip ? clip01(std::move(sum)) : sum;
}

MetricsRecord evaluate_bundle(ModelBundle& bundle, const ImageCache& cache,
                              const DatasetSplit& split, double gamma) {
  require(gamma >= 0.0 && gamma <= 1.0, ErrorCategory::Argument,
          "evaluate: gamma must lie in [0,1]");
  require(split.has_references(), ErrorCategory::Evaluation,
          "evaluate: validation references are required");
  MetricsRecord rec;
  rec.available = true;
  rec.gamma = gamma;
  for (size_t i = 0; i < split.val_noisy.size(); ++i) {
    const ImageTensor& noisy = cache.get(split.val_noisy[i], Domain::NoisyX);
    const ImageTensor& ref = cache.get(split.val_clean_ref[i], Domain::CleanY);
    Tensor x4 = Tensor::from({1, 1, noisy.height(), noisy.width()}, noisy.pixels.vec());
    Tensor f = bundle.phi_F.infer(x4);
    Tensor hh = bundle.phi_H.infer(x4);
    auto to2d = [&](const Tensor& t) {
      return clip01(Tensor::from({noisy.height(), noisy.width()}, t.vec()));
    };
    Tensor f2 = to2d(f);
    Tensor h2 = to2d(ensemble_denoise(x4, f, hh, 0.0));
    Tensor e2 = to2d(ensemble_denoise(x4, f, hh, gamma));
    rec.psnr_f.push_back(psnr(ref.pixels, f2, 1.0));
    rec.psnr_h.push_back(psnr(ref.pixels, h2, 1.0));
    rec.psnr_ens.push_back(psnr(ref.pixels, e2, 1.0));
    rec.ssim_f.push_back(ssim(ref.pixels, f2, 1.0));
    rec.ssim_h.push_back(ssim(ref.pixels, h2, 1.0));
    rec.ssim_ens.push_back(ssim(ref.pixels, e2, 1.0));
  }
  return rec;
}

std::vector<GammaPoint> gamma_sweep(ModelBundle& bundle, const ImageCache& cache,
                                    const DatasetSplit& split, const std::vector<double>& grid) {
  require(!grid.empty(), ErrorCategory::Argument, "gamma_sweep: empty grid");
  for (double g : grid)
    require(g >= 0.0 && g <= 1.0, ErrorCategory::Argument,
            "gamma_sweep: grid values must lie in [0,1]");
  require(split.has_references(), ErrorCategory::Evaluation,
          "gamma_sweep: validation references are required");

  std::vector<GammaPoint> curve(grid.size());
  for (size_t k = 0; k < grid.size(); ++k) curve[k].gamma = grid[k];

  for (size_t i = 0; i < split.val_noisy.size(); ++i) {
    const ImageTensor& noisy = cache.get(split.val_noisy[i], Domain::NoisyX);
    const ImageTensor& ref = cache.get(split.val_clean_ref[i], Domain::CleanY);
    Tensor x4 = Tensor::from({1, 1, noisy.height(), noisy.width()}, noisy.pixels.vec());
    Tensor f = bundle.phi_F.infer(x4);
    Tensor h = bundle.phi_H.infer(x4);
    for (size_t k = 0; k < grid.size(); ++k) {
      Tensor e = ensemble_denoise(x4, f, h, grid[k]);
      Tensor e2 = clip01(Tensor::from({noisy.height(), noisy.width()}, e.vec()));
      curve[k].mean_psnr += psnr(ref.pixels, e2, 1.0);
      curve[k].mean_ssim += ssim(ref.pixels, e2, 1.0);
    }
  }
  double n = static_cast<double>(split.val_noisy.size());
  for (auto& p : curve) {
    p.mean_psnr /= n;
    p.mean_ssim /= n;
  }
  return curve;
}

std::string gamma_curve_csv(const std::vector<GammaPoint>& curve) {
  std::string out = "gamma,mean_psnr,mean_ssim\n";
  for (const auto& p : curve)
    out += fmt(p.gamma) + "," + fmt(p.mean_psnr) + "," + fmt(p.mean_ssim) + "\n";
  return out;
}

std::vector<LadderRow> run_ablation_ladder(const TrainConfig& base, const DatasetSplit& split,
                                           const ImageCache& cache,
                                           const std::filesystem::path& out_dir) {
  const std::vector<std::pair<std::string, AblationFlags>> ladder = {
      {"(A)", AblationFlags{}},
      {"(A)+(B)", AblationFlags{true, false, false, false}},
      {"(A)+(B)+(C)", AblationFlags{true, true, false, false}},
      {"(A)+(B)+(C)+(D)", AblationFlags{true, true, true, false}},
      {"(A)+(B)+(C)+(D)+(E)", AblationFlags{true, true, true, true}},
  };
  std::vector<LadderRow> rows;
  for (const auto& [label, flags] : ladder) {
    LadderRow row;
    row.label = label;
    row.flags = flags;
    TrainConfig cfg = base;
    cfg.flags = flags;
    FitOptions opts;
    if (!out_dir.empty()) opts.out_dir = out_dir / ("ladder_" + flags.str());
    try {
      FitResult res = fit(cfg, split, cache, opts);
      if (res.diverged) {
        row.failed = true;
      } else {
        row.record = evaluate_bundle(*res.bundle, cache, split, cfg.gamma);
        // rows without the extractor deploy the denoiser alone
        row.mean_psnr = flags.b ? row.record.psnr_ens_stats().mean
                                : row.record.psnr_f_stats().mean;
        row.mean_ssim = flags.b ? row.record.ssim_ens_stats().mean
                                : MetricStats::of(row.record.ssim_f).mean;
      }
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::Divergence) throw;
      row.failed = true;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ladder_csv(const std::vector<LadderRow>& rows) {
  std::string out = "configuration,flags,status,mean_psnr,mean_ssim\n";
  for (const auto& r : rows) {
    out += r.label + "," + r.flags.str() + "," + (r.failed ? "failed" : "ok") + ",";
    out += (r.failed ? std::string() : fmt(r.mean_psnr)) + ",";
    out += (r.failed ? std::string() : fmt(r.mean_ssim)) + "\n";
  }
  return out;
}

std::string ladder_table(const std::vector<LadderRow>& rows) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-24s %10s %10s\n", "Configuration", "PSNR", "SSIM");
  out += line;
  out += std::string(46, '-') + "\n";
  for (const auto& r : rows) {
    if (r.failed) {
      std::snprintf(line, sizeof(line), "%-24s %10s %10s\n", r.label.c_str(), "failed", "-");
    } else {
      std::snprintf(line, sizeof(line), "%-24s %10.2f %10.4f\n", r.label.c_str(), r.mean_psnr,
                    r.mean_ssim);
    }
    out += line;
  }
  return out;
}

}  // namespace iscl
