#include "support/toy.hpp"

#include <cmath>
#include <cstdio>

#include "iscl/image.hpp"

namespace iscl::testing {

Tensor toy_clean_image(uint64_t seed, int64_t h, int64_t w) {
  RngStream rng = RngStream::derive(seed, "toy_image");
  Tensor img({h, w});

  // smooth background: a few low-frequency cosines
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  int n_waves = 3;
  for (int k = 0; k < n_waves; ++k) {
    waves.push_back({rng.uniform(0.5, 2.0) / static_cast<double>(w),
                     rng.uniform(0.5, 2.0) / static_cast<double>(h), rng.uniform(0.0, 6.2831),
                     rng.uniform(0.05, 0.12)});
  }
  double base = rng.uniform(0.35, 0.55);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double v = base;
      for (const auto& wv : waves)
        v += wv.amp * std::cos(6.2831 * (wv.fx * j + wv.fy * i) + wv.phase);
      img[i * w + j] = static_cast<float>(v);
    }

  // soft-edged ellipses
  int n_shapes = 2 + static_cast<int>(rng.uniform_index(3));
  for (int s = 0; s < n_shapes; ++s) {
    double cx = rng.uniform(0.15, 0.85) * static_cast<double>(w);
    double cy = rng.uniform(0.15, 0.85) * static_cast<double>(h);
    double rx = rng.uniform(0.12, 0.35) * static_cast<double>(w);
    double ry = rng.uniform(0.12, 0.35) * static_cast<double>(h);
    double ang = rng.uniform(0.0, 3.1416);
    double delta = rng.uniform(-0.28, 0.28);
    double edge = rng.uniform(1.5, 4.0);
    double ca = std::cos(ang), sa = std::sin(ang);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double dx = j - cx, dy = i - cy;
        double u = (ca * dx + sa * dy) / rx;
        double v = (-sa * dx + ca * dy) / ry;
        double r = std::sqrt(u * u + v * v);
        double m = 1.0 / (1.0 + std::exp((r - 1.0) * edge * 8.0));
        img[i * w + j] += static_cast<float>(delta * m);
      }
  }

  // squash into (0.04, 0.96)
  for (int64_t i = 0; i < img.numel(); ++i) {
    double v = img[i];
    v = 0.04 + 0.92 / (1.0 + std::exp(-(v - 0.5) * 3.2));
    img[i] = static_cast<float>(v);
  }
  return img;
}

void write_toy_corpus(const std::filesystem::path& dir, int n, int64_t h, int64_t w,
                      uint64_t seed) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < n; ++i) {
    ImageTensor img;
    img.pixels = toy_clean_image(hash_combine(seed, static_cast<uint64_t>(i)), h, w);
    img.domain = Domain::CleanY;
    char name[64];
    std::snprintf(name, sizeof(name), "clean_%04d.png", i);
    save_image(img, dir / name, 8);
  }
}

TrainConfig tiny_train_config(uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.batch = 2;
  cfg.n_epoch = 2;
  cfg.n_iter = 4;
  cfg.lookahead_k = 3;
  cfg.log_every = 2;
  cfg.early_stop_patience = 100;
  cfg.model.generator = {4, 1};
  cfg.model.extractor = {3, 4};
  cfg.model.discriminator = {4, 2};
  return cfg;
}

DatasetSplit tiny_dataset(const std::filesystem::path& dir, int n_clean, int n_noisy, int n_val,
                          uint64_t seed) {
  std::filesystem::path src = dir / "sources";
  int total = n_clean + n_noisy + n_val;
  write_toy_corpus(src, total, 64, 64, seed);
  NoiseSpec spec;
  spec.kind = NoiseKind::Charge;
  spec.amplitude = 0.6f;
  spec.spatial_scale = 3.0f;
  spec.density = 0.004f;
  spec.seed = hash_combine(seed, 0x6e6f697365ull);
  double t = total;
  return synthesize_dataset(src, spec, dir / "data", {n_clean / t, n_noisy / t, n_val / t});
}

std::filesystem::path fresh_temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("iscl_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace iscl::testing
