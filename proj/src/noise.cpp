#include "iscl/noise.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace iscl {

const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Film: return "film";
    case NoiseKind::Charge: return "charge";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "gaussian") return NoiseKind::Gaussian;
  if (name == "film") return NoiseKind::Film;
  if (name == "charge") return NoiseKind::Charge;
  fail(ErrorCategory::Argument, "unknown noise kind: " + name);
}

void NoiseSpec::validate() const {
  require(amplitude >= 0.0f, ErrorCategory::Argument, "noise: amplitude must be >= 0");
  require(spatial_scale > 0.0f, ErrorCategory::Argument, "noise: spatial_scale must be > 0");
  if (kind == NoiseKind::Film)
    require(amplitude < 1.0f, ErrorCategory::Argument,
            "film noise: amplitude must be < 1 (field would be non-positive)");
  if (kind == NoiseKind::Charge)
    require(density >= 0.0f, ErrorCategory::Argument, "charge noise: density must be >= 0");
}

namespace {

ImageTensor noisy_like(const ImageTensor& img) {
  ImageTensor out = img;
  out.domain = Domain::NoisyX;
  return out;
}

// Separable Gaussian blur with reflect boundary, double accumulation.
Tensor gaussian_blur(const Tensor& in, double sigma) {
  int64_t h = in.dim(0), w = in.dim(1);
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    ksum += v;
  }
  for (auto& v : kernel) v /= ksum;

  auto reflect = [](int64_t i, int64_t n) {
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };

  Tensor tmp({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += kernel[static_cast<size_t>(t + radius)] * in[i * w + reflect(j + t, w)];
      tmp[i * w + j] = static_cast<float>(acc);
    }
  Tensor out({h, w});
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t)
        acc += kernel[static_cast<size_t>(t + radius)] * tmp[reflect(i + t, h) * w + j];
      out[i * w + j] = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

ImageTensor apply_gaussian(const ImageTensor& img, const NoiseSpec& spec) {
  require(spec.kind == NoiseKind::Gaussian, ErrorCategory::Argument,
          "apply_gaussian: spec kind mismatch");
  spec.validate();
  ImageTensor out = noisy_like(img);
  if (spec.amplitude == 0.0f && spec.mean_shift == 0.0f) return out;
  RngStream rng = RngStream::derive(spec.seed, "noise.gaussian");
  float* p = out.pixels.data();
  for (int64_t i = 0; i < out.pixels.numel(); ++i)
    p[i] += spec.mean_shift + spec.amplitude * static_cast<float>(rng.normal());
  return out;
}

Tensor film_field(const NoiseSpec& spec, int64_t h, int64_t w) {
  spec.validate();
  Tensor field({h, w});
  if (spec.amplitude == 0.0f) {
    field.fill(1.0f);
    return field;
  }
  RngStream rng = RngStream::derive(spec.seed, "noise.film");
  Tensor white = Tensor::randn({h, w}, rng);
  Tensor smooth = gaussian_blur(white, spec.spatial_scale);
  float lo = smooth.min(), hi = smooth.max();
  if (hi <= lo) {
    field.fill(1.0f);
    return field;
  }
  float a = spec.amplitude;
  float scale = 2.0f * a / (hi - lo);
  for (int64_t i = 0; i < field.numel(); ++i)
    field[i] = (1.0f - a) + scale * (smooth[i] - lo);
  return field;
}

ImageTensor apply_film(const ImageTensor& img, const NoiseSpec& spec) {
  require(spec.kind == NoiseKind::Film, ErrorCategory::Argument, "apply_film: spec kind mismatch");
  spec.validate();
  ImageTensor out = noisy_like(img);
  if (spec.amplitude == 0.0f) return out;
  Tensor f = film_field(spec, img.height(), img.width());
  float* p = out.pixels.data();
  for (int64_t i = 0; i < out.pixels.numel(); ++i) p[i] *= f[i];
  return out;
}

ChargeField charge_field(const NoiseSpec& spec, int64_t h, int64_t w) {
  spec.validate();
  ChargeField out;
  out.field = Tensor({h, w});
  if (spec.amplitude == 0.0f) return out;
  RngStream rng = RngStream::derive(spec.seed, "noise.charge");
  double lambda = static_cast<double>(spec.density) * static_cast<double>(h) * static_cast<double>(w);
  out.n_blobs = rng.poisson(lambda);
  for (int64_t b = 0; b < out.n_blobs; ++b) {
    double cx = rng.uniform(0.0, static_cast<double>(w));
    double cy = rng.uniform(0.0, static_cast<double>(h));
    double s = rng.uniform(spec.spatial_scale * 0.5, spec.spatial_scale * 2.0);
    double amp = rng.uniform(spec.amplitude * 0.5, spec.amplitude);
    int64_t r = static_cast<int64_t>(std::ceil(5.0 * s));
    int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy)) - r);
    int64_t i1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(cy)) + r);
    int64_t j0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx)) - r);
    int64_t j1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(cx)) + r);
    double inv2s2 = 1.0 / (2.0 * s * s);
    for (int64_t i = i0; i <= i1; ++i) {
      double dy = i - cy;
      for (int64_t j = j0; j <= j1; ++j) {
        double dx = j - cx;
        out.field[i * w + j] +=
            static_cast<float>(amp * std::exp(-(dx * dx + dy * dy) * inv2s2));
      }
    }
  }
  return out;
}

ImageTensor apply_charge(const ImageTensor& img, const NoiseSpec& spec) {
  require(spec.kind == NoiseKind::Charge, ErrorCategory::Argument,
          "apply_charge: spec kind mismatch");
  spec.validate();
  ImageTensor out = noisy_like(img);
  if (spec.amplitude == 0.0f) return out;
  ChargeField f = charge_field(spec, img.height(), img.width());
  float* p = out.pixels.data();
  for (int64_t i = 0; i < out.pixels.numel(); ++i) p[i] += f.field[i];
  return out;
}

ImageTensor apply_noise(const ImageTensor& img, const NoiseSpec& spec) {
  switch (spec.kind) {
    case NoiseKind::Gaussian: return apply_gaussian(img, spec);
    case NoiseKind::Film: return apply_film(img, spec);
    case NoiseKind::Charge: return apply_charge(img, spec);
  }
  fail(ErrorCategory::Argument, "apply_noise: unknown kind");
}

DatasetSplit synthesize_dataset(const std::filesystem::path& clean_dir, const NoiseSpec& spec,
                                const std::filesystem::path& out_dir,
                                const std::array<double, 3>& fractions,
                                const SynthesizeOptions& opts) {
  spec.validate();
  double fsum = fractions[0] + fractions[1] + fractions[2];
  require(std::fabs(fsum - 1.0) < 1e-9, ErrorCategory::Argument,
          "synthesize: split fractions must sum to 1");
  for (double f : fractions)
    require(f >= 0.0, ErrorCategory::Argument, "synthesize: negative fraction");

  std::vector<std::filesystem::path> sources;
  require(std::filesystem::is_directory(clean_dir), ErrorCategory::Io,
          "synthesize: not a directory: " + clean_dir.string());
  for (const auto& e : std::filesystem::directory_iterator(clean_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".tif" || ext == ".tiff") sources.push_back(e.path());
  }
  require(!sources.empty(), ErrorCategory::Dataset,
          "synthesize: no PNG/TIFF images in " + clean_dir.string());
  std::sort(sources.begin(), sources.end());

  // Deterministic shuffle, then largest-remainder partition into A/B/C.
  RngStream shuffle_rng = RngStream::derive(spec.seed, "synthesize.shuffle");
  for (size_t i = sources.size(); i > 1; --i)
    std::swap(sources[i - 1], sources[shuffle_rng.uniform_index(i)]);

  size_t n = sources.size();
  std::array<size_t, 3> counts{};
  std::array<double, 3> remainders{};
  size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = fractions[static_cast<size_t>(i)] * static_cast<double>(n);
    counts[static_cast<size_t>(i)] = static_cast<size_t>(std::floor(exact + 1e-9));
    remainders[static_cast<size_t>(i)] = exact - std::floor(exact + 1e-9);
    assigned += counts[static_cast<size_t>(i)];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[static_cast<size_t>(i)] > remainders[static_cast<size_t>(best)]) best = i;
    ++counts[static_cast<size_t>(best)];
    remainders[static_cast<size_t>(best)] = -1.0;
    ++assigned;
  }

  DatasetSplit split;
  split.root = out_dir;
  std::filesystem::create_directories(out_dir);

  auto emit = [&](const std::filesystem::path& src, const std::string& subdir, bool degrade,
                  uint64_t image_index, std::vector<std::string>* list) {
    ImageTensor img = load_image(src, 0.0f, 1.0f, degrade ? Domain::NoisyX : Domain::CleanY);
    int bit_depth = img.bit_depth;
    if (degrade) {
      NoiseSpec per_image = spec;
      per_image.seed = hash_combine(hash_combine(hash_str("synthesize.image"), spec.seed),
                                    image_index);
      img = apply_noise(img, per_image);
      if (opts.noisy_bit_depth != 0) bit_depth = opts.noisy_bit_depth;
    }
    std::string rel = subdir + "/" + src.stem().string() + ".png";
    save_image(img, out_dir / rel, bit_depth);
    list->push_back(rel);
  };

  size_t idx = 0;
  for (size_t i = 0; i < counts[0]; ++i, ++idx)
    emit(sources[idx], "clean", false, idx, &split.clean_group);
  for (size_t i = 0; i < counts[1]; ++i, ++idx)
    emit(sources[idx], "noisy", true, idx, &split.noisy_group);
  for (size_t i = 0; i < counts[2]; ++i, ++idx) {
    emit(sources[idx], "val_noisy", true, idx, &split.val_noisy);
    emit(sources[idx], "val_clean", false, idx, &split.val_clean_ref);
  }

  save_manifest(split, out_dir / "manifest.txt");
  return split;
}

}  // namespace iscl
