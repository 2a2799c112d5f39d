#pragma once

#include <array>
#include <filesystem>

#include "iscl/dataset.hpp"
#include "iscl/image.hpp"

namespace iscl {

enum class NoiseKind { Gaussian, Film, Charge };

const char* noise_kind_name(NoiseKind k);
NoiseKind parse_noise_kind(const std::string& name);

// Parametric synthetic degradation. amplitude = 0 is the exact identity for
// every kind; (spec, image) -> output is a pure function of the seed.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::Gaussian;
  float amplitude = 0.0f;
  float spatial_scale = 4.0f;  // correlation length in pixels; unused for gaussian
  float mean_shift = 0.0f;     // gaussian only
  float density = 0.004f;      // charge only: expected blobs per pixel
  uint64_t seed = 0;

  void validate() const;
};

ImageTensor apply_gaussian(const ImageTensor& img, const NoiseSpec& spec);
ImageTensor apply_film(const ImageTensor& img, const NoiseSpec& spec);
ImageTensor apply_charge(const ImageTensor& img, const NoiseSpec& spec);
ImageTensor apply_noise(const ImageTensor& img, const NoiseSpec& spec);

// Multiplicative film field: white noise low-pass filtered with a Gaussian
// kernel of std spatial_scale, affinely rescaled to [1-amplitude, 1+amplitude].
Tensor film_field(const NoiseSpec& spec, int64_t h, int64_t w);

// Additive charge field: Poisson(density*H*W) Gaussian bumps, centers
// uniform, widths in [scale/2, 2*scale], heights in [amplitude/2, amplitude].
struct ChargeField {
  Tensor field;
  int64_t n_blobs = 0;
};
ChargeField charge_field(const NoiseSpec& spec, int64_t h, int64_t w);

// Partitions the clean corpus into three disjoint sets (train-clean kept
// pristine, train-noisy degraded, validation degraded with references kept),
// writes images plus a manifest under out_dir and returns the split.
struct SynthesizeOptions {
  int noisy_bit_depth = 0;  // 0: keep each source image's bit depth
};
DatasetSplit synthesize_dataset(const std::filesystem::path& clean_dir, const NoiseSpec& spec,
                                const std::filesystem::path& out_dir,
                                const std::array<double, 3>& split_fractions,
                                const SynthesizeOptions& opts = {});

}  // namespace iscl
