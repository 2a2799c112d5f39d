#pragma once

#include <filesystem>
#include <string>

#include "iscl/tensor.hpp"

namespace iscl {

// Domain tag of an image: noisy observations, clean references, or noise
// residuals. Noise-domain tensors may be negative and are exempt from the
// declared-range invariant.
enum class Domain { NoisyX, CleanY, NoiseN };

const char* domain_name(Domain d);

struct ImageTensor {
  Tensor pixels;  // (H, W), single channel
  Domain domain = Domain::CleanY;
  float range_lo = 0.0f;
  float range_hi = 1.0f;
  int bit_depth = 8;  // bit depth of the source file, if loaded

  int64_t height() const { return pixels.dim(0); }
  int64_t width() const { return pixels.dim(1); }

  // Range/finite invariant check (noise domain skips the range bound).
  void validate() const;
};

// Loads an 8- or 16-bit single-channel PNG/TIFF and linearly maps raw values
// onto [range_lo, range_hi]. Multi-channel or unsupported depths raise
// unsupported-format errors; unreadable paths raise I/O errors.
ImageTensor load_image(const std::filesystem::path& path, float range_lo = 0.0f,
                       float range_hi = 1.0f, Domain domain = Domain::CleanY);

// Clips to the declared range, quantizes round-half-up at the requested bit
// depth (8 or 16) and writes PNG or TIFF according to the file extension.
void save_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth);

}  // namespace iscl
