#include "iscl/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace iscl {

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::NoisyX: return "noisy_x";
    case Domain::CleanY: return "clean_y";
    case Domain::NoiseN: return "noise_n";
  }
  return "?";
}

void ImageTensor::validate() const {
  require(pixels.rank() == 2, ErrorCategory::Shape, "ImageTensor: pixels must be 2-D");
  require(range_hi > range_lo, ErrorCategory::Argument, "ImageTensor: empty range");
  for (int64_t i = 0; i < pixels.numel(); ++i) {
    float v = pixels[i];
    require(std::isfinite(v), ErrorCategory::Argument, "ImageTensor: non-finite pixel");
    if (domain != Domain::NoiseN)
      require(v >= range_lo - 1e-6f && v <= range_hi + 1e-6f, ErrorCategory::Argument,
              "ImageTensor: pixel outside declared range");
  }
}

namespace {

bool has_supported_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path, float range_lo, float range_hi,
                       Domain domain) {
  require(range_hi > range_lo, ErrorCategory::Argument, "load_image: empty range");
  require(std::filesystem::exists(path), ErrorCategory::Io,
          "load_image: no such file: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!m.empty(), ErrorCategory::Io, "load_image: unreadable file: " + path.string());
  require(m.channels() == 1, ErrorCategory::UnsupportedFormat,
          "load_image: expected single-channel image, got " + std::to_string(m.channels()) +
              " channels: " + path.string());

  int depth = m.depth();
  require(depth == CV_8U || depth == CV_16U, ErrorCategory::UnsupportedFormat,
          "load_image: only 8-bit and 16-bit rasters are supported: " + path.string());
  float maxv = depth == CV_8U ? 255.0f : 65535.0f;

  ImageTensor out;
  out.domain = domain;
  out.range_lo = range_lo;
  out.range_hi = range_hi;
  out.bit_depth = depth == CV_8U ? 8 : 16;
  out.pixels = Tensor({m.rows, m.cols});
  float* dst = out.pixels.data();
  float span = range_hi - range_lo;
  for (int i = 0; i < m.rows; ++i) {
    if (depth == CV_8U) {
      const uint8_t* row = m.ptr<uint8_t>(i);
      for (int j = 0; j < m.cols; ++j) dst[i * m.cols + j] = range_lo + span * (row[j] / maxv);
    } else {
      const uint16_t* row = m.ptr<uint16_t>(i);
      for (int j = 0; j < m.cols; ++j) dst[i * m.cols + j] = range_lo + span * (row[j] / maxv);
    }
  }
  return out;
}

void save_image(const ImageTensor& img, const std::filesystem::path& path, int bit_depth) {
  require(bit_depth == 8 || bit_depth == 16, ErrorCategory::Argument,
          "save_image: bit depth must be 8 or 16");
  require(img.pixels.rank() == 2, ErrorCategory::Shape, "save_image: pixels must be 2-D");
  require(img.pixels.all_finite(), ErrorCategory::Argument, "save_image: non-finite pixels");
  require(has_supported_extension(path), ErrorCategory::UnsupportedFormat,
          "save_image: unsupported extension (use .png/.tif/.tiff): " + path.string());

  int rows = static_cast<int>(img.height());
  int cols = static_cast<int>(img.width());
  float lo = img.range_lo, hi = img.range_hi;
  float span = hi - lo;
  double maxv = bit_depth == 8 ? 255.0 : 65535.0;

  cv::Mat m(rows, cols, bit_depth == 8 ? CV_8UC1 : CV_16UC1);
  const float* src = img.pixels.data();
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      float v = src[i * cols + j];
      v = std::min(hi, std::max(lo, v));
      double norm = (v - lo) / span;
      // round-half-up quantization
      auto q = static_cast<uint32_t>(std::floor(norm * maxv + 0.5));
      if (bit_depth == 8)
        m.at<uint8_t>(i, j) = static_cast<uint8_t>(std::min<uint32_t>(q, 255));
      else
        m.at<uint16_t>(i, j) = static_cast<uint16_t>(std::min<uint32_t>(q, 65535));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    fail(ErrorCategory::Io, "save_image: " + std::string(e.what()));
  }
  require(ok, ErrorCategory::Io, "save_image: cannot write " + path.string());
}

}  // namespace iscl
