#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "iscl/image.hpp"
#include "iscl/rng.hpp"
#include "iscl/tensor.hpp"

namespace iscl {

inline constexpr int kPatchSide = 64;

// Unpaired split: image identifiers are manifest-relative paths. Training
// groups must be disjoint by source identity, and validation ids disjoint
// from both.
struct DatasetSplit {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::vector<std::string> clean_group;
  std::vector<std::string> noisy_group;
  std::vector<std::string> val_noisy;
  std::vector<std::string> val_clean_ref;  // optional, synthetic data only

  bool has_references() const {
    return !val_clean_ref.empty() && val_clean_ref.size() == val_noisy.size();
  }
  void validate() const;
};

// Manifest: UTF-8 text, one relative path per line under section headers
// [clean], [noisy], [val_noisy], [val_clean].
DatasetSplit load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const DatasetSplit& split, const std::filesystem::path& manifest_path);

struct PatchBatch {
  Tensor data;  // (m, 1, 64, 64)
  Domain domain = Domain::NoisyX;
  std::vector<std::string> source_ids;

  int64_t size() const { return data.defined() ? data.dim(0) : 0; }
  void validate() const;
};

// Dihedral group of the square: ids 0..3 are CCW rotations by 90*id, ids
// 4..7 add a horizontal flip before the rotation.
Tensor dihedral_transform(const Tensor& img2d, int transform_id);
PatchBatch dihedral_augment(const PatchBatch& batch, int transform_id);

// All images resident in memory; desk-scale corpora are tiny.
class ImageCache {
 public:
  ImageCache() = default;
  explicit ImageCache(std::filesystem::path root) : root_(std::move(root)) {}

  const ImageTensor& get(const std::string& id, Domain domain) const;
  void put(const std::string& id, ImageTensor img);
  void preload(const std::vector<std::string>& ids, Domain domain) const;

 private:
  std::filesystem::path root_;
  mutable std::map<std::string, ImageTensor> images_;
};

struct SamplerOptions {
  bool augment = false;  // probability-0.5 dihedral augmentation per patch
};

struct UnpairedBatch {
  PatchBatch x;  // noisy
  PatchBatch y;  // clean
};

// Draws m noisy patches and m independent clean patches, locations uniform
// over valid offsets. Pure function of (split contents, m, rng state): the
// trainer derives one stream per (seed, epoch, iteration), which makes the
// batch sequence independent of worker layout.
UnpairedBatch sample_unpaired_batch(const ImageCache& cache, const DatasetSplit& split,
                                    int64_t m, RngStream& rng,
                                    const SamplerOptions& opts = {});

// Single-group variant used by batch-statistics recomputation.
PatchBatch sample_batch(const ImageCache& cache, const std::vector<std::string>& group,
                        Domain domain, int64_t m, RngStream& rng, const SamplerOptions& opts = {});

}  // namespace iscl
