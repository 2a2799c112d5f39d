#include "iscl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace iscl {

void DatasetSplit::validate() const {
  std::set<std::string> clean(clean_group.begin(), clean_group.end());
  std::set<std::string> noisy(noisy_group.begin(), noisy_group.end());
  for (const auto& id : noisy_group)
    require(!clean.count(id), ErrorCategory::Dataset,
            "split: clean and noisy groups overlap on " + id);
  for (const auto& id : val_noisy) {
    require(!clean.count(id) && !noisy.count(id), ErrorCategory::Dataset,
            "split: validation id overlaps a training group: " + id);
  }
  for (const auto& id : val_clean_ref) {
    require(!clean.count(id) && !noisy.count(id), ErrorCategory::Dataset,
            "split: validation reference overlaps a training group: " + id);
  }
  require(val_clean_ref.empty() || val_clean_ref.size() == val_noisy.size(),
          ErrorCategory::Dataset, "split: val_clean list must match val_noisy length");
}

namespace {

const char* kSections[] = {"[clean]", "[noisy]", "[val_noisy]", "[val_clean]"};

std::string trimmed(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

DatasetSplit load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  require(in.good(), ErrorCategory::Io, "manifest: cannot open " + manifest_path.string());
  DatasetSplit split;
  split.root = manifest_path.has_parent_path() ? manifest_path.parent_path()
                                               : std::filesystem::path(".");
  std::vector<std::string>* current = nullptr;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t == kSections[0]) current = &split.clean_group;
      else if (t == kSections[1]) current = &split.noisy_group;
      else if (t == kSections[2]) current = &split.val_noisy;
      else if (t == kSections[3]) current = &split.val_clean_ref;
      else fail(ErrorCategory::UnsupportedFormat, "manifest: unknown section " + t);
      continue;
    }
    require(current != nullptr, ErrorCategory::UnsupportedFormat,
            "manifest: entry before any section header: " + t);
    current->push_back(t);
  }
  split.validate();
  return split;
}

void save_manifest(const DatasetSplit& split, const std::filesystem::path& manifest_path) {
  split.validate();
  if (manifest_path.has_parent_path())
    std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path);
  require(out.good(), ErrorCategory::Io, "manifest: cannot write " + manifest_path.string());
  const std::vector<std::string>* lists[] = {&split.clean_group, &split.noisy_group,
                                             &split.val_noisy, &split.val_clean_ref};
  for (int s = 0; s < 4; ++s) {
    out << kSections[s] << "\n";
    for (const auto& id : *lists[s]) out << id << "\n";
  }
  require(out.good(), ErrorCategory::Io, "manifest: write failed " + manifest_path.string());
}

void PatchBatch::validate() const {
  require(data.rank() == 4, ErrorCategory::Shape, "PatchBatch: data must be 4-D");
  require(data.dim(1) == 1, ErrorCategory::Shape, "PatchBatch: single channel only");
  require(data.dim(2) == kPatchSide && data.dim(3) == kPatchSide, ErrorCategory::Shape,
          "PatchBatch: patch side must be exactly 64");
  require(static_cast<int64_t>(source_ids.size()) == data.dim(0), ErrorCategory::Shape,
          "PatchBatch: source_ids length mismatch");
}

Tensor dihedral_transform(const Tensor& img, int transform_id) {
  require(transform_id >= 0 && transform_id <= 7, ErrorCategory::Argument,
          "dihedral_transform: id must be in 0..7");
  require(img.rank() == 2, ErrorCategory::Shape, "dihedral_transform: expects 2-D");
  int64_t h = img.dim(0), w = img.dim(1);
  int rot = transform_id & 3;
  bool flip = transform_id >= 4;

  Tensor cur = img;
  int64_t ch = h, cw = w;
  if (flip) {
    Tensor t({ch, cw});
    for (int64_t i = 0; i < ch; ++i)
      for (int64_t j = 0; j < cw; ++j) t[i * cw + j] = cur[i * cw + (cw - 1 - j)];
    cur = std::move(t);
  }
  for (int r = 0; r < rot; ++r) {
    // 90 deg counter-clockwise: out(i,j) = in(j, W-1-i), out is (W,H)
    Tensor t({cw, ch});
    for (int64_t i = 0; i < cw; ++i)
      for (int64_t j = 0; j < ch; ++j) t[i * ch + j] = cur[j * cw + (cw - 1 - i)];
    cur = std::move(t);
    std::swap(ch, cw);
  }
  return cur;
}

PatchBatch dihedral_augment(const PatchBatch& batch, int transform_id) {
  require(transform_id >= 0 && transform_id <= 7, ErrorCategory::Argument,
          "dihedral_augment: id must be in 0..7");
  batch.validate();
  PatchBatch out;
  out.domain = batch.domain;
  out.source_ids = batch.source_ids;
  out.data = Tensor(batch.data.shape());
  int64_t m = batch.data.dim(0);
  int64_t hw = kPatchSide * kPatchSide;
  for (int64_t i = 0; i < m; ++i) {
    Tensor patch = Tensor::from({kPatchSide, kPatchSide},
                                std::vector<float>(batch.data.data() + i * hw,
                                                   batch.data.data() + (i + 1) * hw));
    Tensor t = dihedral_transform(patch, transform_id);
    std::copy(t.data(), t.data() + hw, out.data.data() + i * hw);
  }
  return out;
}

const ImageTensor& ImageCache::get(const std::string& id, Domain domain) const {
  auto it = images_.find(id);
  if (it == images_.end()) {
    ImageTensor img = load_image(root_ / id, 0.0f, 1.0f, domain);
    it = images_.emplace(id, std::move(img)).first;
  }
  return it->second;
}

void ImageCache::put(const std::string& id, ImageTensor img) {
  images_[id] = std::move(img);
}

void ImageCache::preload(const std::vector<std::string>& ids, Domain domain) const {
  for (const auto& id : ids) get(id, domain);
}

namespace {

// Draws one 64x64 patch; offset uniform over valid positions, optional
// probability-0.5 dihedral augmentation.
void draw_patch(const ImageTensor& img, const std::string& id, RngStream& rng,
                const SamplerOptions& opts, float* dst, std::string* dst_id) {
  int64_t h = img.height(), w = img.width();
  require(h >= kPatchSide && w >= kPatchSide, ErrorCategory::Dataset,
          "sampler: image smaller than 64x64: " + id);
  int64_t oy = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(h - kPatchSide + 1)));
  int64_t ox = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(w - kPatchSide + 1)));
  Tensor patch({kPatchSide, kPatchSide});
  for (int64_t i = 0; i < kPatchSide; ++i)
    for (int64_t j = 0; j < kPatchSide; ++j)
      patch[i * kPatchSide + j] = img.pixels[(oy + i) * w + (ox + j)];
  if (opts.augment && rng.uniform() < 0.5) {
    int id8 = static_cast<int>(rng.uniform_index(8));
    patch = dihedral_transform(patch, id8);
  }
  std::copy(patch.data(), patch.data() + kPatchSide * kPatchSide, dst);
  *dst_id = id;
}

}  // namespace

PatchBatch sample_batch(const ImageCache& cache, const std::vector<std::string>& group,
                        Domain domain, int64_t m, RngStream& rng, const SamplerOptions& opts) {
  require(!group.empty(), ErrorCategory::Dataset, "sampler: empty image group");
  require(m >= 1, ErrorCategory::Argument, "sampler: batch size must be >= 1");
  PatchBatch batch;
  batch.domain = domain;
  batch.data = Tensor({m, 1, kPatchSide, kPatchSide});
  batch.source_ids.resize(static_cast<size_t>(m));
  int64_t hw = kPatchSide * kPatchSide;
  for (int64_t i = 0; i < m; ++i) {
    const std::string& id = group[rng.uniform_index(group.size())];
    draw_patch(cache.get(id, domain), id, rng, opts, batch.data.data() + i * hw,
               &batch.source_ids[static_cast<size_t>(i)]);
  }
  return batch;
}

UnpairedBatch sample_unpaired_batch(const ImageCache& cache, const DatasetSplit& split,
                                    int64_t m, RngStream& rng, const SamplerOptions& opts) {
  require(!split.noisy_group.empty() && !split.clean_group.empty(), ErrorCategory::Dataset,
          "sampler: both clean and noisy groups must be non-empty");
  UnpairedBatch out;
  out.x = sample_batch(cache, split.noisy_group, Domain::NoisyX, m, rng, opts);
  out.y = sample_batch(cache, split.clean_group, Domain::CleanY, m, rng, opts);
  return out;
}

}  // namespace iscl
