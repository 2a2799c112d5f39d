#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iscl/noise.hpp"
#include "iscl/trainer.hpp"

namespace iscl {

// Top-level run configuration: one JSON document with per-command sections.
// Unknown keys anywhere are rejected; every run writes its fully resolved
// form (defaults expanded) beside its outputs.
struct RunConfig {
  uint64_t seed = 0;

  // [data]
  std::filesystem::path manifest;

  // [noise]
  NoiseSpec noise;
  std::filesystem::path clean_dir;
  std::array<double, 3> fractions = {0.45, 0.45, 0.10};
  int noisy_bit_depth = 0;

  // [train]
  TrainConfig train;

  // [eval]
  std::vector<double> gamma_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  bool ladder = false;

  // [io]
  std::filesystem::path out_dir;
  std::filesystem::path checkpoint;

  static RunConfig from_json_text(const std::string& text,
                                  const std::filesystem::path& base_dir);
  static RunConfig from_file(const std::filesystem::path& path);
  std::string resolved_json() const;
  void write_resolved(const std::filesystem::path& path) const;

  // The single seed fans out into named substreams so overriding one stage
  // never perturbs the others.
  uint64_t noise_seed() const { return hash_combine(hash_str("noise"), seed); }
};

}  // namespace iscl
