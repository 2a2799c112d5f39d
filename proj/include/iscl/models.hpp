#pragma once

#include <memory>
#include <string>
#include <vector>

#include "iscl/layers.hpp"

namespace iscl {

struct GeneratorConfig {
  int base_width = 32;
  int n_residual_blocks = 4;

  void validate() const {
    require(base_width >= 1, ErrorCategory::Argument, "generator: base_width must be >= 1");
    require(n_residual_blocks >= 0, ErrorCategory::Argument,
            "generator: n_residual_blocks must be >= 0");
  }
};

struct ExtractorConfig {
  int depth = 8;
  int width = 48;

  void validate() const {
    require(depth >= 3, ErrorCategory::Argument, "extractor: depth must be >= 3");
    require(width >= 1, ErrorCategory::Argument, "extractor: width must be >= 1");
  }
};

struct DiscriminatorConfig {
  int base_width = 32;
  int n_downsamples = 3;

  void validate() const {
    require(base_width >= 1, ErrorCategory::Argument, "discriminator: base_width must be >= 1");
    require(n_downsamples >= 1 && n_downsamples <= 4, ErrorCategory::Argument,
            "discriminator: n_downsamples must be in 1..4");
  }
};

// Residual encoder/decoder translator with a long skip connection:
// out = x + correction(x). Two stride-2 downsamples, residual body at 4x
// base width, nearest-neighbor upsampling with size-matching crops so any
// input of 16x16 or larger passes through.
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& cfg, RngStream& rng);

  Var forward(const Var& x, bool training);
  Tensor infer(const Tensor& x);  // inference mode, no graph

  const GeneratorConfig& config() const { return cfg_; }
  int64_t param_count() const;
  int receptive_field_radius() const;
  void visit_params(const ParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  void set_requires_grad(bool enabled);
  void clamp_constraints();
  void set_norm_momentum(float m);

 private:
  struct ConvNorm {
    Conv2dLayer conv;
    BatchInstanceNorm norm;
  };
  struct ResBlock {
    ConvNorm a, b;
  };

  GeneratorConfig cfg_;
  ConvNorm head_, down1_, down2_;
  std::vector<ResBlock> blocks_;
  ConvNorm up1_, up2_;
  Conv2dLayer tail_;
};

// DnCNN-style noise extractor: the output is the predicted noise residual,
// so the pseudo-clean image is x - H(x).
class Extractor {
 public:
  Extractor() = default;
  Extractor(const ExtractorConfig& cfg, RngStream& rng);

  Var forward(const Var& x, bool training);
  Tensor infer(const Tensor& x);

  const ExtractorConfig& config() const { return cfg_; }
  int64_t param_count() const;
  int receptive_field_radius() const { return cfg_.depth; }
  void visit_params(const ParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  void set_requires_grad(bool enabled);
  void clamp_constraints();
  void set_norm_momentum(float m);

 private:
  struct MidBlock {
    Conv2dLayer conv;
    BatchInstanceNorm norm;
  };
  ExtractorConfig cfg_;
  Conv2dLayer head_;
  std::vector<MidBlock> mid_;
  Conv2dLayer tail_;
};

// Strided patch critic; instance statistics only, so scores are per-sample
// pure functions and the hinge objective sees unbounded raw outputs.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& cfg, RngStream& rng);

  // Returns per-sample scores, shape (m): mean over the spatial score map.
  Var forward(const Var& x, bool training);

  const DiscriminatorConfig& config() const { return cfg_; }
  int64_t param_count() const;
  int receptive_field() const;
  void visit_params(const ParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  void set_requires_grad(bool enabled);
  void clamp_constraints() {}

 private:
  struct Stage {
    Conv2dLayer conv;
    bool has_norm = false;
    InstanceNormLayer norm;
  };
  DiscriminatorConfig cfg_;
  std::vector<Stage> stages_;
  Conv2dLayer tail_;
};

struct BundleConfig {
  GeneratorConfig generator;
  ExtractorConfig extractor;
  DiscriminatorConfig discriminator;
};

// The five live networks plus their shape-congruent averaged shadows.
// F/G shadows hold the SWA running average; H/DX/DY shadows hold Lookahead
// slow weights.
struct ModelBundle {
  BundleConfig config;
  Generator F, G;
  Extractor H;
  Discriminator DX, DY;
  Generator phi_F, phi_G;
  Extractor phi_H;
  Discriminator phi_DX, phi_DY;

  static ModelBundle create(const BundleConfig& cfg, RngStream& rng);

  // Deep copy; live and shadow parameters are duplicated, never shared.
  ModelBundle clone() const;

  // Flat named views "<net>/<layer>/<param>" over all ten networks.
  void visit_params(const ParamVisitor& fn) const;
  void visit_buffers(const BufferVisitor& fn);
  bool all_finite() const;
  uint64_t param_hash(const std::string& net_prefix) const;

  int deploy_receptive_field_radius() const;
};

// Exact scalar learnable count; shadows and running statistics excluded.
int64_t count_parameters(const Generator& g);
int64_t count_parameters(const Extractor& e);
int64_t count_parameters(const Discriminator& d);

// Copies parameters and buffers from src into dst; configs must match.
void copy_net(Generator& dst, const Generator& src);
void copy_net(Extractor& dst, const Extractor& src);
void copy_net(Discriminator& dst, const Discriminator& src);

}  // namespace iscl
