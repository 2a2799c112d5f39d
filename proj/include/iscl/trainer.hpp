#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "iscl/dataset.hpp"
#include "iscl/losses.hpp"
#include "iscl/metrics.hpp"
#include "iscl/models.hpp"
#include "iscl/optim.hpp"

namespace iscl {

// Cumulative ablation ladder. The base adversarial cycle setup is always on;
// B enables the extractor and its pseudo-noise training, C the bypass
// consistency, D the discriminator boosting, E the noise consistency.
struct AblationFlags {
  bool b = false, c = false, d = false, e = false;

  static AblationFlags parse(const std::string& s);
  static AblationFlags full() { return {true, true, true, true}; }
  std::string str() const;
  void validate() const;  // C, D, E each require B
  bool operator==(const AblationFlags&) const = default;
};

struct TrainConfig {
  double lambda = 30.0;
  double gamma = 0.5;
  int64_t batch = 8;
  int64_t patch = kPatchSide;  // fixed at 64
  int64_t n_epoch = 30;
  int64_t n_iter = 100;
  int64_t n_swa = -1;   // -1: ceil(n_epoch / 2)
  int64_t cycle = -1;   // -1: n_iter (one SWA snapshot per epoch)
  int64_t lookahead_k = 5;
  double lookahead_alpha = 0.5;
  uint64_t seed = 0;
  AblationFlags flags = AblationFlags::full();
  int64_t early_stop_patience = 10;
  int64_t log_every = 10;
  bool augment = true;
  OptimizerSpec optim;
  BundleConfig model;
  double divergence_threshold = 1e4;
  int64_t divergence_patience = 10;

  int64_t swa_start() const { return n_swa >= 0 ? n_swa : (n_epoch + 1) / 2; }
  int64_t cycle_length() const { return cycle >= 1 ? cycle : std::max<int64_t>(1, n_iter); }
  int64_t total_steps() const { return n_epoch * n_iter; }
  void validate() const;
};

struct LogRow {
  int64_t epoch = 0;
  int64_t iteration = 0;  // 1-based within the epoch
  LossBreakdown losses;
  std::optional<double> val_psnr_f, val_psnr_h, val_psnr_ens, val_ssim_ens;
  double lr = 0.0;
};

struct MetricsLog {
  std::vector<LogRow> rows;

  static const std::vector<std::string>& columns();
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Owns the five networks, their shadows, the three optimizers and the
// averaging bookkeeping; executes the per-iteration update ordering.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // One batch through the three sequential updates (generators, then
  // discriminators, then the extractor) plus the averaging hooks. Throws a
  // divergence error once losses stay non-finite/oversized for the
  // configured number of consecutive iterations.
  LogRow train_iteration(const PatchBatch& batch_x, const PatchBatch& batch_y);

  MetricsRecord validate(const ImageCache& cache, const DatasetSplit& split);

  void save_checkpoint(const std::filesystem::path& path, const MetricsLog& log,
                       const ModelBundle* best, int64_t best_epoch, double best_metric,
                       int64_t epochs_since_best) const;
  struct Resumed {
    std::unique_ptr<Trainer> trainer;
    MetricsLog log;
    std::unique_ptr<ModelBundle> best;
    int64_t best_epoch = -1;
    double best_metric = 0.0;
    int64_t epochs_since_best = 0;
  };
  static Resumed load_checkpoint(const std::filesystem::path& path);

  const TrainConfig& config() const { return cfg_; }
  ModelBundle& bundle() { return bundle_; }
  const ModelBundle& bundle() const { return bundle_; }
  const AveragingState& averaging() const { return avg_; }
  int64_t epoch() const { return epoch_; }
  void begin_epoch(int64_t e) { epoch_ = e; iter_in_epoch_ = 0; }
  int64_t global_step() const { return global_step_; }
  double current_lr() const;

  // Refreshes phi_F/phi_G normalization statistics with one cumulative pass
  // over the training groups (applied to the returned bundle after SWA).
  void recompute_shadow_norm_stats(const ImageCache& cache, const DatasetSplit& split);

 private:
  void generator_step(const Var& x, const Var& y, LossBreakdown& bd, std::optional<Tensor>& h_x);
  void discriminator_step(const Var& x, const Var& y, std::optional<Tensor>& h_x,
                          Tensor& f_x_out, Tensor& g_y_out, LossBreakdown& bd);
  void extractor_step(const Var& x, const Var& y, const Tensor& f_x, const Tensor& g_y,
                      LossBreakdown& bd);
  void freeze_all(bool frozen);

  TrainConfig cfg_;
  ModelBundle bundle_;
  RAdam opt_gen_, opt_disc_, opt_ext_;
  AveragingState avg_;
  int64_t epoch_ = 0;
  int64_t iter_in_epoch_ = 0;  // 1-based once inside an epoch
  int64_t global_step_ = 0;    // completed iterations
  int64_t divergence_streak_ = 0;

  friend struct TrainerTestPeer;
};

struct FitOptions {
  std::filesystem::path out_dir;  // when set: checkpoint.iscl + metrics.csv per epoch
  // Test seam: overrides the early-stopping metric (default: mean ensemble
  // validation PSNR).
  std::function<double(const MetricsRecord&)> val_metric_override;
  std::function<void(int64_t, const MetricsRecord&)> on_epoch;
  std::filesystem::path resume_from;  // continue a checkpointed run
};

struct FitResult {
  std::unique_ptr<ModelBundle> bundle;  // best validation epoch (or final)
  MetricsLog log;
  int64_t best_epoch = -1;
  double best_metric = 0.0;
  bool early_stopped = false;
  bool diverged = false;
  int64_t epochs_run = 0;
  MetricsRecord best_record;
};

FitResult fit(const TrainConfig& cfg, const DatasetSplit& split, const ImageCache& cache,
              const FitOptions& opts = {});

// After SWA, the averaged generators carry averaged normalization buffers;
// this replaces them with statistics from one cumulative pass over the
// training groups (noisy for the denoiser shadow, clean for the noiser).
void recompute_generator_stats(ModelBundle& bundle, const TrainConfig& cfg,
                               const ImageCache& cache, const DatasetSplit& split);

// Deployment checkpoints hold one bundle (no optimizer state). The loader
// also accepts training checkpoints, preferring their best-epoch snapshot.
void save_deploy_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_deploy_bundle(const std::filesystem::path& path);

}  // namespace iscl
