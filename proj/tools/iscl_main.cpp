// Command-line entry points: synthesize | train | denoise | evaluate | ablate.
// Every command is a pure function of (config, input files, seed); reruns in
// deterministic mode produce identical outputs.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "iscl/config.hpp"
#include "iscl/eval.hpp"
#include "iscl/noise.hpp"
#include "iscl/trainer.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using namespace iscl;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitDivergence = 2;
constexpr int kExitMissingCheckpoint = 3;
constexpr int kExitMissingReferences = 4;

void apply_deterministic_env() {
  const char* v = std::getenv("ISCL_DETERMINISTIC");
  if (v && std::string(v) == "1") openblas_set_num_threads(1);
}

[[noreturn]] void die(const Error& e, int code = kExitError) {
  std::cerr << "error: [" << e.category_name() << "] " << e.what() << "\n";
  std::exit(code);
}

// Advisory lock against concurrent writers of one output directory.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    path_ = dir / ".iscl.lock";
    require(!std::filesystem::exists(path_), ErrorCategory::Io,
            "output directory is locked by another run (remove " + path_.string() +
                " if stale)");
    std::ofstream out(path_);
    out << "locked\n";
    active_ = true;
  }
  ~DirLock() {
    if (active_) {
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  bool active_ = false;
};

RunConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return RunConfig::from_file(config_path);
}

int cmd_synthesize(const RunConfig& cfg) {
  require(!cfg.clean_dir.empty(), ErrorCategory::Argument,
          "synthesize: noise.clean_dir is required");
  require(!cfg.out_dir.empty(), ErrorCategory::Argument, "synthesize: io.out_dir is required");
  DirLock lock(cfg.out_dir);
  SynthesizeOptions opts;
  opts.noisy_bit_depth = cfg.noisy_bit_depth;
  DatasetSplit split = synthesize_dataset(cfg.clean_dir, cfg.noise, cfg.out_dir, cfg.fractions,
                                          opts);
  RunConfig resolved = cfg;
  resolved.manifest = cfg.out_dir / "manifest.txt";
  resolved.write_resolved(cfg.out_dir / "config.resolved.json");
  std::cout << "synthesized " << split.clean_group.size() << " clean / "
            << split.noisy_group.size() << " noisy / " << split.val_noisy.size()
            << " validation images into " << cfg.out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  require(!cfg.manifest.empty(), ErrorCategory::Argument, "train: data.manifest is required");
  require(!cfg.out_dir.empty(), ErrorCategory::Argument, "train: io.out_dir is required");
  DirLock lock(cfg.out_dir);
  DatasetSplit split = load_manifest(cfg.manifest);
  ImageCache cache(split.root);

  FitOptions opts;
  opts.out_dir = cfg.out_dir;
  if (!resume.empty()) opts.resume_from = resume;
  opts.on_epoch = [](int64_t e, const MetricsRecord& rec) {
    if (rec.available)
      std::cout << "epoch " << e << ": val PSNR F=" << rec.psnr_f_stats().mean
                << " H=" << rec.psnr_h_stats().mean << " ens=" << rec.psnr_ens_stats().mean
                << "\n";
    else
      std::cout << "epoch " << e << ": no validation references\n";
  };

  cfg.write_resolved(cfg.out_dir / "config.resolved.json");
  FitResult res = fit(cfg.train, split, cache, opts);
  res.log.write_csv(cfg.out_dir / "metrics.csv");
  save_deploy_checkpoint(*res.bundle, cfg.out_dir / "model_best.iscl");
  if (res.diverged) {
    std::cerr << "error: [divergence] training diverged; last good checkpoint retained in "
              << cfg.out_dir.string() << "\n";
    return kExitDivergence;
  }
  std::cout << "training finished: best epoch " << res.best_epoch << " metric "
            << res.best_metric << (res.early_stopped ? " (early stop)" : "") << "\n";
  return kExitOk;
}

ModelBundle load_checkpoint_or_die(const std::filesystem::path& path) {
  if (path.empty() || !std::filesystem::exists(path)) {
    std::cerr << "error: [checkpoint] checkpoint not found: " << path.string() << "\n";
    std::exit(kExitMissingCheckpoint);
  }
  return load_deploy_bundle(path);
}

int cmd_denoise(const RunConfig& cfg, const std::string& input_dir, const std::string& out_dir,
                double gamma, bool f_only, bool h_only, int64_t tile, int bit_depth) {
  require(!(f_only && h_only), ErrorCategory::Argument,
          "denoise: --f-only and --h-only are mutually exclusive");
  ModelBundle bundle = load_checkpoint_or_die(cfg.checkpoint);
  require(!input_dir.empty(), ErrorCategory::Argument, "denoise: --input is required");
  std::filesystem::path out = out_dir.empty() ? cfg.out_dir : std::filesystem::path(out_dir);
  require(!out.empty(), ErrorCategory::Argument, "denoise: output directory is required");
  DirLock lock(out);

  DenoiseOptions opts;
  opts.gamma = gamma;
  opts.mode = f_only ? DenoiseMode::FOnly : (h_only ? DenoiseMode::HOnly : DenoiseMode::Ensemble);

  std::vector<std::filesystem::path> inputs;
  for (const auto& e : std::filesystem::directory_iterator(input_dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".tif" || ext == ".tiff") inputs.push_back(e.path());
  }
  std::sort(inputs.begin(), inputs.end());
  require(!inputs.empty(), ErrorCategory::Dataset, "denoise: no images in " + input_dir);

  for (const auto& p : inputs) {
    ImageTensor img = load_image(p, 0.0f, 1.0f, Domain::NoisyX);
    Tensor den = tile > 0 ? denoise_tiled(bundle, img.pixels, opts, tile)
                          : denoise_image(bundle, img.pixels, opts);
    ImageTensor outimg;
    outimg.pixels = den;
    outimg.domain = Domain::CleanY;
    save_image(outimg, out / p.filename(), bit_depth ? bit_depth : img.bit_depth);
  }
  std::cout << "denoised " << inputs.size() << " images into " << out.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& outputs_dir,
                 const std::string& references_dir) {
  std::filesystem::path out = cfg.out_dir;
  require(!out.empty(), ErrorCategory::Argument, "evaluate: io.out_dir is required");
  DirLock lock(out);

  if (!outputs_dir.empty() || !references_dir.empty()) {
    // Directory-vs-directory metric mode: pair files by name.
    if (outputs_dir.empty() || !std::filesystem::is_directory(outputs_dir) ||
        references_dir.empty() || !std::filesystem::is_directory(references_dir)) {
      std::cerr << "error: [evaluation] outputs and references directories are required\n";
      return kExitMissingReferences;
    }
    std::string csv = "image,psnr,ssim\n";
    size_t n = 0;
    double psum = 0, ssum = 0;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(outputs_dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      std::filesystem::path ref = std::filesystem::path(references_dir) / p.filename();
      if (!std::filesystem::exists(ref)) {
        std::cerr << "error: [evaluation] missing reference for " << p.filename().string()
                  << "\n";
        return kExitMissingReferences;
      }
      ImageTensor a = load_image(p, 0.0f, 1.0f, Domain::CleanY);
      ImageTensor b = load_image(ref, 0.0f, 1.0f, Domain::CleanY);
      double pv = psnr(b.pixels, a.pixels, 1.0);
      double sv = ssim(b.pixels, a.pixels, 1.0);
      char row[256];
      std::snprintf(row, sizeof(row), "%s,%.10g,%.10g\n", p.filename().string().c_str(), pv, sv);
      csv += row;
      psum += pv;
      ssum += sv;
      ++n;
    }
    require(n > 0, ErrorCategory::Evaluation, "evaluate: no outputs found");
    std::ofstream f(out / "metrics_pairs.csv");
    f << csv;
    std::cout << "evaluated " << n << " pairs: mean PSNR " << psum / n << " dB, mean SSIM "
              << ssum / n << "\n";
    return kExitOk;
  }

  // Model-based mode: checkpoint + manifest with references.
  ModelBundle bundle = load_checkpoint_or_die(cfg.checkpoint);
  require(!cfg.manifest.empty(), ErrorCategory::Argument, "evaluate: data.manifest is required");
  DatasetSplit split = load_manifest(cfg.manifest);
  if (!split.has_references()) {
    std::cerr << "error: [evaluation] manifest has no [val_clean] references\n";
    return kExitMissingReferences;
  }
  ImageCache cache(split.root);

  MetricsRecord rec = evaluate_bundle(bundle, cache, split, cfg.train.gamma);
  std::string csv = "image,psnr_F,psnr_H,psnr_ens,ssim_F,ssim_H,ssim_ens\n";
  for (size_t i = 0; i < split.val_noisy.size(); ++i) {
    char row[512];
    std::snprintf(row, sizeof(row), "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                  split.val_noisy[i].c_str(), rec.psnr_f[i], rec.psnr_h[i], rec.psnr_ens[i],
                  rec.ssim_f[i], rec.ssim_h[i], rec.ssim_ens[i]);
    csv += row;
  }
  {
    std::ofstream f(out / "metrics_eval.csv");
    f << csv;
  }
  auto curve = gamma_sweep(bundle, cache, split, cfg.gamma_grid);
  {
    std::ofstream f(out / "gamma_curve.csv");
    f << gamma_curve_csv(curve);
  }
  cfg.write_resolved(out / "config.resolved.json");
  std::cout << "ensemble PSNR " << rec.psnr_ens_stats().mean << " dB (F "
            << rec.psnr_f_stats().mean << ", H " << rec.psnr_h_stats().mean << ") over "
            << rec.psnr_ens.size() << " validation images\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg) {
  require(!cfg.manifest.empty(), ErrorCategory::Argument, "ablate: data.manifest is required");
  require(!cfg.out_dir.empty(), ErrorCategory::Argument, "ablate: io.out_dir is required");
  DirLock lock(cfg.out_dir);
  DatasetSplit split = load_manifest(cfg.manifest);
  if (!split.has_references()) {
    std::cerr << "error: [evaluation] the ablation ladder needs validation references\n";
    return kExitMissingReferences;
  }
  ImageCache cache(split.root);
  cfg.write_resolved(cfg.out_dir / "config.resolved.json");
  auto rows = run_ablation_ladder(cfg.train, split, cache, cfg.out_dir);
  {
    std::ofstream f(cfg.out_dir / "ladder.csv");
    f << ladder_csv(rows);
  }
  std::string table = ladder_table(rows);
  {
    std::ofstream f(cfg.out_dir / "ladder.txt");
    f << table;
  }
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  apply_deterministic_env();

  CLI::App app{"Unpaired image denoiser: cyclic adversarial training with a cooperative "
               "noise extractor"};
  app.require_subcommand(1);

  std::string config_path, resume_path, input_dir, output_dir, outputs_dir, references_dir;
  std::string ablation_override, manifest_override, out_override, checkpoint_override;
  std::optional<uint64_t> seed_override;
  std::optional<int64_t> epochs_override;
  double gamma = -1.0;
  bool f_only = false, h_only = false;
  int64_t tile = 0;
  int bit_depth = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed_override, "override the run seed");
    sub->add_option("--manifest", manifest_override, "override data.manifest");
    sub->add_option("--out", out_override, "override io.out_dir");
    sub->add_option("--checkpoint", checkpoint_override, "override io.checkpoint");
  };

  CLI::App* synth = app.add_subcommand("synthesize", "build a synthetic unpaired dataset");
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "train the denoiser on an unpaired dataset");
  add_common(train);
  train->add_option("--epochs", epochs_override, "override train.epochs");
  train->add_option("--ablation", ablation_override, "ablation row (A, AB, ABC, ABCD, ABCDE)");
  train->add_option("--resume", resume_path, "resume from a training checkpoint");

  CLI::App* denoise = app.add_subcommand("denoise", "denoise a directory of images");
  add_common(denoise);
  denoise->add_option("--input", input_dir, "directory of noisy images")->required();
  denoise->add_option("--output", output_dir, "output directory (defaults to io.out_dir)");
  denoise->add_option("--gamma", gamma, "ensemble blend weight in [0,1]");
  denoise->add_flag("--f-only", f_only, "emit the translator output alone");
  denoise->add_flag("--h-only", h_only, "emit the extractor residual path alone");
  denoise->add_option("--tile", tile, "tile size for 50%-overlap tiled inference (0 = whole)");
  denoise->add_option("--bit-depth", bit_depth, "output bit depth (8 or 16; default: source)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "compute metrics / gamma sweep");
  add_common(evaluate);
  evaluate->add_option("--outputs", outputs_dir, "directory of outputs (pairwise mode)");
  evaluate->add_option("--references", references_dir, "directory of references (pairwise mode)");

  CLI::App* ablate = app.add_subcommand("ablate", "run the cumulative ablation ladder");
  add_common(ablate);
  ablate->add_option("--epochs", epochs_override, "override train.epochs");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path);
    if (seed_override) {
      cfg.seed = *seed_override;
      cfg.train.seed = *seed_override;
      cfg.noise.seed = cfg.noise_seed();
    }
    if (!manifest_override.empty()) cfg.manifest = manifest_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!checkpoint_override.empty()) cfg.checkpoint = checkpoint_override;
    if (epochs_override) cfg.train.n_epoch = *epochs_override;
    if (!ablation_override.empty()) cfg.train.flags = AblationFlags::parse(ablation_override);
    if (gamma >= 0.0) cfg.train.gamma = gamma;

    if (synth->parsed()) return cmd_synthesize(cfg);
    if (train->parsed()) return cmd_train(cfg, resume_path);
    if (denoise->parsed())
      return cmd_denoise(cfg, input_dir, output_dir, gamma >= 0 ? gamma : cfg.train.gamma,
                         f_only, h_only, tile, bit_depth);
    if (evaluate->parsed()) return cmd_evaluate(cfg, outputs_dir, references_dir);
    if (ablate->parsed()) return cmd_ablate(cfg);
  } catch (const Error& e) {
    int code = kExitError;
    if (e.category() == ErrorCategory::Divergence) code = kExitDivergence;
    if (e.category() == ErrorCategory::Checkpoint) code = kExitMissingCheckpoint;
    if (e.category() == ErrorCategory::Evaluation) code = kExitMissingReferences;
    die(e, code);
  } catch (const std::exception& e) {
    std::cerr << "error: [internal] " << e.what() << "\n";
    return kExitError;
  }
  return kExitOk;
}
