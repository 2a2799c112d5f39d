// End-to-end command-line checks: exit codes, reproducibility, file outputs.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "iscl/common.hpp"
#include "iscl/image.hpp"
#include "support/toy.hpp"

using namespace iscl;
using iscl::testing::fresh_temp_dir;
using iscl::testing::write_toy_corpus;

namespace {

std::string cli_binary() {
  const char* p = std::getenv("ISCL_BIN");
  REQUIRE_MESSAGE(p != nullptr, "ISCL_BIN must point at the CLI binary");
  return p;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  std::string cmd = "ISCL_DETERMINISTIC=1 " + cli_binary() + " " + args + " >" + log.string() +
                    " 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// stable hash of every regular file in a tree (path + content); the resolved
// config is excluded because it records the differing output path itself
uint64_t tree_hash(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != ".iscl.lock" &&
        e.path().filename() != "config.resolved.json")
      files[e.path().lexically_relative(root).string()] = slurp(e.path());
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [k, v] : files) {
    h = hash_str(k, h);
    h = fnv1a(v.data(), v.size(), h);
  }
  return h;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p);
  f << text;
}

// shared tiny-model config fragment
const char* kTrainFragment = R"("train": {
    "batch": 2, "epochs": 1, "iters": 2, "lookahead_k": 2, "log_every": 1,
    "model": {"generator": {"base_width": 4, "n_residual_blocks": 1},
              "extractor": {"depth": 3, "width": 4},
              "discriminator": {"base_width": 4, "n_downsamples": 2}}
  })";

}  // namespace

TEST_CASE("synthesize: reproducible trees, manifest partition, amp-0 byte equality") {
  auto dir = fresh_temp_dir("cli_synth");
  write_toy_corpus(dir / "src", 12, 64, 64, 7);
  std::string cfg = std::string("{\n  \"seed\": 5,\n  \"noise\": {\"kind\": \"charge\", ") +
                    "\"amplitude\": 0.5, \"spatial_scale\": 3.0, \"density\": 0.004, " +
                    "\"clean_dir\": \"src\", \"fractions\": [0.5, 0.25, 0.25]},\n" +
                    "  \"io\": {\"out_dir\": \"outA\"}\n}\n";
  write_file(dir / "cfg.json", cfg);

  CHECK(run_cli("synthesize --config " + (dir / "cfg.json").string(), dir / "log1.txt") == 0);
  CHECK(std::filesystem::exists(dir / "outA/manifest.txt"));
  CHECK(std::filesystem::exists(dir / "outA/config.resolved.json"));

  // same seed into a second directory: identical trees
  CHECK(run_cli("synthesize --config " + (dir / "cfg.json").string() + " --out " +
                    (dir / "outB").string(),
                dir / "log2.txt") == 0);
  CHECK(tree_hash(dir / "outA") == tree_hash(dir / "outB"));

  // manifest sections partition the inputs: 6 + 3 + 3 entries
  DatasetSplit split = load_manifest(dir / "outA/manifest.txt");
  CHECK(split.clean_group.size() == 6);
  CHECK(split.noisy_group.size() == 3);
  CHECK(split.val_noisy.size() == 3);
  CHECK(split.val_clean_ref.size() == 3);

  // zero amplitude: degraded files byte-identical to their sources
  std::string cfg0 = std::string("{\n  \"seed\": 5,\n  \"noise\": {\"kind\": \"charge\", ") +
                     "\"amplitude\": 0.0, \"clean_dir\": \"src\", " +
                     "\"fractions\": [0.5, 0.25, 0.25]},\n  \"io\": {\"out_dir\": \"out0\"}\n}\n";
  write_file(dir / "cfg0.json", cfg0);
  CHECK(run_cli("synthesize --config " + (dir / "cfg0.json").string(), dir / "log3.txt") == 0);
  DatasetSplit s0 = load_manifest(dir / "out0/manifest.txt");
  for (const auto& rel : s0.noisy_group) {
    std::string stem = std::filesystem::path(rel).stem().string();
    CHECK(slurp(dir / "out0" / rel) == slurp(dir / "src" / (stem + ".png")));
  }
}

TEST_CASE("config: unknown keys rejected with a structured error") {
  auto dir = fresh_temp_dir("cli_badcfg");
  write_file(dir / "bad.json", "{\"seed\": 1, \"surprise\": 2}\n");
  CHECK(run_cli("synthesize --config " + (dir / "bad.json").string(), dir / "log.txt") == 1);
  std::string log = slurp(dir / "log.txt");
  CHECK(log.find("error: [argument]") != std::string::npos);
  CHECK(log.find("surprise") != std::string::npos);
}

TEST_CASE("train / denoise / evaluate round trip with exit-code contracts") {
  auto dir = fresh_temp_dir("cli_train");
  write_toy_corpus(dir / "src", 14, 64, 64, 17);
  std::string synth_cfg =
      std::string("{\n  \"seed\": 9,\n  \"noise\": {\"kind\": \"charge\", \"amplitude\": 0.5, ") +
      "\"spatial_scale\": 3.0, \"density\": 0.004, \"clean_dir\": \"src\", " +
      "\"fractions\": [0.4, 0.3, 0.3]},\n  \"io\": {\"out_dir\": \"data\"}\n}\n";
  write_file(dir / "synth.json", synth_cfg);
  REQUIRE(run_cli("synthesize --config " + (dir / "synth.json").string(), dir / "slog.txt") == 0);

  std::string train_cfg = std::string("{\n  \"seed\": 11,\n  \"data\": {\"manifest\": ") +
                          "\"data/manifest.txt\"},\n  " + kTrainFragment +
                          ",\n  \"io\": {\"out_dir\": \"run\"}\n}\n";
  write_file(dir / "train.json", train_cfg);

  // epochs 0: initialized checkpoint, header-only log
  CHECK(run_cli("train --config " + (dir / "train.json").string() + " --epochs 0 --out " +
                    (dir / "run0").string(),
                dir / "tlog0.txt") == 0);
  CHECK(std::filesystem::exists(dir / "run0/model_best.iscl"));
  std::string csv0 = slurp(dir / "run0/metrics.csv");
  CHECK(csv0.find("epoch,iteration,l_F") == 0);
  CHECK(csv0.find('\n') == csv0.size() - 1);  // header only

  // real (tiny) training run
  REQUIRE(run_cli("train --config " + (dir / "train.json").string(), dir / "tlog1.txt") == 0);
  CHECK(std::filesystem::exists(dir / "run/checkpoint.iscl"));
  CHECK(std::filesystem::exists(dir / "run/model_best.iscl"));
  CHECK(std::filesystem::exists(dir / "run/config.resolved.json"));
  std::string csv1 = slurp(dir / "run/metrics.csv");

  // deterministic rerun: byte-identical metrics
  REQUIRE(run_cli("train --config " + (dir / "train.json").string() + " --out " +
                      (dir / "run2").string(),
                  dir / "tlog2.txt") == 0);
  CHECK(slurp(dir / "run2/metrics.csv") == csv1);

  // row (A) training smoke
  CHECK(run_cli("train --config " + (dir / "train.json").string() + " --ablation A --out " +
                    (dir / "runA").string(),
                dir / "tlogA.txt") == 0);
  std::string csvA = slurp(dir / "runA/metrics.csv");
  // header plus rows; the extractor column stays empty in every row
  {
    std::istringstream in(csvA);
    std::string header, line;
    std::getline(in, header);
    size_t pseudo_col = 0, col = 0;
    std::stringstream hs(header);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (cell == "l_pseudo") pseudo_col = col;
      ++col;
    }
    REQUIRE(pseudo_col > 0);
    while (std::getline(in, line)) {
      std::stringstream ls(line);
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      CHECK(cells[pseudo_col].empty());
    }
  }

  // denoise: --gamma 1 and --f-only agree file-for-file
  std::string ck = (dir / "run/model_best.iscl").string();
  REQUIRE(run_cli("denoise --checkpoint " + ck + " --input " + (dir / "data/val_noisy").string() +
                      " --output " + (dir / "den_g1").string() + " --gamma 1",
                  dir / "dlog1.txt") == 0);
  REQUIRE(run_cli("denoise --checkpoint " + ck + " --input " + (dir / "data/val_noisy").string() +
                      " --output " + (dir / "den_f").string() + " --gamma 1 --f-only",
                  dir / "dlog2.txt") == 0);
  CHECK(tree_hash(dir / "den_g1") == tree_hash(dir / "den_f"));

  // a 64-trained model denoises a larger image (fully convolutional)
  {
    ImageTensor big;
    big.pixels = iscl::testing::toy_clean_image(99, 128, 160);
    save_image(big, dir / "big/img.png", 8);
  }
  REQUIRE(run_cli("denoise --checkpoint " + ck + " --input " + (dir / "big").string() +
                      " --output " + (dir / "big_out").string(),
                  dir / "dlog3.txt") == 0);
  ImageTensor big_out = load_image(dir / "big_out/img.png");
  CHECK(big_out.height() == 128);
  CHECK(big_out.width() == 160);

  // missing checkpoint: exit 3
  CHECK(run_cli("denoise --checkpoint " + (dir / "nope.iscl").string() + " --input " +
                    (dir / "big").string() + " --output " + (dir / "x").string(),
                dir / "dlog4.txt") == 3);

  // evaluate in pairwise mode: identical dirs give the PSNR cap and SSIM 1
  REQUIRE(run_cli("evaluate --outputs " + (dir / "data/val_clean").string() + " --references " +
                      (dir / "data/val_clean").string() + " --out " + (dir / "evself").string(),
                  dir / "elog1.txt") == 0);
  {
    std::istringstream in(slurp(dir / "evself/metrics_pairs.csv"));
    std::string header, line;
    std::getline(in, header);
    int rows = 0;
    while (std::getline(in, line)) {
      CHECK(line.find(",99,") != std::string::npos);
      CHECK(line.substr(line.size() - 2) == ",1");
      ++rows;
    }
    CHECK(rows == 4);  // fractions (0.4, 0.3, 0.3) of 14 -> 6/4/4 split
  }

  // evaluate in model mode: gamma grid of three -> three-row curve file
  std::string eval_cfg = std::string("{\n  \"seed\": 11,\n  \"data\": {\"manifest\": ") +
                         "\"data/manifest.txt\"},\n  \"eval\": {\"gamma_grid\": [0, 0.5, 1]},\n" +
                         "  \"io\": {\"out_dir\": \"evm\", \"checkpoint\": " +
                         "\"run/model_best.iscl\"}\n}\n";
  write_file(dir / "eval.json", eval_cfg);
  REQUIRE(run_cli("evaluate --config " + (dir / "eval.json").string(), dir / "elog2.txt") == 0);
  {
    std::istringstream in(slurp(dir / "evm/gamma_curve.csv"));
    std::string line;
    int rows = -1;  // header
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
  }

  // evaluate without references: exit 4
  {
    DatasetSplit bare = load_manifest(dir / "data/manifest.txt");
    bare.val_clean_ref.clear();
    save_manifest(bare, dir / "bare/manifest.txt");
    std::filesystem::copy(dir / "data/clean", dir / "bare/clean",
                          std::filesystem::copy_options::recursive);
    std::filesystem::copy(dir / "data/noisy", dir / "bare/noisy",
                          std::filesystem::copy_options::recursive);
    std::filesystem::copy(dir / "data/val_noisy", dir / "bare/val_noisy",
                          std::filesystem::copy_options::recursive);
  }
  std::string eval_bare = std::string("{\n  \"seed\": 11,\n  \"data\": {\"manifest\": ") +
                          "\"bare/manifest.txt\"},\n  \"io\": {\"out_dir\": \"evb\", " +
                          "\"checkpoint\": \"run/model_best.iscl\"}\n}\n";
  write_file(dir / "evalbare.json", eval_bare);
  CHECK(run_cli("evaluate --config " + (dir / "evalbare.json").string(), dir / "elog3.txt") == 4);

  // resume from the finished checkpoint: nothing left to do, log unchanged
  CHECK(run_cli("train --config " + (dir / "train.json").string() + " --out " +
                    (dir / "run3").string() + " --resume " +
                    (dir / "run/checkpoint.iscl").string(),
                dir / "tlog3.txt") == 0);
  CHECK(slurp(dir / "run3/metrics.csv") == csv1);
}

TEST_CASE("output directory lock guards concurrent writers") {
  auto dir = fresh_temp_dir("cli_lock");
  write_toy_corpus(dir / "src", 4, 64, 64, 3);
  std::filesystem::create_directories(dir / "out");
  write_file(dir / "out/.iscl.lock", "locked\n");
  std::string cfg = std::string("{\n  \"seed\": 1,\n  \"noise\": {\"kind\": \"gaussian\", ") +
                    "\"amplitude\": 0.1, \"clean_dir\": \"src\", " +
                    "\"fractions\": [0.5, 0.25, 0.25]},\n  \"io\": {\"out_dir\": \"out\"}\n}\n";
  write_file(dir / "cfg.json", cfg);
  CHECK(run_cli("synthesize --config " + (dir / "cfg.json").string(), dir / "log.txt") == 1);
  CHECK(slurp(dir / "log.txt").find("locked") != std::string::npos);
}
