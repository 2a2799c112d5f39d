// File I/O, manifests, dihedral augmentation and the unpaired patch sampler.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <set>

#include "iscl/dataset.hpp"
#include "iscl/image.hpp"
#include "support/toy.hpp"

using namespace iscl;
using iscl::testing::fresh_temp_dir;

TEST_CASE("8-bit PNG endpoint mapping and round trip") {
  auto dir = fresh_temp_dir("img8");
  ImageTensor img;
  img.pixels = Tensor::from({64, 64}, std::vector<float>(64 * 64, 0.0f));
  img.pixels[0] = 1.0f;   // stored 255
  img.pixels[1] = 0.0f;   // stored 0
  img.pixels[2] = 0.5f;   // round-half-up -> 128
  img.pixels[3] = 1.2f;   // clipped -> 255
  img.pixels[4] = -0.1f;  // clipped -> 0
  save_image(img, dir / "a.png", 8);

  ImageTensor back = load_image(dir / "a.png");
  CHECK(back.bit_depth == 8);
  CHECK(back.pixels[0] == 1.0f);
  CHECK(back.pixels[1] == 0.0f);
  CHECK(back.pixels[2] == 128.0f / 255.0f);
  CHECK(back.pixels[3] == 1.0f);
  CHECK(back.pixels[4] == 0.0f);

  // one-quantization-step idempotence on arbitrary values
  RngStream rng(7);
  ImageTensor noise;
  noise.pixels = Tensor({32, 64});
  for (int64_t i = 0; i < noise.pixels.numel(); ++i)
    noise.pixels[i] = static_cast<float>(rng.uniform());
  save_image(noise, dir / "b.png", 8);
  ImageTensor nb = load_image(dir / "b.png");
  for (int64_t i = 0; i < nb.pixels.numel(); ++i)
    CHECK(std::fabs(nb.pixels[i] - noise.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
  // load -> save -> load is exact
  save_image(nb, dir / "c.png", 8);
  ImageTensor nc = load_image(dir / "c.png");
  for (int64_t i = 0; i < nc.pixels.numel(); ++i) CHECK(nc.pixels[i] == nb.pixels[i]);
}

TEST_CASE("16-bit PNG and TIFF mapping") {
  auto dir = fresh_temp_dir("img16");
  cv::Mat m(16, 16, CV_16UC1, cv::Scalar(32768));
  REQUIRE(cv::imwrite((dir / "p.png").string(), m));
  REQUIRE(cv::imwrite((dir / "t.tif").string(), m));
  for (const char* name : {"p.png", "t.tif"}) {
    ImageTensor img = load_image(dir / name);
    CHECK(img.bit_depth == 16);
    CHECK(img.pixels[0] == 32768.0f / 65535.0f);
  }
  // 16-bit round trip through our writer
  ImageTensor img = load_image(dir / "p.png");
  save_image(img, dir / "q.tiff", 16);
  ImageTensor back = load_image(dir / "q.tiff");
  CHECK(back.pixels[5] == img.pixels[5]);
}

TEST_CASE("load errors: missing, multi-channel, unsupported depth") {
  auto dir = fresh_temp_dir("imgerr");
  CHECK_THROWS_WITH_AS(load_image(dir / "nope.png"), doctest::Contains("no such file"), Error);

  cv::Mat rgb(8, 8, CV_8UC3, cv::Scalar(1, 2, 3));
  REQUIRE(cv::imwrite((dir / "rgb.png").string(), rgb));
  try {
    load_image(dir / "rgb.png");
    FAIL("expected unsupported-format error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::UnsupportedFormat);
  }

  ImageTensor img;
  img.pixels = Tensor({8, 8});
  CHECK_THROWS_AS(save_image(img, dir / "x.bmp", 8), Error);
  CHECK_THROWS_AS(save_image(img, dir / "x.png", 12), Error);
}

TEST_CASE("image range invariant; noise domain exempt from [0,1]") {
  ImageTensor img;
  img.pixels = Tensor::from({2, 2}, {0.1f, 0.5f, 0.9f, 1.3f});
  img.domain = Domain::CleanY;
  CHECK_THROWS_AS(img.validate(), Error);
  img.domain = Domain::NoiseN;
  CHECK_NOTHROW(img.validate());
  img.pixels[3] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(img.validate(), Error);
}

TEST_CASE("dihedral transforms: identity, group property, measure preservation") {
  RngStream rng(3);
  Tensor img = Tensor::randn({64, 64}, rng);

  Tensor id = dihedral_transform(img, 0);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(id[i] == img[i]);

  // 90-degree rotation applied four times is the identity
  Tensor r = img;
  for (int k = 0; k < 4; ++k) r = dihedral_transform(r, 1);
  for (int64_t i = 0; i < img.numel(); ++i) CHECK(r[i] == img[i]);

  for (int t = 0; t < 8; ++t) {
    Tensor out = dihedral_transform(img, t);
    std::multiset<float> a(img.vec().begin(), img.vec().end());
    std::multiset<float> b(out.vec().begin(), out.vec().end());
    CHECK(a == b);
    CHECK(out.sum() == doctest::Approx(img.sum()));
  }
  CHECK_THROWS_AS(dihedral_transform(img, 8), Error);
  CHECK_THROWS_AS(dihedral_transform(img, -1), Error);
}

TEST_CASE("dihedral transforms are distinct on an asymmetric image") {
  Tensor img({64, 64});
  for (int64_t i = 0; i < 64; ++i)
    for (int64_t j = 0; j < 64; ++j) img[i * 64 + j] = static_cast<float>(i * 64 + j);
  std::set<uint64_t> hashes;
  for (int t = 0; t < 8; ++t) hashes.insert(dihedral_transform(img, t).byte_hash());
  CHECK(hashes.size() == 8);
}

TEST_CASE("batch augment keeps domain and ids, rejects bad id") {
  PatchBatch b;
  RngStream rng(5);
  b.data = Tensor::randn({3, 1, 64, 64}, rng);
  b.domain = Domain::NoisyX;
  b.source_ids = {"a", "b", "c"};
  PatchBatch out = dihedral_augment(b, 5);
  CHECK(out.domain == Domain::NoisyX);
  CHECK(out.source_ids == b.source_ids);
  CHECK(out.data.sum() == doctest::Approx(b.data.sum()));
  CHECK_THROWS_AS(dihedral_augment(b, 9), Error);
}

TEST_CASE("manifest round trip and validation") {
  auto dir = fresh_temp_dir("manifest");
  DatasetSplit s;
  s.root = dir;
  s.clean_group = {"clean/a.png", "clean/b.png"};
  s.noisy_group = {"noisy/c.png"};
  s.val_noisy = {"val_noisy/d.png"};
  s.val_clean_ref = {"val_clean/d.png"};
  save_manifest(s, dir / "manifest.txt");
  DatasetSplit back = load_manifest(dir / "manifest.txt");
  CHECK(back.clean_group == s.clean_group);
  CHECK(back.noisy_group == s.noisy_group);
  CHECK(back.val_noisy == s.val_noisy);
  CHECK(back.val_clean_ref == s.val_clean_ref);
  CHECK(back.has_references());

  // overlap between groups is a dataset error
  DatasetSplit bad = s;
  bad.noisy_group.push_back("clean/a.png");
  CHECK_THROWS_AS(bad.validate(), Error);

  // unknown section
  {
    std::ofstream f(dir / "bad.txt");
    f << "[clean]\nx.png\n[garbage]\n";
  }
  CHECK_THROWS_AS(load_manifest(dir / "bad.txt"), Error);
}

namespace {

// encodes the pixel coordinate so a patch reveals its offset
ImageTensor coordinate_image(int64_t h, int64_t w) {
  ImageTensor img;
  img.pixels = Tensor({h, w});
  float denom = static_cast<float>(h * w - 1);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      img.pixels[i * w + j] = static_cast<float>(i * w + j) / denom;
  img.domain = Domain::NoisyX;
  return img;
}

}  // namespace

TEST_CASE("sampler: determinism, single-offset case, domain purity") {
  ImageCache cache;
  cache.put("img64", coordinate_image(64, 64));
  cache.put("clean64", coordinate_image(64, 64));
  DatasetSplit split;
  split.noisy_group = {"img64"};
  split.clean_group = {"clean64"};

  RngStream r1(99), r2(99);
  UnpairedBatch a = sample_unpaired_batch(cache, split, 3, r1);
  UnpairedBatch b = sample_unpaired_batch(cache, split, 3, r2);
  CHECK(a.x.data.byte_hash() == b.x.data.byte_hash());
  CHECK(a.y.data.byte_hash() == b.y.data.byte_hash());
  CHECK(a.x.domain == Domain::NoisyX);
  CHECK(a.y.domain == Domain::CleanY);

  // 64x64 source: the only valid offset is (0,0), so the patch is the image
  const ImageTensor& src = cache.get("img64", Domain::NoisyX);
  for (int64_t i = 0; i < 64 * 64; ++i) CHECK(a.x.data[i] == src.pixels[i]);

  DatasetSplit empty;
  empty.noisy_group = {"img64"};
  RngStream r3(1);
  CHECK_THROWS_AS(sample_unpaired_batch(cache, empty, 2, r3), Error);
}

TEST_CASE("sampler: offsets uniform over the 65x65 grid (5-sigma per cell)") {
  ImageCache cache;
  cache.put("big", coordinate_image(128, 128));
  std::vector<std::string> group = {"big"};

  const int kDraws = 10000;
  std::vector<int> counts(65 * 65, 0);
  RngStream rng(20240817);
  for (int d = 0; d < kDraws; ++d) {
    PatchBatch p = sample_batch(cache, group, Domain::NoisyX, 1, rng);
    // first pixel encodes i*128+j of the top-left corner
    auto lin = static_cast<int64_t>(std::lround(static_cast<double>(p.data[0]) * (128.0 * 128.0 - 1.0)));
    int64_t oy = lin / 128, ox = lin % 128;
    REQUIRE(oy <= 64);
    REQUIRE(ox <= 64);
    ++counts[oy * 65 + ox];
  }
  double p_cell = 1.0 / (65.0 * 65.0);
  double expected = kDraws * p_cell;
  double sigma = std::sqrt(kDraws * p_cell * (1 - p_cell));
  int max_count = 0, occupied = 0;
  for (int c : counts) {
    max_count = std::max(max_count, c);
    occupied += c > 0 ? 1 : 0;
  }
  CHECK(max_count <= expected + 5.0 * sigma);
  CHECK(occupied > 3200);  // a constant sampler would fail both
}

TEST_CASE("sampler: augmented batches preserve the pixel multiset per patch") {
  ImageCache cache;
  cache.put("img", coordinate_image(64, 64));
  std::vector<std::string> group = {"img"};
  RngStream rng(4242);
  SamplerOptions opts;
  opts.augment = true;
  const ImageTensor& src = cache.get("img", Domain::NoisyX);
  double want = src.pixels.sum();
  for (int d = 0; d < 32; ++d) {
    PatchBatch p = sample_batch(cache, group, Domain::NoisyX, 2, rng, opts);
    for (int64_t i = 0; i < 2; ++i) {
      double got = 0;
      for (int64_t k = 0; k < 64 * 64; ++k) got += p.data[i * 64 * 64 + k];
      CHECK(got == doctest::Approx(want));
    }
  }
}

TEST_CASE("sampler rejects images smaller than a patch") {
  ImageCache cache;
  cache.put("small", coordinate_image(32, 64));
  std::vector<std::string> group = {"small"};
  RngStream rng(1);
  CHECK_THROWS_AS(sample_batch(cache, group, Domain::NoisyX, 1, rng), Error);
}
