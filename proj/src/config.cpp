#include "iscl/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

namespace iscl {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), ErrorCategory::Argument, "config: " + where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    require(allowed.count(it.key()) > 0, ErrorCategory::Argument,
            "config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_noise(const json& j, RunConfig& c) {
  check_keys(j, {"kind", "amplitude", "spatial_scale", "mean_shift", "density", "clean_dir",
                 "fractions", "noisy_bit_depth"},
             "noise");
  if (j.contains("kind")) c.noise.kind = parse_noise_kind(j.at("kind").get<std::string>());
  take(j, "amplitude", c.noise.amplitude);
  take(j, "spatial_scale", c.noise.spatial_scale);
  take(j, "mean_shift", c.noise.mean_shift);
  take(j, "density", c.noise.density);
  if (j.contains("clean_dir")) c.clean_dir = j.at("clean_dir").get<std::string>();
  if (j.contains("fractions")) {
    auto f = j.at("fractions").get<std::vector<double>>();
    require(f.size() == 3, ErrorCategory::Argument, "config: fractions must have 3 entries");
    c.fractions = {f[0], f[1], f[2]};
  }
  take(j, "noisy_bit_depth", c.noisy_bit_depth);
}

void parse_model(const json& j, BundleConfig& m) {
  check_keys(j, {"generator", "extractor", "discriminator"}, "train.model");
  if (j.contains("generator")) {
    const json& g = j.at("generator");
    check_keys(g, {"base_width", "n_residual_blocks"}, "train.model.generator");
    take(g, "base_width", m.generator.base_width);
    take(g, "n_residual_blocks", m.generator.n_residual_blocks);
  }
  if (j.contains("extractor")) {
    const json& x = j.at("extractor");
    check_keys(x, {"depth", "width"}, "train.model.extractor");
    take(x, "depth", m.extractor.depth);
    take(x, "width", m.extractor.width);
  }
  if (j.contains("discriminator")) {
    const json& d = j.at("discriminator");
    check_keys(d, {"base_width", "n_downsamples"}, "train.model.discriminator");
    take(d, "base_width", m.discriminator.base_width);
    take(d, "n_downsamples", m.discriminator.n_downsamples);
  }
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j,
             {"lambda", "gamma", "batch", "epochs", "iters", "swa_start", "cycle", "lookahead_k",
              "lookahead_alpha", "ablation", "patience", "log_every", "augment", "lr_start",
              "lr_end", "beta1", "beta2", "eps", "model", "divergence_threshold",
              "divergence_patience"},
             "train");
  take(j, "lambda", t.lambda);
  take(j, "gamma", t.gamma);
  take(j, "batch", t.batch);
  take(j, "epochs", t.n_epoch);
  take(j, "iters", t.n_iter);
  take(j, "swa_start", t.n_swa);
  take(j, "cycle", t.cycle);
  take(j, "lookahead_k", t.lookahead_k);
  take(j, "lookahead_alpha", t.lookahead_alpha);
  if (j.contains("ablation")) t.flags = AblationFlags::parse(j.at("ablation").get<std::string>());
  take(j, "patience", t.early_stop_patience);
  take(j, "log_every", t.log_every);
  take(j, "augment", t.augment);
  take(j, "lr_start", t.optim.lr_start);
  take(j, "lr_end", t.optim.lr_end);
  take(j, "beta1", t.optim.beta1);
  take(j, "beta2", t.optim.beta2);
  take(j, "eps", t.optim.eps);
  take(j, "divergence_threshold", t.divergence_threshold);
  take(j, "divergence_patience", t.divergence_patience);
  if (j.contains("model")) parse_model(j.at("model"), t.model);
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text,
                                    const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCategory::Argument, "config: invalid JSON: " + std::string(e.what()));
  }
  check_keys(j, {"seed", "data", "noise", "train", "eval", "io"}, "config root");

  RunConfig c;
  take(j, "seed", c.seed);
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, {"manifest"}, "data");
    if (d.contains("manifest")) c.manifest = d.at("manifest").get<std::string>();
  }
  if (j.contains("noise")) parse_noise(j.at("noise"), c);
  if (j.contains("train")) parse_train(j.at("train"), c.train);
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"gamma_grid", "ladder"}, "eval");
    if (e.contains("gamma_grid")) c.gamma_grid = e.at("gamma_grid").get<std::vector<double>>();
    take(e, "ladder", c.ladder);
  }
  if (j.contains("io")) {
    const json& io = j.at("io");
    check_keys(io, {"out_dir", "checkpoint"}, "io");
    if (io.contains("out_dir")) c.out_dir = io.at("out_dir").get<std::string>();
    if (io.contains("checkpoint")) c.checkpoint = io.at("checkpoint").get<std::string>();
  }

  // relative paths resolve against the config file's directory
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative() && !base_dir.empty()) p = base_dir / p;
  };
  resolve(c.manifest);
  resolve(c.clean_dir);
  resolve(c.out_dir);
  resolve(c.checkpoint);

  c.train.seed = c.seed;
  c.noise.seed = c.noise_seed();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::Io, "config: cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text, path.has_parent_path() ? path.parent_path()
                                                     : std::filesystem::path());
}

std::string RunConfig::resolved_json() const {
  json j;
  j["seed"] = seed;
  j["data"]["manifest"] = manifest.string();
  j["noise"]["kind"] = noise_kind_name(noise.kind);
  j["noise"]["amplitude"] = noise.amplitude;
  j["noise"]["spatial_scale"] = noise.spatial_scale;
  j["noise"]["mean_shift"] = noise.mean_shift;
  j["noise"]["density"] = noise.density;
  j["noise"]["clean_dir"] = clean_dir.string();
  j["noise"]["fractions"] = fractions;
  j["noise"]["noisy_bit_depth"] = noisy_bit_depth;
  j["train"]["lambda"] = train.lambda;
  j["train"]["gamma"] = train.gamma;
  j["train"]["batch"] = train.batch;
  j["train"]["epochs"] = train.n_epoch;
  j["train"]["iters"] = train.n_iter;
  j["train"]["swa_start"] = train.swa_start();
  j["train"]["cycle"] = train.cycle_length();
  j["train"]["lookahead_k"] = train.lookahead_k;
  j["train"]["lookahead_alpha"] = train.lookahead_alpha;
  j["train"]["ablation"] = train.flags.str();
  j["train"]["patience"] = train.early_stop_patience;
  j["train"]["log_every"] = train.log_every;
  j["train"]["augment"] = train.augment;
  j["train"]["lr_start"] = train.optim.lr_start;
  j["train"]["lr_end"] = train.optim.lr_end;
  j["train"]["beta1"] = train.optim.beta1;
  j["train"]["beta2"] = train.optim.beta2;
  j["train"]["eps"] = train.optim.eps;
  j["train"]["divergence_threshold"] = train.divergence_threshold;
  j["train"]["divergence_patience"] = train.divergence_patience;
  j["train"]["model"]["generator"]["base_width"] = train.model.generator.base_width;
  j["train"]["model"]["generator"]["n_residual_blocks"] =
      train.model.generator.n_residual_blocks;
  j["train"]["model"]["extractor"]["depth"] = train.model.extractor.depth;
  j["train"]["model"]["extractor"]["width"] = train.model.extractor.width;
  j["train"]["model"]["discriminator"]["base_width"] = train.model.discriminator.base_width;
  j["train"]["model"]["discriminator"]["n_downsamples"] =
      train.model.discriminator.n_downsamples;
  j["eval"]["gamma_grid"] = gamma_grid;
  j["eval"]["ladder"] = ladder;
  j["io"]["out_dir"] = out_dir.string();
  j["io"]["checkpoint"] = checkpoint.string();
  return j.dump(2) + "\n";
}

void RunConfig::write_resolved(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorCategory::Io, "config: cannot write " + path.string());
  out << resolved_json();
}

}  // namespace iscl
