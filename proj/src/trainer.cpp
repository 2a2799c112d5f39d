#include "iscl/trainer.hpp"

#include "iscl/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace iscl {

// ---------------------------------------------------------------------------
// AblationFlags / TrainConfig
// ---------------------------------------------------------------------------

AblationFlags AblationFlags::parse(const std::string& s) {
  std::string letters;
  for (char ch : s) {
    if (std::isalpha(static_cast<unsigned char>(ch)))
      letters.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  }
  if (letters == "FULL") return full();
  require(!letters.empty(), ErrorCategory::Argument, "ablation: empty specification");
  AblationFlags f;
  for (char ch : letters) {
    switch (ch) {
      case 'A': break;  // base configuration, always on
      case 'B': f.b = true; break;
      case 'C': f.c = true; break;
      case 'D': f.d = true; break;
      case 'E': f.e = true; break;
      default:
        fail(ErrorCategory::Argument, std::string("ablation: unknown flag '") + ch + "'");
    }
  }
  f.validate();
  return f;
}

std::string AblationFlags::str() const {
  std::string s = "A";
  if (b) s += "+B";
  if (c) s += "+C";
  if (d) s += "+D";
  if (e) s += "+E";
  return s;
}

void AblationFlags::validate() const {
  require(!(c || d || e) || b, ErrorCategory::Argument,
          "ablation: flags C, D, E require B (the ladder is cumulative)");
}

void TrainConfig::validate() const {
  require(lambda > 0.0, ErrorCategory::Argument, "train: lambda must be > 0");
  require(gamma >= 0.0 && gamma <= 1.0, ErrorCategory::Argument,
          "train: gamma must lie in [0,1]");
  require(batch >= 2, ErrorCategory::Argument,
          "train: batch size must be >= 2 (batch statistics are undefined otherwise)");
  require(patch == kPatchSide, ErrorCategory::Argument, "train: patch side is fixed at 64");
  require(n_epoch >= 0 && n_iter >= 1, ErrorCategory::Argument, "train: bad epoch/iter counts");
  require(swa_start() <= std::max<int64_t>(n_epoch, 0) || n_epoch == 0, ErrorCategory::Argument,
          "train: N_swa must not exceed N_epoch");
  require(lookahead_k >= 1, ErrorCategory::Argument, "train: lookahead period must be >= 1");
  require(lookahead_alpha >= 0.0 && lookahead_alpha <= 1.0, ErrorCategory::Argument,
          "train: lookahead alpha must lie in [0,1]");
  require(early_stop_patience >= 1, ErrorCategory::Argument, "train: patience must be >= 1");
  require(log_every >= 1, ErrorCategory::Argument, "train: log_every must be >= 1");
  flags.validate();
  model.generator.validate();
  model.extractor.validate();
  model.discriminator.validate();
}

// ---------------------------------------------------------------------------
// MetricsLog
// ---------------------------------------------------------------------------

const std::vector<std::string>& MetricsLog::columns() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"epoch", "iteration"};
    for (const auto& f : LossBreakdown::field_names()) c.push_back(f);
    c.push_back("lambda");
    c.insert(c.end(), {"val_psnr_F", "val_psnr_H", "val_psnr_ens", "val_ssim_ens", "lr"});
    return c;
  }();
  return cols;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : std::string();
}

}  // namespace

std::string MetricsLog::to_csv() const {
  std::string out;
  const auto& cols = columns();
  for (size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ",";
    out += cols[i];
  }
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + std::to_string(r.iteration);
    for (const auto& f : r.losses.fields()) out += "," + fmt_opt(f);
    out += "," + fmt_double(r.losses.lambda);
    out += "," + fmt_opt(r.val_psnr_f) + "," + fmt_opt(r.val_psnr_h) + "," +
           fmt_opt(r.val_psnr_ens) + "," + fmt_opt(r.val_ssim_ens);
    out += "," + fmt_double(r.lr) + "\n";
  }
  return out;
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCategory::Io, "metrics: cannot write " + path.string());
  out << to_csv();
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

std::vector<Var> collect_params(std::initializer_list<const Generator*> gens,
                                std::initializer_list<const Extractor*> exts,
                                std::initializer_list<const Discriminator*> discs) {
  std::vector<Var> out;
  for (const auto* g : gens)
    g->visit_params([&](const std::string&, const Var& v) { out.push_back(v); });
  for (const auto* e : exts)
    e->visit_params([&](const std::string&, const Var& v) { out.push_back(v); });
  for (const auto* d : discs)
    d->visit_params([&](const std::string&, const Var& v) { out.push_back(v); });
  return out;
}

Tensor clip01(const Tensor& t) {
  Tensor out = t;
  float* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] = std::min(1.0f, std::max(0.0f, p[i]));
  return out;
}

Tensor as_nchw(const Tensor& img2d) {
  return Tensor::from({1, 1, img2d.dim(0), img2d.dim(1)}, img2d.vec());
}

Tensor as_hw(const Tensor& t4) {
  return Tensor::from({t4.dim(2), t4.dim(3)}, t4.vec());
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  RngStream init_rng = RngStream::derive(cfg.seed, "init");
  bundle_ = ModelBundle::create(cfg.model, init_rng);
  opt_gen_ = RAdam(collect_params({&bundle_.F, &bundle_.G}, {}, {}), cfg.optim);
  opt_disc_ = RAdam(collect_params({}, {}, {&bundle_.DX, &bundle_.DY}), cfg.optim);
  opt_ext_ = RAdam(collect_params({}, {&bundle_.H}, {}), cfg.optim);
  avg_.cycle_length = cfg_.cycle_length();
  avg_.swa_start_epoch = cfg_.swa_start();
  avg_.lookahead_period = cfg_.lookahead_k;
  avg_.lookahead_alpha = cfg_.lookahead_alpha;
  avg_.validate();
}

double Trainer::current_lr() const {
  return lr_at(std::min(global_step_, cfg_.total_steps()), std::max<int64_t>(1, cfg_.total_steps()),
               cfg_.optim);
}

void Trainer::freeze_all(bool frozen) {
  bool on = !frozen;
  bundle_.F.set_requires_grad(on);
  bundle_.G.set_requires_grad(on);
  bundle_.H.set_requires_grad(on);
  bundle_.DX.set_requires_grad(on);
  bundle_.DY.set_requires_grad(on);
}

namespace {

// Computes H(x) once per iteration in inference mode; the result is shared
// by the bypass term, the boosting term and nothing else.
void ensure_extractor_output(Extractor& h, const Var& x, std::optional<Tensor>& h_x) {
  if (h_x) return;
  NoGradGuard ng;
  h_x = h.forward(x, false)->value;
}

bool step_if_finite(const Var& loss, RAdam& opt, double lr) {
  if (!std::isfinite(static_cast<double>(loss->value[0]))) return false;
  backward(loss);
  opt.step(lr);
  return true;
}

}  // namespace

void Trainer::generator_step(const Var& x, const Var& y, LossBreakdown& bd,
                             std::optional<Tensor>& h_x) {
  double lr = current_lr();
  bundle_.F.set_requires_grad(true);
  bundle_.G.set_requires_grad(true);
  bundle_.H.set_requires_grad(false);
  bundle_.DX.set_requires_grad(false);
  bundle_.DY.set_requires_grad(false);
  opt_gen_.zero_grad();

  Var f_x = bundle_.F.forward(x, true);
  Var g_y = bundle_.G.forward(y, true);
  Var x_rec = bundle_.G.forward(f_x, true);
  Var y_rec = bundle_.F.forward(g_y, true);
  Var l_f = gen_adv_loss(bundle_.DY.forward(f_x, false));
  Var l_g = gen_adv_loss(bundle_.DX.forward(g_y, false));
  Var l_cycle = cycle_loss(x, x_rec, y, y_rec);
  Var l_nested = l_cycle;
  if (cfg_.flags.c) {
    ensure_extractor_output(bundle_.H, x, h_x);
    Var h_const = constant(*h_x);
    Var pseudo_clean = sub(x, h_const);
    Var pseudo_noisy = add(y, h_const);
    Var f_pseudo = bundle_.F.forward(pseudo_noisy, true);
    Var l_bypass = bypass_loss(f_x, pseudo_clean, y, f_pseudo);
    bd.l_bypass = l_bypass->value[0];
    l_nested = add(l_cycle, l_bypass);
  }
  Var l_gen = add(add(l_f, l_g), mul_scalar(l_nested, cfg_.lambda));

  bd.l_F = l_f->value[0];
  bd.l_G = l_g->value[0];
  bd.l_cycle = l_cycle->value[0];
  bd.l_nested = l_nested->value[0];
  bd.l_gen_total = l_gen->value[0];

  if (step_if_finite(l_gen, opt_gen_, lr)) {
    bundle_.F.clamp_constraints();
    bundle_.G.clamp_constraints();
  }
}

void Trainer::discriminator_step(const Var& x, const Var& y, std::optional<Tensor>& h_x,
                                 Tensor& f_x_out, Tensor& g_y_out, LossBreakdown& bd) {
  double lr = current_lr();
  bundle_.F.set_requires_grad(false);
  bundle_.G.set_requires_grad(false);
  bundle_.H.set_requires_grad(false);
  bundle_.DX.set_requires_grad(true);
  bundle_.DY.set_requires_grad(true);
  opt_disc_.zero_grad();

  // fresh fakes from the just-updated generators, gradients stopped
  {
    NoGradGuard ng;
    f_x_out = bundle_.F.forward(x, false)->value;
    g_y_out = bundle_.G.forward(y, false)->value;
  }
  Var l_dy = disc_hinge_loss(bundle_.DY.forward(y, true),
                             bundle_.DY.forward(constant(f_x_out), true));
  Var l_dx = disc_hinge_loss(bundle_.DX.forward(x, true),
                             bundle_.DX.forward(constant(g_y_out), true));
  Var l_dis = add(l_dy, l_dx);
  if (cfg_.flags.d) {
    ensure_extractor_output(bundle_.H, x, h_x);
    Tensor fake_clean(x->value.shape());
    Tensor fake_noisy(y->value.shape());
    for (int64_t i = 0; i < fake_clean.numel(); ++i) {
      fake_clean[i] = x->value[i] - (*h_x)[i];
      fake_noisy[i] = y->value[i] + (*h_x)[i];
    }
    Var l_bst = boost_loss(bundle_.DY.forward(constant(fake_clean), true),
                           bundle_.DX.forward(constant(fake_noisy), true));
    bd.l_bst = l_bst->value[0];
    l_dis = add(l_dis, l_bst);
  }
  bd.l_DY = l_dy->value[0];
  bd.l_DX = l_dx->value[0];
  bd.l_dis_total = l_dis->value[0];

  step_if_finite(l_dis, opt_disc_, lr);
}

void Trainer::extractor_step(const Var& x, const Var& y, const Tensor& f_x, const Tensor& g_y,
                             LossBreakdown& bd) {
  double lr = current_lr();
  bundle_.F.set_requires_grad(false);
  bundle_.G.set_requires_grad(false);
  bundle_.DX.set_requires_grad(false);
  bundle_.DY.set_requires_grad(false);
  bundle_.H.set_requires_grad(true);
  opt_ext_.zero_grad();

  Var h_x_train = bundle_.H.forward(x, true);
  Var l_pseudo = pseudo_noise_loss(h_x_train, x, constant(f_x));
  Var l_self = l_pseudo;
  if (cfg_.flags.e) {
    Var g_const = constant(g_y);
    Var h_gy = bundle_.H.forward(g_const, true);
    Var l_nc = noise_consistency_loss(g_const, y, h_gy);
    bd.l_nc = l_nc->value[0];
    l_self = add(l_pseudo, l_nc);
  }
  bd.l_pseudo = l_pseudo->value[0];
  bd.l_self_total = l_self->value[0];

  if (step_if_finite(l_self, opt_ext_, lr)) bundle_.H.clamp_constraints();
}

LogRow Trainer::train_iteration(const PatchBatch& batch_x, const PatchBatch& batch_y) {
  batch_x.validate();
  batch_y.validate();
  require(batch_x.domain == Domain::NoisyX && batch_y.domain == Domain::CleanY,
          ErrorCategory::Argument,
          "train_iteration: batches must be (noisy X, clean Y) from disjoint domains");
  require(batch_x.size() == cfg_.batch && batch_y.size() == cfg_.batch, ErrorCategory::Argument,
          "train_iteration: batch size does not match the configuration");

  ++iter_in_epoch_;
  int64_t t = iter_in_epoch_;
  double lr = current_lr();

  LossBreakdown bd;
  bd.lambda = cfg_.lambda;
  Var x = constant(batch_x.data);
  Var y = constant(batch_y.data);
  std::optional<Tensor> h_x;

  // (1) generators
  generator_step(x, y, bd, h_x);

  // (2) SWA absorb for the generator shadows
  if (epoch_ >= cfg_.swa_start() && cfg_.n_epoch > 0) {
    int64_t swa_step = t + (epoch_ - cfg_.swa_start()) * cfg_.n_iter;
    if (swa_step % avg_.cycle_length == 0) {
      swa_absorb_net(bundle_.phi_F, bundle_.F, avg_.n_models);
      swa_absorb_net(bundle_.phi_G, bundle_.G, avg_.n_models);
      ++avg_.n_models;
    }
  }

  // (3) discriminators, (4) extractor
  Tensor f_x_inf, g_y_inf;
  discriminator_step(x, y, h_x, f_x_inf, g_y_inf, bd);
  if (cfg_.flags.b) extractor_step(x, y, f_x_inf, g_y_inf, bd);

  freeze_all(false);
  ++global_step_;

  // (5) Lookahead synchronization for discriminators and extractor
  int64_t sync_step = t + epoch_ * cfg_.n_iter;
  if (sync_step % avg_.lookahead_period == 0) {
    lookahead_sync_net(bundle_.phi_DX, bundle_.DX, avg_.lookahead_alpha);
    lookahead_sync_net(bundle_.phi_DY, bundle_.DY, avg_.lookahead_alpha);
    lookahead_sync_net(bundle_.phi_H, bundle_.H, avg_.lookahead_alpha);
  }

  bool bad = !bd.all_finite() || bd.max_magnitude() > cfg_.divergence_threshold;
  divergence_streak_ = bad ? divergence_streak_ + 1 : 0;
  if (divergence_streak_ >= cfg_.divergence_patience) {
    fail(ErrorCategory::Divergence,
         "training diverged: losses non-finite or above " +
             std::to_string(cfg_.divergence_threshold) + " for " +
             std::to_string(divergence_streak_) + " consecutive iterations (l_gen_total=" +
             (bd.l_gen_total ? std::to_string(*bd.l_gen_total) : "n/a") + ")");
  }

  LogRow row;
  row.epoch = epoch_;
  row.iteration = t;
  row.losses = bd;
  row.lr = lr;
  return row;
}

MetricsRecord Trainer::validate(const ImageCache& cache, const DatasetSplit& split) {
  MetricsRecord rec;
  rec.gamma = cfg_.gamma;
  rec.ablation = cfg_.flags.str();
  if (!split.has_references()) {
    rec.available = false;  // training continues, early stopping disabled
    return rec;
  }
  rec.available = true;
  Generator& f_net = avg_.n_models > 0 ? bundle_.phi_F : bundle_.F;
  Extractor& h_net = bundle_.phi_H;
  for (size_t i = 0; i < split.val_noisy.size(); ++i) {
    const ImageTensor& noisy = cache.get(split.val_noisy[i], Domain::NoisyX);
    const ImageTensor& ref = cache.get(split.val_clean_ref[i], Domain::CleanY);
    Tensor x4 = as_nchw(noisy.pixels);
    Tensor f = f_net.infer(x4);
    Tensor h = h_net.infer(x4);
    Tensor ens = ensemble_denoise(x4, f, h, cfg_.gamma);
    Tensor f2 = clip01(as_hw(f));
    Tensor pc(x4.shape());
    for (int64_t j = 0; j < pc.numel(); ++j) pc[j] = x4[j] - h[j];
    Tensor h2 = clip01(as_hw(pc));
    Tensor e2 = clip01(as_hw(ens));
    rec.psnr_f.push_back(psnr(ref.pixels, f2, 1.0));
    rec.psnr_h.push_back(psnr(ref.pixels, h2, 1.0));
    rec.psnr_ens.push_back(psnr(ref.pixels, e2, 1.0));
    rec.ssim_f.push_back(ssim(ref.pixels, f2, 1.0));
    rec.ssim_h.push_back(ssim(ref.pixels, h2, 1.0));
    rec.ssim_ens.push_back(ssim(ref.pixels, e2, 1.0));
  }
  return rec;
}

void recompute_generator_stats(ModelBundle& bundle, const TrainConfig& cfg,
                               const ImageCache& cache, const DatasetSplit& split) {
  auto refresh = [&](Generator& net, const std::vector<std::string>& group, Domain domain,
                     const char* stream) {
    if (group.empty()) return;
    int64_t n_batches = (static_cast<int64_t>(group.size()) + cfg.batch - 1) / cfg.batch;
    RngStream rng = RngStream::derive(cfg.seed, stream);
    NoGradGuard ng;
    for (int64_t i = 0; i < n_batches; ++i) {
      // cumulative average of batch statistics
      net.set_norm_momentum(1.0f / static_cast<float>(i + 1));
      PatchBatch b = sample_batch(cache, group, domain, cfg.batch, rng);
      net.forward(constant(b.data), true);
    }
    net.set_norm_momentum(0.1f);
  };
  refresh(bundle.phi_F, split.noisy_group, Domain::NoisyX, "swa_stats.noisy");
  refresh(bundle.phi_G, split.clean_group, Domain::CleanY, "swa_stats.clean");
}

void Trainer::recompute_shadow_norm_stats(const ImageCache& cache, const DatasetSplit& split) {
  if (avg_.n_models == 0) return;
  recompute_generator_stats(bundle_, cfg_, cache, split);
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

namespace {

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lambda"] = c.lambda;
  j["gamma"] = c.gamma;
  j["batch"] = c.batch;
  j["patch"] = c.patch;
  j["n_epoch"] = c.n_epoch;
  j["n_iter"] = c.n_iter;
  j["n_swa"] = c.n_swa;
  j["cycle"] = c.cycle;
  j["lookahead_k"] = c.lookahead_k;
  j["lookahead_alpha"] = c.lookahead_alpha;
  j["seed"] = c.seed;
  j["flags"] = c.flags.str();
  j["early_stop_patience"] = c.early_stop_patience;
  j["log_every"] = c.log_every;
  j["augment"] = c.augment;
  j["lr_start"] = c.optim.lr_start;
  j["lr_end"] = c.optim.lr_end;
  j["beta1"] = c.optim.beta1;
  j["beta2"] = c.optim.beta2;
  j["eps"] = c.optim.eps;
  j["divergence_threshold"] = c.divergence_threshold;
  j["divergence_patience"] = c.divergence_patience;
  j["gen_base_width"] = c.model.generator.base_width;
  j["gen_res_blocks"] = c.model.generator.n_residual_blocks;
  j["ext_depth"] = c.model.extractor.depth;
  j["ext_width"] = c.model.extractor.width;
  j["disc_base_width"] = c.model.discriminator.base_width;
  j["disc_downsamples"] = c.model.discriminator.n_downsamples;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.at("lambda").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.batch = j.at("batch").get<int64_t>();
  c.patch = j.at("patch").get<int64_t>();
  c.n_epoch = j.at("n_epoch").get<int64_t>();
  c.n_iter = j.at("n_iter").get<int64_t>();
  c.n_swa = j.at("n_swa").get<int64_t>();
  c.cycle = j.at("cycle").get<int64_t>();
  c.lookahead_k = j.at("lookahead_k").get<int64_t>();
  c.lookahead_alpha = j.at("lookahead_alpha").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.flags = AblationFlags::parse(j.at("flags").get<std::string>());
  c.early_stop_patience = j.at("early_stop_patience").get<int64_t>();
  c.log_every = j.at("log_every").get<int64_t>();
  c.augment = j.at("augment").get<bool>();
  c.optim.lr_start = j.at("lr_start").get<double>();
  c.optim.lr_end = j.at("lr_end").get<double>();
  c.optim.beta1 = j.at("beta1").get<double>();
  c.optim.beta2 = j.at("beta2").get<double>();
  c.optim.eps = j.at("eps").get<double>();
  c.divergence_threshold = j.at("divergence_threshold").get<double>();
  c.divergence_patience = j.at("divergence_patience").get<int64_t>();
  c.model.generator.base_width = j.at("gen_base_width").get<int>();
  c.model.generator.n_residual_blocks = j.at("gen_res_blocks").get<int>();
  c.model.extractor.depth = j.at("ext_depth").get<int>();
  c.model.extractor.width = j.at("ext_width").get<int>();
  c.model.discriminator.base_width = j.at("disc_base_width").get<int>();
  c.model.discriminator.n_downsamples = j.at("disc_downsamples").get<int>();
  return c;
}

nlohmann::json opt_to_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

std::optional<double> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json log_to_json(const MetricsLog& log) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : log.rows) {
    nlohmann::json jr;
    jr["e"] = r.epoch;
    jr["i"] = r.iteration;
    nlohmann::json losses = nlohmann::json::array();
    for (const auto& f : r.losses.fields()) losses.push_back(opt_to_json(f));
    jr["l"] = std::move(losses);
    jr["lambda"] = r.losses.lambda;
    jr["vpf"] = opt_to_json(r.val_psnr_f);
    jr["vph"] = opt_to_json(r.val_psnr_h);
    jr["vpe"] = opt_to_json(r.val_psnr_ens);
    jr["vse"] = opt_to_json(r.val_ssim_ens);
    jr["lr"] = r.lr;
    rows.push_back(std::move(jr));
  }
  return rows;
}

MetricsLog log_from_json(const nlohmann::json& rows) {
  MetricsLog log;
  for (const auto& jr : rows) {
    LogRow r;
    r.epoch = jr.at("e").get<int64_t>();
    r.iteration = jr.at("i").get<int64_t>();
    const auto& losses = jr.at("l");
    std::vector<std::optional<double>> vals;
    for (const auto& v : losses) vals.push_back(opt_from_json(v));
    LossBreakdown& b = r.losses;
    std::optional<double>* slots[] = {&b.l_F,  &b.l_G,   &b.l_cycle,     &b.l_bypass,
                                      &b.l_nested, &b.l_gen_total, &b.l_DX, &b.l_DY,
                                      &b.l_bst, &b.l_dis_total, &b.l_pseudo, &b.l_nc,
                                      &b.l_self_total};
    for (size_t i = 0; i < vals.size() && i < 13; ++i) *slots[i] = vals[i];
    b.lambda = jr.at("lambda").get<double>();
    r.val_psnr_f = opt_from_json(jr.at("vpf"));
    r.val_psnr_h = opt_from_json(jr.at("vph"));
    r.val_psnr_ens = opt_from_json(jr.at("vpe"));
    r.val_ssim_ens = opt_from_json(jr.at("vse"));
    r.lr = jr.at("lr").get<double>();
    log.rows.push_back(std::move(r));
  }
  return log;
}

void add_bundle(ArchiveWriter& w, const ModelBundle& b, const std::string& prefix) {
  b.visit_params([&](const std::string& name, const Var& v) { w.add(prefix + name, v->value); });
  const_cast<ModelBundle&>(b).visit_buffers(
      [&](const std::string& name, Tensor& t) { w.add(prefix + "buf/" + name, t); });
}

void load_bundle(const Archive& a, ModelBundle& b, const std::string& prefix) {
  b.visit_params([&](const std::string& name, const Var& v) {
    const Tensor& t = a.get(prefix + name);
    require(t.same_shape(v->value), ErrorCategory::Checkpoint,
            "checkpoint: shape mismatch for " + name);
    v->value = t;
  });
  b.visit_buffers([&](const std::string& name, Tensor& t) {
    const Tensor& s = a.get(prefix + "buf/" + name);
    require(s.same_shape(t), ErrorCategory::Checkpoint,
            "checkpoint: shape mismatch for buffer " + name);
    t = s;
  });
}

void add_optimizer(ArchiveWriter& w, RAdam& opt, const std::string& prefix) {
  for (size_t i = 0; i < opt.size(); ++i) {
    w.add(prefix + "/m" + std::to_string(i), opt.moment1(i));
    w.add(prefix + "/v" + std::to_string(i), opt.moment2(i));
  }
}

void load_optimizer(const Archive& a, RAdam& opt, const std::string& prefix) {
  for (size_t i = 0; i < opt.size(); ++i) {
    opt.moment1(i) = a.get(prefix + "/m" + std::to_string(i));
    opt.moment2(i) = a.get(prefix + "/v" + std::to_string(i));
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path, const MetricsLog& log,
                              const ModelBundle* best, int64_t best_epoch, double best_metric,
                              int64_t epochs_since_best) const {
  ArchiveWriter w;
  add_bundle(w, bundle_, "model/");
  auto& self = const_cast<Trainer&>(*this);
  add_optimizer(w, self.opt_gen_, "opt_gen");
  add_optimizer(w, self.opt_disc_, "opt_disc");
  add_optimizer(w, self.opt_ext_, "opt_ext");
  if (best) add_bundle(w, *best, "best/");

  nlohmann::json meta;
  meta["config"] = config_to_json(cfg_);
  meta["next_epoch"] = epoch_ + 1;
  meta["global_step"] = global_step_;
  meta["n_models"] = avg_.n_models;
  meta["opt_steps"] = {opt_gen_.step_count(), opt_disc_.step_count(), opt_ext_.step_count()};
  meta["best_epoch"] = best_epoch;
  meta["best_metric"] = best_metric;
  meta["epochs_since_best"] = epochs_since_best;
  meta["has_best"] = best != nullptr;
  meta["rng_seed"] = cfg_.seed;
  meta["log"] = log_to_json(log);
  w.set_meta(meta.dump());
  w.write(path);
}

Trainer::Resumed Trainer::load_checkpoint(const std::filesystem::path& path) {
  Archive a = Archive::read(path);
  nlohmann::json meta = nlohmann::json::parse(a.meta_json);
  TrainConfig cfg = config_from_json(meta.at("config"));

  Resumed r;
  r.trainer = std::make_unique<Trainer>(cfg);
  Trainer& tr = *r.trainer;
  load_bundle(a, tr.bundle_, "model/");
  load_optimizer(a, tr.opt_gen_, "opt_gen");
  load_optimizer(a, tr.opt_disc_, "opt_disc");
  load_optimizer(a, tr.opt_ext_, "opt_ext");
  auto steps = meta.at("opt_steps").get<std::vector<int64_t>>();
  require(steps.size() == 3, ErrorCategory::Checkpoint, "checkpoint: bad optimizer step counts");
  tr.opt_gen_.set_step_count(steps[0]);
  tr.opt_disc_.set_step_count(steps[1]);
  tr.opt_ext_.set_step_count(steps[2]);
  tr.epoch_ = meta.at("next_epoch").get<int64_t>();
  tr.global_step_ = meta.at("global_step").get<int64_t>();
  tr.avg_.n_models = meta.at("n_models").get<int64_t>();

  r.log = log_from_json(meta.at("log"));
  r.best_epoch = meta.at("best_epoch").get<int64_t>();
  r.best_metric = meta.at("best_metric").get<double>();
  r.epochs_since_best = meta.at("epochs_since_best").get<int64_t>();
  if (meta.at("has_best").get<bool>()) {
    r.best = std::make_unique<ModelBundle>(tr.bundle_.clone());
    load_bundle(a, *r.best, "best/");
  }
  return r;
}

void save_deploy_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  ArchiveWriter w;
  add_bundle(w, bundle, "model/");
  nlohmann::json meta;
  meta["kind"] = "deploy";
  meta["model_config"] = {
      {"gen_base_width", bundle.config.generator.base_width},
      {"gen_res_blocks", bundle.config.generator.n_residual_blocks},
      {"ext_depth", bundle.config.extractor.depth},
      {"ext_width", bundle.config.extractor.width},
      {"disc_base_width", bundle.config.discriminator.base_width},
      {"disc_downsamples", bundle.config.discriminator.n_downsamples},
  };
  w.set_meta(meta.dump());
  w.write(path);
}

ModelBundle load_deploy_bundle(const std::filesystem::path& path) {
  Archive a = Archive::read(path);
  nlohmann::json meta = nlohmann::json::parse(a.meta_json);
  BundleConfig mc;
  const nlohmann::json* src = nullptr;
  if (meta.contains("model_config")) {
    src = &meta.at("model_config");
  } else {
    require(meta.contains("config"), ErrorCategory::Checkpoint,
            "checkpoint: no model configuration found");
    src = &meta.at("config");
  }
  mc.generator.base_width = src->at("gen_base_width").get<int>();
  mc.generator.n_residual_blocks = src->at("gen_res_blocks").get<int>();
  mc.extractor.depth = src->at("ext_depth").get<int>();
  mc.extractor.width = src->at("ext_width").get<int>();
  mc.discriminator.base_width = src->at("disc_base_width").get<int>();
  mc.discriminator.n_downsamples = src->at("disc_downsamples").get<int>();

  RngStream scratch(0);
  ModelBundle b = ModelBundle::create(mc, scratch);
  bool use_best = meta.contains("has_best") && meta.at("has_best").get<bool>();
  load_bundle(a, b, use_best ? "best/" : "model/");
  return b;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

FitResult fit(const TrainConfig& cfg, const DatasetSplit& split, const ImageCache& cache,
              const FitOptions& opts) {
  cfg.validate();
  split.validate();

  std::unique_ptr<Trainer> tr;
  MetricsLog log;
  std::unique_ptr<ModelBundle> best;
  int64_t best_epoch = -1;
  double best_metric = 0.0;
  int64_t since_best = 0;
  int64_t start_epoch = 0;

  if (!opts.resume_from.empty()) {
    auto resumed = Trainer::load_checkpoint(opts.resume_from);
    tr = std::move(resumed.trainer);
    log = std::move(resumed.log);
    best = std::move(resumed.best);
    best_epoch = resumed.best_epoch;
    best_metric = resumed.best_metric;
    since_best = resumed.epochs_since_best;
    start_epoch = tr->epoch();
  } else {
    tr = std::make_unique<Trainer>(cfg);
  }
  const TrainConfig& c = tr->config();
  uint64_t data_seed = hash_combine(hash_str("data"), c.seed);

  FitResult res;
  std::unique_ptr<ModelBundle> last_good =
      std::make_unique<ModelBundle>(tr->bundle().clone());

  bool stopped = false;
  for (int64_t e = start_epoch; e < c.n_epoch && !stopped; ++e) {
    tr->begin_epoch(e);
    LogRow last_row;
    bool have_last = false;
    try {
      for (int64_t t = 1; t <= c.n_iter; ++t) {
        RngStream rng = RngStream::derive(data_seed, "batch", static_cast<uint64_t>(e),
                                          static_cast<uint64_t>(t));
        SamplerOptions sopts;
        sopts.augment = c.augment;
        UnpairedBatch b = sample_unpaired_batch(cache, split, c.batch, rng, sopts);
        LogRow row = tr->train_iteration(b.x, b.y);
        if (t % c.log_every == 0 && t != c.n_iter) log.rows.push_back(row);
        if (t == c.n_iter) {
          last_row = row;
          have_last = true;
        }
      }
    } catch (const Error& err) {
      if (err.category() != ErrorCategory::Divergence) throw;
      res.diverged = true;
    }
    if (res.diverged) break;

    MetricsRecord rec = tr->validate(cache, split);
    if (have_last) {
      if (rec.available) {
        last_row.val_psnr_f = rec.psnr_f_stats().mean;
        last_row.val_psnr_h = rec.psnr_h_stats().mean;
        last_row.val_psnr_ens = rec.psnr_ens_stats().mean;
        last_row.val_ssim_ens = rec.ssim_ens_stats().mean;
      }
      log.rows.push_back(last_row);
    }
    res.epochs_run = e - start_epoch + 1;
    if (opts.on_epoch) opts.on_epoch(e, rec);

    bool can_score = rec.available || static_cast<bool>(opts.val_metric_override);
    if (can_score) {
      double metric = opts.val_metric_override ? opts.val_metric_override(rec)
                                               : rec.psnr_ens_stats().mean;
      if (best_epoch < 0 || metric > best_metric) {
        best_metric = metric;
        best_epoch = e;
        since_best = 0;
        best = std::make_unique<ModelBundle>(tr->bundle().clone());
        res.best_record = rec;
      } else if (++since_best >= c.early_stop_patience) {
        stopped = true;
      }
    }
    last_good = std::make_unique<ModelBundle>(tr->bundle().clone());
    if (!opts.out_dir.empty()) {
      std::filesystem::create_directories(opts.out_dir);
      tr->save_checkpoint(opts.out_dir / "checkpoint.iscl", log, best.get(), best_epoch,
                          best_metric, since_best);
      log.write_csv(opts.out_dir / "metrics.csv");
    }
  }

  res.early_stopped = stopped;
  res.log = std::move(log);
  res.best_epoch = best_epoch;
  res.best_metric = best_metric;
  if (res.diverged) {
    res.bundle = best ? std::move(best) : std::move(last_good);
  } else if (best) {
    res.bundle = std::move(best);
  } else {
    res.bundle = std::make_unique<ModelBundle>(tr->bundle().clone());
  }
  // Averaged generator statistics are refreshed on the returned bundle.
  if (!res.diverged && tr->averaging().n_models > 0)
    recompute_generator_stats(*res.bundle, c, cache, split);
  if (!opts.out_dir.empty()) res.log.write_csv(opts.out_dir / "metrics.csv");
  return res;
}

}  // namespace iscl
