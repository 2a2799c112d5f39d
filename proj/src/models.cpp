#include "iscl/models.hpp"

#include <algorithm>

namespace iscl {

namespace {

// Collects (name, var) pairs so nets of identical config align entry-wise.
struct ParamCollector {
  std::vector<std::pair<std::string, Var>> items;
  void operator()(const std::string& name, const Var& v) { items.emplace_back(name, v); }
};

template <typename Net>
void copy_net_impl(Net& dst, const Net& src) {
  ParamCollector a, b;
  dst.visit_params([&](const std::string& n, const Var& v) { a(n, v); });
  src.visit_params([&](const std::string& n, const Var& v) { b(n, v); });
  require(a.items.size() == b.items.size(), ErrorCategory::Shape, "copy_net: param count mismatch");
  for (size_t i = 0; i < a.items.size(); ++i) {
    require(a.items[i].first == b.items[i].first &&
                a.items[i].second->value.same_shape(b.items[i].second->value),
            ErrorCategory::Shape, "copy_net: incongruent parameter " + a.items[i].first);
    a.items[i].second->value = b.items[i].second->value;
  }
  std::vector<std::pair<std::string, Tensor*>> ba, bb;
  dst.visit_buffers([&](const std::string& n, Tensor& t) { ba.emplace_back(n, &t); });
  const_cast<Net&>(src).visit_buffers([&](const std::string& n, Tensor& t) { bb.emplace_back(n, &t); });
  require(ba.size() == bb.size(), ErrorCategory::Shape, "copy_net: buffer count mismatch");
  for (size_t i = 0; i < ba.size(); ++i) *ba[i].second = *bb[i].second;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& cfg, RngStream& rng) : cfg_(cfg) {
  cfg.validate();
  int w = cfg.base_width;
  head_ = {Conv2dLayer::create(1, w, 3, 1, 1, false, rng), BatchInstanceNorm::create(w)};
  down1_ = {Conv2dLayer::create(w, 2 * w, 3, 2, 1, false, rng), BatchInstanceNorm::create(2 * w)};
  down2_ = {Conv2dLayer::create(2 * w, 4 * w, 3, 2, 1, false, rng),
            BatchInstanceNorm::create(4 * w)};
  blocks_.resize(static_cast<size_t>(cfg.n_residual_blocks));
  for (auto& b : blocks_) {
    b.a = {Conv2dLayer::create(4 * w, 4 * w, 3, 1, 1, false, rng),
           BatchInstanceNorm::create(4 * w)};
    b.b = {Conv2dLayer::create(4 * w, 4 * w, 3, 1, 1, false, rng),
           BatchInstanceNorm::create(4 * w)};
  }
  up1_ = {Conv2dLayer::create(4 * w, 2 * w, 3, 1, 1, false, rng), BatchInstanceNorm::create(2 * w)};
  up2_ = {Conv2dLayer::create(2 * w, w, 3, 1, 1, false, rng), BatchInstanceNorm::create(w)};
  tail_ = Conv2dLayer::create(w, 1, 3, 1, 1, true, rng);
  // damp the output projection so the translator starts close to the
  // identity carried by the long skip
  for (int64_t i = 0; i < tail_.weight->value.numel(); ++i) tail_.weight->value[i] *= 0.1f;
}

Var Generator::forward(const Var& x, bool training) {
  require(x->value.rank() == 4 && x->value.dim(1) == 1, ErrorCategory::Shape,
          "generator: expects (m,1,H,W)");
  int64_t h = x->value.dim(2), w = x->value.dim(3);
  require(h >= 16 && w >= 16, ErrorCategory::Shape, "generator: input must be at least 16x16");

  Var t = relu(head_.norm(head_.conv(x), training));
  int64_t h1 = t->value.dim(2), w1 = t->value.dim(3);
  t = relu(down1_.norm(down1_.conv(t), training));
  int64_t h2 = t->value.dim(2), w2 = t->value.dim(3);
  t = relu(down2_.norm(down2_.conv(t), training));
  for (auto& b : blocks_) {
    Var r = relu(b.a.norm(b.a.conv(t), training));
    r = b.b.norm(b.b.conv(r), training);
    t = add(t, r);
  }
  t = crop2d(upsample_nearest2(t), h2, w2);
  t = relu(up1_.norm(up1_.conv(t), training));
  t = crop2d(upsample_nearest2(t), h1, w1);
  t = relu(up2_.norm(up2_.conv(t), training));
  Var correction = tail_(t);
  return add(x, correction);
}

Tensor Generator::infer(const Tensor& x) {
  NoGradGuard ng;
  return forward(constant(x), false)->value;
}

int64_t Generator::param_count() const {
  int64_t n = 0;
  visit_params([&](const std::string&, const Var& v) { n += v->value.numel(); });
  return n;
}

int Generator::receptive_field_radius() const {
  // one-sided reach in input pixels: every conv is 3x3 (radius 1 at the
  // layer's jump), nearest upsampling halves the jump back.
  int reach = 1;      // head conv, jump 1
  reach += 1;         // down1 conv at jump 1 (stride then doubles the jump)
  reach += 2;         // down2 conv at jump 2
  reach += 2 * cfg_.n_residual_blocks * 4;  // residual convs at jump 4
  reach += 2;         // up1 conv at jump 2
  reach += 1;         // up2 conv at jump 1
  reach += 1;         // tail conv at jump 1
  return reach;
}

void Generator::visit_params(const ParamVisitor& fn) const {
  head_.conv.visit_params("head", fn);
  head_.norm.visit_params("head_norm", fn);
  down1_.conv.visit_params("down1", fn);
  down1_.norm.visit_params("down1_norm", fn);
  down2_.conv.visit_params("down2", fn);
  down2_.norm.visit_params("down2_norm", fn);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "res" + std::to_string(i);
    blocks_[i].a.conv.visit_params(p + "a", fn);
    blocks_[i].a.norm.visit_params(p + "a_norm", fn);
    blocks_[i].b.conv.visit_params(p + "b", fn);
    blocks_[i].b.norm.visit_params(p + "b_norm", fn);
  }
  up1_.conv.visit_params("up1", fn);
  up1_.norm.visit_params("up1_norm", fn);
  up2_.conv.visit_params("up2", fn);
  up2_.norm.visit_params("up2_norm", fn);
  tail_.visit_params("tail", fn);
}

void Generator::visit_buffers(const BufferVisitor& fn) {
  BufferVisitor f = fn;
  head_.norm.visit_buffers("head_norm", f);
  down1_.norm.visit_buffers("down1_norm", f);
  down2_.norm.visit_buffers("down2_norm", f);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = "res" + std::to_string(i);
    blocks_[i].a.norm.visit_buffers(p + "a_norm", f);
    blocks_[i].b.norm.visit_buffers(p + "b_norm", f);
  }
  up1_.norm.visit_buffers("up1_norm", f);
  up2_.norm.visit_buffers("up2_norm", f);
}

void Generator::set_requires_grad(bool enabled) {
  visit_params([enabled](const std::string&, const Var& v) { v->requires_grad = enabled; });
}

void Generator::clamp_constraints() {
  head_.norm.clamp_rho();
  down1_.norm.clamp_rho();
  down2_.norm.clamp_rho();
  for (auto& b : blocks_) {
    b.a.norm.clamp_rho();
    b.b.norm.clamp_rho();
  }
  up1_.norm.clamp_rho();
  up2_.norm.clamp_rho();
}

void Generator::set_norm_momentum(float m) {
  head_.norm.momentum = m;
  down1_.norm.momentum = m;
  down2_.norm.momentum = m;
  for (auto& b : blocks_) {
    b.a.norm.momentum = m;
    b.b.norm.momentum = m;
  }
  up1_.norm.momentum = m;
  up2_.norm.momentum = m;
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

Extractor::Extractor(const ExtractorConfig& cfg, RngStream& rng) : cfg_(cfg) {
  cfg.validate();
  head_ = Conv2dLayer::create(1, cfg.width, 3, 1, 1, true, rng);
  mid_.resize(static_cast<size_t>(cfg.depth - 2));
  for (auto& m : mid_) {
    m.conv = Conv2dLayer::create(cfg.width, cfg.width, 3, 1, 1, false, rng);
    m.norm = BatchInstanceNorm::create(cfg.width);
  }
  tail_ = Conv2dLayer::create(cfg.width, 1, 3, 1, 1, true, rng);
  // damp the residual head: the initial noise estimate starts near zero
  for (int64_t i = 0; i < tail_.weight->value.numel(); ++i) tail_.weight->value[i] *= 0.1f;
}

Var Extractor::forward(const Var& x, bool training) {
  require(x->value.rank() == 4 && x->value.dim(1) == 1, ErrorCategory::Shape,
          "extractor: expects (m,1,H,W)");
  require(x->value.dim(2) >= 16 && x->value.dim(3) >= 16, ErrorCategory::Shape,
          "extractor: input must be at least 16x16");
  Var t = relu(head_(x));
  for (auto& m : mid_) t = relu(m.norm(m.conv(t), training));
  return tail_(t);
}

Tensor Extractor::infer(const Tensor& x) {
  NoGradGuard ng;
  return forward(constant(x), false)->value;
}

int64_t Extractor::param_count() const {
  int64_t n = 0;
  visit_params([&](const std::string&, const Var& v) { n += v->value.numel(); });
  return n;
}

void Extractor::visit_params(const ParamVisitor& fn) const {
  head_.visit_params("head", fn);
  for (size_t i = 0; i < mid_.size(); ++i) {
    std::string p = "mid" + std::to_string(i);
    mid_[i].conv.visit_params(p, fn);
    mid_[i].norm.visit_params(p + "_norm", fn);
  }
  tail_.visit_params("tail", fn);
}

void Extractor::visit_buffers(const BufferVisitor& fn) {
  BufferVisitor f = fn;
  for (size_t i = 0; i < mid_.size(); ++i)
    mid_[i].norm.visit_buffers("mid" + std::to_string(i) + "_norm", f);
}

void Extractor::set_requires_grad(bool enabled) {
  visit_params([enabled](const std::string&, const Var& v) { v->requires_grad = enabled; });
}

void Extractor::clamp_constraints() {
  for (auto& m : mid_) m.norm.clamp_rho();
}

void Extractor::set_norm_momentum(float m) {
  for (auto& b : mid_) b.norm.momentum = m;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& cfg, RngStream& rng) : cfg_(cfg) {
  cfg.validate();
  int in_ch = 1;
  int w = cfg.base_width;
  for (int i = 0; i < cfg.n_downsamples; ++i) {
    Stage s;
    s.conv = Conv2dLayer::create(in_ch, w, 3, 2, 1, i == 0, rng);
    s.has_norm = i > 0;  // first stage keeps raw statistics, PatchGAN style
    if (s.has_norm) s.norm = InstanceNormLayer::create(w);
    stages_.push_back(std::move(s));
    in_ch = w;
    w *= 2;
  }
  tail_ = Conv2dLayer::create(in_ch, 1, 3, 1, 1, true, rng);
}

Var Discriminator::forward(const Var& x, bool /*training*/) {
  require(x->value.rank() == 4 && x->value.dim(1) == 1, ErrorCategory::Shape,
          "discriminator: expects (m,1,H,W)");
  int rf = receptive_field();
  require(x->value.dim(2) >= rf && x->value.dim(3) >= rf, ErrorCategory::Shape,
          "discriminator: input smaller than receptive field (" + std::to_string(rf) + ")");
  Var t = x;
  for (auto& s : stages_) {
    t = s.conv(t);
    if (s.has_norm) t = s.norm(t);
    t = leaky_relu(t, 0.2);
  }
  t = tail_(t);                       // (m,1,h',w') score map
  return mean_axes(t, {1, 2, 3}, false);  // (m)
}

int64_t Discriminator::param_count() const {
  int64_t n = 0;
  visit_params([&](const std::string&, const Var& v) { n += v->value.numel(); });
  return n;
}

int Discriminator::receptive_field() const {
  int rf = 1, jump = 1;
  for (int i = 0; i < cfg_.n_downsamples; ++i) {
    rf += 2 * jump;
    jump *= 2;
  }
  rf += 2 * jump;  // tail conv
  return rf;
}

void Discriminator::visit_params(const ParamVisitor& fn) const {
  for (size_t i = 0; i < stages_.size(); ++i) {
    std::string p = "stage" + std::to_string(i);
    stages_[i].conv.visit_params(p, fn);
    if (stages_[i].has_norm) stages_[i].norm.visit_params(p + "_norm", fn);
  }
  tail_.visit_params("tail", fn);
}

void Discriminator::visit_buffers(const BufferVisitor&) {}

void Discriminator::set_requires_grad(bool enabled) {
  visit_params([enabled](const std::string&, const Var& v) { v->requires_grad = enabled; });
}

// ---------------------------------------------------------------------------
// ModelBundle
// ---------------------------------------------------------------------------

ModelBundle ModelBundle::create(const BundleConfig& cfg, RngStream& rng) {
  ModelBundle b;
  b.config = cfg;
  b.F = Generator(cfg.generator, rng);
  b.G = Generator(cfg.generator, rng);
  b.H = Extractor(cfg.extractor, rng);
  b.DX = Discriminator(cfg.discriminator, rng);
  b.DY = Discriminator(cfg.discriminator, rng);
  // Shadows start congruent to their live sets.
  RngStream scratch(0);
  b.phi_F = Generator(cfg.generator, scratch);
  b.phi_G = Generator(cfg.generator, scratch);
  b.phi_H = Extractor(cfg.extractor, scratch);
  b.phi_DX = Discriminator(cfg.discriminator, scratch);
  b.phi_DY = Discriminator(cfg.discriminator, scratch);
  copy_net(b.phi_F, b.F);
  copy_net(b.phi_G, b.G);
  copy_net(b.phi_H, b.H);
  copy_net(b.phi_DX, b.DX);
  copy_net(b.phi_DY, b.DY);
  return b;
}

ModelBundle ModelBundle::clone() const {
  RngStream scratch(0);
  ModelBundle out = ModelBundle::create(config, scratch);
  copy_net(out.F, F);
  copy_net(out.G, G);
  copy_net(out.H, H);
  copy_net(out.DX, DX);
  copy_net(out.DY, DY);
  copy_net(out.phi_F, phi_F);
  copy_net(out.phi_G, phi_G);
  copy_net(out.phi_H, phi_H);
  copy_net(out.phi_DX, phi_DX);
  copy_net(out.phi_DY, phi_DY);
  return out;
}

void ModelBundle::visit_params(const ParamVisitor& fn) const {
  auto sub = [&](const char* net, auto& n) {
    n.visit_params([&](const std::string& name, const Var& v) {
      fn(std::string(net) + "/" + name, v);
    });
  };
  sub("F", F);
  sub("G", G);
  sub("H", H);
  sub("DX", DX);
  sub("DY", DY);
  sub("phi_F", phi_F);
  sub("phi_G", phi_G);
  sub("phi_H", phi_H);
  sub("phi_DX", phi_DX);
  sub("phi_DY", phi_DY);
}

void ModelBundle::visit_buffers(const BufferVisitor& fn) {
  auto sub = [&](const char* net, auto& n) {
    n.visit_buffers([&](const std::string& name, Tensor& t) {
      fn(std::string(net) + "/" + name, t);
    });
  };
  sub("F", F);
  sub("G", G);
  sub("H", H);
  sub("DX", DX);
  sub("DY", DY);
  sub("phi_F", phi_F);
  sub("phi_G", phi_G);
  sub("phi_H", phi_H);
  sub("phi_DX", phi_DX);
  sub("phi_DY", phi_DY);
}

bool ModelBundle::all_finite() const {
  bool ok = true;
  visit_params([&](const std::string&, const Var& v) { ok = ok && v->value.all_finite(); });
  return ok;
}

uint64_t ModelBundle::param_hash(const std::string& net_prefix) const {
  uint64_t h = 0xcbf29ce484222325ull;
  visit_params([&](const std::string& name, const Var& v) {
    if (name.rfind(net_prefix + "/", 0) == 0)
      h = fnv1a(v->value.data(), static_cast<size_t>(v->value.numel()) * sizeof(float), h);
  });
  return h;
}

int ModelBundle::deploy_receptive_field_radius() const {
  return std::max(phi_F.receptive_field_radius(), phi_H.receptive_field_radius());
}

int64_t count_parameters(const Generator& g) { return g.param_count(); }
int64_t count_parameters(const Extractor& e) { return e.param_count(); }
int64_t count_parameters(const Discriminator& d) { return d.param_count(); }

void copy_net(Generator& dst, const Generator& src) { copy_net_impl(dst, src); }
void copy_net(Extractor& dst, const Extractor& src) { copy_net_impl(dst, src); }
void copy_net(Discriminator& dst, const Discriminator& src) { copy_net_impl(dst, src); }

}  // namespace iscl
