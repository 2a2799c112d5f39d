#pragma once

// Two-layer toy networks plus the per-objective gradient checks shared by
// the unit and acceptance suites. Analytic gradients come from the float32
// autodiff graph; the finite-difference side runs on a double-precision twin
// of the same networks (doubletoy.hpp) with a small step, so the comparison
// is limited by genuine gradient errors rather than float32 noise.

#include <functional>
#include <map>
#include <vector>

#include "iscl/autograd.hpp"
#include "iscl/losses.hpp"
#include "support/doubletoy.hpp"
#include "support/gradcheck.hpp"

namespace iscl::testing {

struct ToyNet {
  Var w1, b1, w2, b2;
  bool strided = false;

  static ToyNet create(uint64_t seed, int width = 4, bool strided = false) {
    RngStream rng(seed);
    ToyNet n;
    n.strided = strided;
    n.w1 = parameter(Tensor::randn({width, 1, 3, 3}, rng, 0.25f));
    n.b1 = parameter(Tensor::randn({width}, rng, 0.05f));
    n.w2 = parameter(Tensor::randn({1, width, 3, 3}, rng, 0.25f));
    n.b2 = parameter(Tensor::randn({1}, rng, 0.05f));
    return n;
  }

  // image -> image
  Var map(const Var& x) const {
    Var t = relu(conv2d(x, w1, &b1, 1, 1));
    return conv2d(t, w2, &b2, 1, 1);
  }

  // image -> per-sample score
  Var score(const Var& x) const {
    Var t = leaky_relu(conv2d(x, w1, &b1, strided ? 2 : 1, 1), 0.2);
    Var m = conv2d(t, w2, &b2, 1, 1);
    return mean_axes(m, {1, 2, 3}, false);
  }

  std::vector<Var> params() const { return {w1, b1, w2, b2}; }
};

struct ToyWorld {
  ToyNet F, G, H, DX, DY;
  Var x, y;

  static ToyWorld create(uint64_t seed) {
    ToyWorld w;
    w.F = ToyNet::create(seed + 1);
    w.G = ToyNet::create(seed + 2);
    w.H = ToyNet::create(seed + 3);
    w.DX = ToyNet::create(seed + 4, 4, true);
    w.DY = ToyNet::create(seed + 5, 4, true);
    RngStream rng(seed + 6);
    // inputs offset to ~1 so consistency gaps sit far from the |.| kink
    w.x = constant(Tensor::randn({2, 1, 4, 4}, rng, 0.15f, 1.0f));
    w.y = constant(Tensor::randn({2, 1, 4, 4}, rng, 0.15f, 1.0f));
    return w;
  }

  std::vector<Var> all_params(std::initializer_list<const ToyNet*> nets) const {
    std::vector<Var> out;
    for (const auto* n : nets)
      for (const auto& p : n->params()) out.push_back(p);
    return out;
  }
};

// The twelve objective terms of the training scheme.
enum class Obj { LF, LG, Cycle, Bypass, Nested, Gen, LDY, LDX, Bst, Pseudo, Nc, Self };

inline const std::vector<std::pair<Obj, const char*>>& objective_list() {
  static const std::vector<std::pair<Obj, const char*>> v = {
      {Obj::LF, "L_F"},         {Obj::LG, "L_G"},   {Obj::Cycle, "L_cycle"},
      {Obj::Bypass, "L_bypass"}, {Obj::Nested, "L_nested"}, {Obj::Gen, "L_gen"},
      {Obj::LDY, "L_DY"},       {Obj::LDX, "L_DX"}, {Obj::Bst, "L_bst"},
      {Obj::Pseudo, "L_pseudo"}, {Obj::Nc, "L_nc"}, {Obj::Self, "L_self"}};
  return v;
}

// Float graph with the gradient stops the training scheme mandates.
inline Var build_objective(ToyWorld& w, Obj o, double lambda) {
  auto h_const = [&w] { return detach(w.H.map(w.x)); };
  auto cycle = [&w] {
    return cycle_loss(w.x, w.G.map(w.F.map(w.x)), w.y, w.F.map(w.G.map(w.y)));
  };
  auto bypass = [&w, &h_const] {
    Var h = h_const();
    return bypass_loss(w.F.map(w.x), sub(w.x, h), w.y, w.F.map(add(w.y, h)));
  };
  auto pseudo = [&w] { return pseudo_noise_loss(w.H.map(w.x), w.x, w.F.map(w.x)); };
  auto nc = [&w] {
    Var g_y = w.G.map(w.y);
    return noise_consistency_loss(g_y, w.y, w.H.map(detach(g_y)));
  };
  switch (o) {
    case Obj::LF: return gen_adv_loss(w.DY.score(w.F.map(w.x)));
    case Obj::LG: return gen_adv_loss(w.DX.score(w.G.map(w.y)));
    case Obj::Cycle: return cycle();
    case Obj::Bypass: return bypass();
    case Obj::Nested: return add(cycle(), bypass());
    case Obj::Gen:
      return add(add(gen_adv_loss(w.DY.score(w.F.map(w.x))),
                     gen_adv_loss(w.DX.score(w.G.map(w.y)))),
                 mul_scalar(add(cycle(), bypass()), lambda));
    case Obj::LDY:
      return disc_hinge_loss(w.DY.score(w.y), w.DY.score(detach(w.F.map(w.x))));
    case Obj::LDX:
      return disc_hinge_loss(w.DX.score(w.x), w.DX.score(detach(w.G.map(w.y))));
    case Obj::Bst: {
      Var h = h_const();
      return boost_loss(w.DY.score(sub(w.x, h)), w.DX.score(add(w.y, h)));
    }
    case Obj::Pseudo: return pseudo();
    case Obj::Nc: return nc();
    case Obj::Self: return add(pseudo(), nc());
  }
  fail(ErrorCategory::Argument, "unknown objective");
}

// Parameters the objective is allowed to move (its learners, plus critics a
// generator gradient legitimately flows through).
inline std::vector<Var> objective_params(ToyWorld& w, Obj o) {
  switch (o) {
    case Obj::LF: return w.all_params({&w.F, &w.DY});
    case Obj::LG: return w.all_params({&w.G, &w.DX});
    case Obj::Cycle:
    case Obj::Nested:
    case Obj::Gen: return w.all_params({&w.F, &w.G});
    case Obj::Bypass: return w.all_params({&w.F});
    case Obj::LDY: return w.all_params({&w.DY});
    case Obj::LDX: return w.all_params({&w.DX});
    case Obj::Bst: return w.all_params({&w.DX, &w.DY});
    case Obj::Pseudo:
    case Obj::Nc:
    case Obj::Self: return w.all_params({&w.H});
  }
  return {};
}

// ---------------------------------------------------------------------------
// double-precision twin
// ---------------------------------------------------------------------------

struct DNet {
  DT w1, b1, w2, b2;
  bool strided = false;

  DT map(const DT& x) const { return dconv2d(drelu(dconv2d(x, w1, b1, 1, 1)), w2, b2, 1, 1); }
  std::vector<double> score(const DT& x) const {
    return dscore_mean(dconv2d(dleaky(dconv2d(x, w1, b1, strided ? 2 : 1, 1), 0.2), w2, b2, 1, 1));
  }
};

struct DWorld {
  DNet F, G, H, DX, DY;
  DT x, y;
  std::map<Node*, double*> bindings;  // float leaf -> first double coordinate

  static DWorld mirror(const ToyWorld& w) {
    DWorld d;
    auto net = [&d, &w](const ToyNet& s, DNet& t) {
      t.strided = s.strided;
      t.w1 = DT::of(s.w1->value);
      t.b1 = DT::of(s.b1->value);
      t.w2 = DT::of(s.w2->value);
      t.b2 = DT::of(s.b2->value);
      d.bindings[s.w1.get()] = t.w1.v.data();
      d.bindings[s.b1.get()] = t.b1.v.data();
      d.bindings[s.w2.get()] = t.w2.v.data();
      d.bindings[s.b2.get()] = t.b2.v.data();
    };
    net(w.F, d.F);
    net(w.G, d.G);
    net(w.H, d.H);
    net(w.DX, d.DX);
    net(w.DY, d.DY);
    d.x = DT::of(w.x->value);
    d.y = DT::of(w.y->value);
    return d;
  }

  double eval(Obj o, double lambda) const {
    auto cycle = [this] {
      return dmae(x, G.map(F.map(x))) + dmae(y, F.map(G.map(y)));
    };
    auto bypass = [this] {
      DT h = H.map(x);
      return dmae(F.map(x), dsub(x, h)) + dmae(y, F.map(dadd(y, h)));
    };
    auto pseudo = [this] { return dmae(H.map(x), dsub(x, F.map(x))); };
    auto nc = [this] {
      DT gy = G.map(y);
      return dmae(dsub(gy, y), H.map(gy));
    };
    switch (o) {
      case Obj::LF: return -dmean_vec(DY.score(F.map(x)));
      case Obj::LG: return -dmean_vec(DX.score(G.map(y)));
      case Obj::Cycle: return cycle();
      case Obj::Bypass: return bypass();
      case Obj::Nested: return cycle() + bypass();
      case Obj::Gen:
        return -dmean_vec(DY.score(F.map(x))) - dmean_vec(DX.score(G.map(y))) +
               lambda * (cycle() + bypass());
      case Obj::LDY:
        return dhinge_real(DY.score(y)) + dhinge_fake(DY.score(F.map(x)));
      case Obj::LDX:
        return dhinge_real(DX.score(x)) + dhinge_fake(DX.score(G.map(y)));
      case Obj::Bst: {
        DT h = H.map(x);
        return dhinge_fake(DY.score(dsub(x, h))) + dhinge_fake(DX.score(dadd(y, h)));
      }
      case Obj::Pseudo: return pseudo();
      case Obj::Nc: return nc();
      case Obj::Self: return pseudo() + nc();
    }
    return 0.0;
  }
};

struct FdCheck {
  double rel_err = 0.0;
  double analytic_norm = 0.0;
  double fd_norm = 0.0;
};

// Central finite differences on the double twin vs float32 autodiff.
inline FdCheck fd_check_objective(ToyWorld& w, Obj o, double lambda, double h = 1e-5) {
  std::vector<Var> wrt = objective_params(w, o);
  for (const auto& p : wrt) p->drop_grad();
  Var loss = build_objective(w, o, lambda);
  backward(loss);

  DWorld d = DWorld::mirror(w);
  double diff2 = 0.0, na = 0.0, nf = 0.0;
  for (const auto& p : wrt) {
    double* coords = d.bindings.at(p.get());
    bool has_grad = p->grad.same_shape(p->value);
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      double orig = coords[i];
      coords[i] = orig + h;
      double up = d.eval(o, lambda);
      coords[i] = orig - h;
      double down = d.eval(o, lambda);
      coords[i] = orig;
      double fd = (up - down) / (2.0 * h);
      double an = has_grad ? static_cast<double>(p->grad[i]) : 0.0;
      diff2 += (fd - an) * (fd - an);
      na += an * an;
      nf += fd * fd;
    }
  }
  FdCheck out;
  out.analytic_norm = std::sqrt(na);
  out.fd_norm = std::sqrt(nf);
  double denom = out.analytic_norm + out.fd_norm;
  out.rel_err = denom > 1e-12 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
  return out;
}

struct DetachmentCheck {
  const char* name;
  std::function<Var()> build;
  std::vector<Var> stopped;  // gradient w.r.t. these must be exactly zero
};

inline std::vector<DetachmentCheck> detachment_checks(ToyWorld& w) {
  return {
      {"bypass consistency stops the extractor",
       [&w] {
         Var h = detach(w.H.map(w.x));
         return bypass_loss(w.F.map(w.x), sub(w.x, h), w.y, w.F.map(add(w.y, h)));
       },
       w.all_params({&w.H})},
      {"boosting stops the extractor",
       [&w] {
         Var h = detach(w.H.map(w.x));
         return boost_loss(w.DY.score(sub(w.x, h)), w.DX.score(add(w.y, h)));
       },
       w.all_params({&w.H})},
      {"pseudo-noise label stops the denoiser",
       [&w] { return pseudo_noise_loss(w.H.map(w.x), w.x, w.F.map(w.x)); },
       w.all_params({&w.F})},
      {"noise consistency stops the noiser",
       [&w] {
         Var g_y = w.G.map(w.y);
         return noise_consistency_loss(g_y, w.y, w.H.map(detach(g_y)));
       },
       w.all_params({&w.G})},
  };
}

}  // namespace iscl::testing
