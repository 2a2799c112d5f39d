#include "iscl/autograd.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace iscl {

namespace {

thread_local bool g_grad_enabled = true;

int64_t broadcast_dim(int64_t a, int64_t b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  fail(ErrorCategory::Shape, std::string(op) + ": incompatible broadcast dims");
}

std::vector<int64_t> broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rank() == b.rank(), ErrorCategory::Shape,
          std::string(op) + ": rank mismatch " + Tensor::shape_str(a.shape()) + " vs " +
              Tensor::shape_str(b.shape()));
  std::vector<int64_t> out(a.rank());
  for (size_t i = 0; i < a.rank(); ++i) out[i] = broadcast_dim(a.dim(i), b.dim(i), op);
  return out;
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size(), 0);
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

// Iterates the broadcasted output index space, applying f(out_i, a_i, b_i).
template <typename F>
void for_broadcast(const std::vector<int64_t>& out_shape, const Tensor& a, const Tensor& b,
                   F&& f) {
  size_t r = out_shape.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  auto sa = strides_of(a.shape());
  auto sb = strides_of(b.shape());
  // Fast path: identical shapes.
  if (a.same_shape(b) && a.shape() == out_shape) {
    int64_t n = Tensor::count(out_shape);
    for (int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t n = Tensor::count(out_shape);
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t ia = 0, ib = 0;
    for (size_t d = 0; d < r; ++d) {
      ia += (a.dim(d) == 1 ? 0 : idx[d]) * sa[d];
      ib += (b.dim(d) == 1 ? 0 : idx[d]) * sb[d];
    }
    f(lin, ia, ib);
    for (size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
}

// True when `small` has shape (1, C, 1, 1) or (N, C, 1, 1) against the full
// NCHW tensor `big`; this is the per-channel/per-instance parameter pattern
// every normalization layer hits, so it gets dedicated loops.
bool is_plane_of(const Tensor& small, const Tensor& big) {
  return small.rank() == 4 && big.rank() == 4 && small.dim(2) == 1 && small.dim(3) == 1 &&
         small.dim(1) == big.dim(1) && (small.dim(0) == 1 || small.dim(0) == big.dim(0));
}

// Accumulates grad (shaped like out) into a parent tensor, summing over
// broadcast dimensions.
void accumulate_reduced(const Tensor& grad, Tensor& parent_grad, const Tensor& parent_value,
                        double scale = 1.0) {
  const float* g = grad.data();
  float* p = parent_grad.data();
  int64_t n = grad.numel();
  float s = static_cast<float>(scale);
  if (parent_value.same_shape(grad)) {
    if (scale == 1.0) {
      for (int64_t i = 0; i < n; ++i) p[i] += g[i];
    } else {
      for (int64_t i = 0; i < n; ++i) p[i] += s * g[i];
    }
    return;
  }
  if (is_plane_of(parent_value, grad)) {
    int64_t nn = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    bool shared = parent_value.dim(0) == 1;
    for (int64_t i = 0; i < nn; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const float* gp = g + (i * c + ch) * hw;
        double acc = 0.0;
        for (int64_t k = 0; k < hw; ++k) acc += gp[k];
        p[(shared ? 0 : i) * c + ch] += static_cast<float>(scale * acc);
      }
    return;
  }
  size_t r = grad.rank();
  auto sp = strides_of(parent_value.shape());
  std::vector<int64_t> idx(r, 0);
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t ip = 0;
    for (size_t d = 0; d < r; ++d) ip += (parent_value.dim(d) == 1 ? 0 : idx[d]) * sp[d];
    p[ip] += s * g[lin];
    for (size_t d = r; d-- > 0;) {
      if (++idx[d] < grad.dim(d)) break;
      idx[d] = 0;
    }
  }
}

void sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, float alpha,
           const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
           int64_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make_op(const char* op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& p : parents)
      if (p && p->requires_grad) needs = true;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void backward(const Var& root) {
  require(root != nullptr, ErrorCategory::Argument, "backward: null root");
  require(root->value.numel() == 1, ErrorCategory::Argument, "backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS to get a reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* p = node->parents[child].get();
      ++child;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad().fill(1.0f);
  for (size_t i = order.size(); i-- > 0;) {
    Node* n = order[i];
    if (n->backprop) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise / broadcast
// ---------------------------------------------------------------------------

namespace {

// Shared evaluator for the broadcasting binary ops with fast paths for
// same-shape operands and (N|1, C, 1, 1) parameter planes.
template <typename OpFn>
Tensor eval_binary(const Tensor& a, const Tensor& b, const char* name, OpFn&& f) {
  auto shape = broadcast_shape(a, b, name);
  Tensor out(shape);
  float* o = out.data();
  const float* pa = a.data();
  const float* pb = b.data();
  if (a.same_shape(b)) {
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
    return out;
  }
  if (is_plane_of(b, a)) {
    int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    bool shared = b.dim(0) == 1;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        float s = pb[(shared ? 0 : i) * c + ch];
        const float* ap = pa + (i * c + ch) * hw;
        float* op = o + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) op[k] = f(ap[k], s);
      }
    return out;
  }
  if (is_plane_of(a, b)) {
    int64_t n = b.dim(0), c = b.dim(1), hw = b.dim(2) * b.dim(3);
    bool shared = a.dim(0) == 1;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        float s = pa[(shared ? 0 : i) * c + ch];
        const float* bp = pb + (i * c + ch) * hw;
        float* op = o + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) op[k] = f(s, bp[k]);
      }
    return out;
  }
  for_broadcast(shape, a, b, [&](int64_t i, int64_t ia, int64_t ib) { o[i] = f(pa[ia], pb[ib]); });
  return out;
}

// d(out)/d(x) for mul where `other` is the co-factor: accumulates
// grad * other_broadcast into x's gradient, reduced to x's shape.
void mul_backward_side(const Tensor& grad, const Tensor& other, Node& x) {
  Tensor& xg = x.ensure_grad();
  const float* g = grad.data();
  const float* po = other.data();
  float* px = xg.data();
  if (x.value.same_shape(grad) && other.same_shape(grad)) {
    int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) px[i] += g[i] * po[i];
    return;
  }
  if (x.value.same_shape(grad) && is_plane_of(other, grad)) {
    int64_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    bool shared = other.dim(0) == 1;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        float s = po[(shared ? 0 : i) * c + ch];
        const float* gp = g + (i * c + ch) * hw;
        float* xp = px + (i * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) xp[k] += gp[k] * s;
      }
    return;
  }
  if (is_plane_of(x.value, grad) && other.same_shape(grad)) {
    int64_t n = grad.dim(0), c = grad.dim(1), hw = grad.dim(2) * grad.dim(3);
    bool shared = x.value.dim(0) == 1;
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const float* gp = g + (i * c + ch) * hw;
        const float* op = po + (i * c + ch) * hw;
        double acc = 0.0;
        for (int64_t k = 0; k < hw; ++k) acc += static_cast<double>(gp[k]) * op[k];
        px[(shared ? 0 : i) * c + ch] += static_cast<float>(acc);
      }
    return;
  }
  // generic fallback
  Tensor tmp(grad.shape());
  float* pt = tmp.data();
  const Tensor& gshape = grad;
  for_broadcast(gshape.shape(), x.value, other,
                [&](int64_t i, int64_t, int64_t io) { pt[i] = g[i] * po[io]; });
  accumulate_reduced(tmp, xg, x.value);
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tensor out = eval_binary(a->value, b->value, "add", [](float x, float y) { return x + y; });
  return make_op("add", std::move(out), {a, b}, [](Node& n) {
    auto& a = n.parents[0];
    auto& b = n.parents[1];
    if (a->requires_grad) accumulate_reduced(n.grad, a->ensure_grad(), a->value);
    if (b->requires_grad) accumulate_reduced(n.grad, b->ensure_grad(), b->value);
  });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = eval_binary(a->value, b->value, "sub", [](float x, float y) { return x - y; });
  return make_op("sub", std::move(out), {a, b}, [](Node& n) {
    auto& a = n.parents[0];
    auto& b = n.parents[1];
    if (a->requires_grad) accumulate_reduced(n.grad, a->ensure_grad(), a->value);
    if (b->requires_grad) accumulate_reduced(n.grad, b->ensure_grad(), b->value, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = eval_binary(a->value, b->value, "mul", [](float x, float y) { return x * y; });
  return make_op("mul", std::move(out), {a, b}, [](Node& n) {
    auto& a = n.parents[0];
    auto& b = n.parents[1];
    if (a->requires_grad) mul_backward_side(n.grad, b->value, *a);
    if (b->requires_grad) mul_backward_side(n.grad, a->value, *b);
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  float fs = static_cast<float>(s);
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] + fs;
  return make_op("add_scalar", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    for (int64_t i = 0; i < n.value.numel(); ++i) pg[i] += g[i];
  });
}

Var mul_scalar(const Var& a, double s) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  float fs = static_cast<float>(s);
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] * fs;
  return make_op("mul_scalar", std::move(out), {a}, [s](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    float fs = static_cast<float>(s);
    for (int64_t i = 0; i < n.value.numel(); ++i) pg[i] += fs * g[i];
  });
}

Var relu(const Var& a) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  return make_op("relu", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* pa = a->value.data();
    for (int64_t i = 0; i < n.value.numel(); ++i)
      if (pa[i] > 0.0f) pg[i] += g[i];
  });
}

Var leaky_relu(const Var& a, double slope) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  float fs = static_cast<float>(slope);
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] > 0.0f ? pa[i] : fs * pa[i];
  return make_op("leaky_relu", std::move(out), {a}, [slope](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* pa = a->value.data();
    float fs = static_cast<float>(slope);
    for (int64_t i = 0; i < n.value.numel(); ++i) pg[i] += (pa[i] > 0.0f ? 1.0f : fs) * g[i];
  });
}

Var abs_op(const Var& a) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = std::fabs(pa[i]);
  return make_op("abs", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* pa = a->value.data();
    // subgradient 0 at the kink
    for (int64_t i = 0; i < n.value.numel(); ++i)
      pg[i] += (pa[i] > 0.0f ? 1.0f : (pa[i] < 0.0f ? -1.0f : 0.0f)) * g[i];
  });
}

Var square(const Var& a) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = pa[i] * pa[i];
  return make_op("square", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* pa = a->value.data();
    for (int64_t i = 0; i < n.value.numel(); ++i) pg[i] += 2.0f * pa[i] * g[i];
  });
}

Var rsqrt_eps(const Var& a, double eps) {
  Tensor out(a->value.shape());
  const float* pa = a->value.data();
  float* o = out.data();
  float fe = static_cast<float>(eps);
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = 1.0f / std::sqrt(pa[i] + fe);
  return make_op("rsqrt_eps", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    const float* o = n.value.data();
    for (int64_t i = 0; i < n.value.numel(); ++i) pg[i] += -0.5f * o[i] * o[i] * o[i] * g[i];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var mean_all(const Var& a) {
  double s = 0.0;
  const float* pa = a->value.data();
  int64_t n = a->value.numel();
  require(n > 0, ErrorCategory::Argument, "mean_all: empty tensor");
  for (int64_t i = 0; i < n; ++i) s += pa[i];
  Tensor out = Tensor::from({1}, {static_cast<float>(s / n)});
  return make_op("mean_all", std::move(out), {a}, [](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    float g = n.grad[0] / static_cast<float>(a->value.numel());
    float* pg = a->ensure_grad().data();
    for (int64_t i = 0; i < a->value.numel(); ++i) pg[i] += g;
  });
}

Var mean_axes(const Var& a, const std::vector<int>& axes, bool keepdim) {
  const auto& shape = a->value.shape();
  std::vector<bool> reduce(shape.size(), false);
  for (int ax : axes) {
    require(ax >= 0 && ax < static_cast<int>(shape.size()), ErrorCategory::Argument,
            "mean_axes: axis out of range");
    reduce[static_cast<size_t>(ax)] = true;
  }
  std::vector<int64_t> kept_shape(shape.size());
  int64_t count = 1;
  for (size_t d = 0; d < shape.size(); ++d) {
    kept_shape[d] = reduce[d] ? 1 : shape[d];
    if (reduce[d]) count *= shape[d];
  }
  require(count > 0, ErrorCategory::Argument, "mean_axes: empty reduction");

  Tensor out(kept_shape);
  auto out_strides = strides_of(kept_shape);
  const float* pa = a->value.data();
  std::vector<double> acc(static_cast<size_t>(out.numel()), 0.0);
  bool nchw = shape.size() == 4;
  bool red_hw = nchw && !reduce[1] && reduce[2] && reduce[3];
  if (red_hw) {
    // {2,3} or {0,2,3}: contiguous plane sums
    int64_t n = shape[0], c = shape[1], hw = shape[2] * shape[3];
    bool over_batch = reduce[0];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ch = 0; ch < c; ++ch) {
        const float* p = pa + (i * c + ch) * hw;
        double s = 0.0;
        for (int64_t k = 0; k < hw; ++k) s += p[k];
        acc[static_cast<size_t>((over_batch ? 0 : i) * c + ch)] += s;
      }
  } else if (nchw && !reduce[0] && reduce[1] && reduce[2] && reduce[3]) {
    // {1,2,3}: per-sample sums (discriminator score reduction)
    int64_t n = shape[0], chw = shape[1] * shape[2] * shape[3];
    for (int64_t i = 0; i < n; ++i) {
      const float* p = pa + i * chw;
      double s = 0.0;
      for (int64_t k = 0; k < chw; ++k) s += p[k];
      acc[static_cast<size_t>(i)] = s;
    }
  } else {
    std::vector<int64_t> idx(shape.size(), 0);
    int64_t n = a->value.numel();
    for (int64_t lin = 0; lin < n; ++lin) {
      int64_t oi = 0;
      for (size_t d = 0; d < shape.size(); ++d)
        if (!reduce[d]) oi += idx[d] * out_strides[d];
      acc[static_cast<size_t>(oi)] += pa[lin];
      for (size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  float* o = out.data();
  double inv = 1.0 / static_cast<double>(count);
  for (int64_t i = 0; i < out.numel(); ++i)
    o[i] = static_cast<float>(acc[static_cast<size_t>(i)] * inv);

  std::vector<int64_t> final_shape;
  if (keepdim) {
    final_shape = kept_shape;
  } else {
    for (size_t d = 0; d < shape.size(); ++d)
      if (!reduce[d]) final_shape.push_back(shape[d]);
    if (final_shape.empty()) final_shape = {1};
    out = Tensor::from(final_shape, out.vec());
  }

  std::vector<bool> red = reduce;
  return make_op("mean_axes", std::move(out), {a}, [red, kept_shape, count](Node& n) {
    auto& a = n.parents[0];
    if (!a->requires_grad) return;
    const auto& shape = a->value.shape();
    auto out_strides = strides_of(kept_shape);
    float* pg = a->ensure_grad().data();
    const float* g = n.grad.data();
    float inv = 1.0f / static_cast<float>(count);
    bool nchw = shape.size() == 4;
    if (nchw && !red[1] && red[2] && red[3]) {
      int64_t nn = shape[0], c = shape[1], hw = shape[2] * shape[3];
      bool over_batch = red[0];
      for (int64_t i = 0; i < nn; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
          float gv = g[(over_batch ? 0 : i) * c + ch] * inv;
          float* p = pg + (i * c + ch) * hw;
          for (int64_t k = 0; k < hw; ++k) p[k] += gv;
        }
      return;
    }
    if (nchw && !red[0] && red[1] && red[2] && red[3]) {
      int64_t nn = shape[0], chw = shape[1] * shape[2] * shape[3];
      for (int64_t i = 0; i < nn; ++i) {
        float gv = g[i] * inv;
        float* p = pg + i * chw;
        for (int64_t k = 0; k < chw; ++k) p[k] += gv;
      }
      return;
    }
    std::vector<int64_t> idx(shape.size(), 0);
    int64_t total = a->value.numel();
    for (int64_t lin = 0; lin < total; ++lin) {
      int64_t oi = 0;
      for (size_t d = 0; d < shape.size(); ++d)
        if (!red[d]) oi += idx[d] * out_strides[d];
      pg[lin] += g[oi] * inv;
      for (size_t d = shape.size(); d-- > 0;) {
        if (++idx[d] < shape[d]) break;
        idx[d] = 0;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

void im2col(const float* x, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int pad, float* cols) {
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (w + 2 * pad - kw) / stride + 1;
  int64_t col = 0;
  for (int64_t c = 0; c < c_in; ++c) {
    const float* xc = x + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        float* row = cols + col * ho * wo;
        ++col;
        for (int64_t oi = 0; oi < ho; ++oi) {
          int64_t ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) {
            for (int64_t oj = 0; oj < wo; ++oj) row[oi * wo + oj] = 0.0f;
            continue;
          }
          const float* xr = xc + ii * w;
          for (int64_t oj = 0; oj < wo; ++oj) {
            int64_t jj = oj * stride + kj - pad;
            row[oi * wo + oj] = (jj < 0 || jj >= w) ? 0.0f : xr[jj];
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int pad, float* x_accum) {
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (w + 2 * pad - kw) / stride + 1;
  int64_t col = 0;
  for (int64_t c = 0; c < c_in; ++c) {
    float* xc = x_accum + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const float* row = cols + col * ho * wo;
        ++col;
        for (int64_t oi = 0; oi < ho; ++oi) {
          int64_t ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          float* xr = xc + ii * w;
          for (int64_t oj = 0; oj < wo; ++oj) {
            int64_t jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < w) xr[jj] += row[oi * wo + oj];
          }
        }
      }
    }
  }
}

Var conv2d(const Var& x, const Var& w, const Var* bias, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require(xv.rank() == 4 && wv.rank() == 4, ErrorCategory::Shape, "conv2d: expects 4-D tensors");
  int64_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  int64_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  require(wv.dim(1) == cin, ErrorCategory::Shape,
          "conv2d: input channels " + std::to_string(cin) + " do not match weight " +
              std::to_string(wv.dim(1)));
  require(stride >= 1 && pad >= 0, ErrorCategory::Argument, "conv2d: bad stride/pad");
  int64_t ho = (h + 2 * pad - kh) / stride + 1;
  int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  require(ho >= 1 && wo >= 1, ErrorCategory::Shape, "conv2d: input too small for kernel");

  int64_t k = cin * kh * kw;
  Tensor out({n, cout, ho, wo});
  // Tiny convolutions take a direct double-accumulation path: cheaper than a
  // GEMM call at these sizes and precise enough for finite-difference work.
  bool tiny = xv.numel() <= 4096 && wv.numel() <= 8192;
  if (tiny) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t oc = 0; oc < cout; ++oc)
        for (int64_t oi = 0; oi < ho; ++oi)
          for (int64_t oj = 0; oj < wo; ++oj) {
            double acc = 0.0;
            for (int64_t ic = 0; ic < cin; ++ic)
              for (int64_t ki = 0; ki < kh; ++ki) {
                int64_t ii = oi * stride + ki - pad;
                if (ii < 0 || ii >= h) continue;
                const float* xr = xv.data() + ((i * cin + ic) * h + ii) * wd;
                const float* wr = wv.data() + ((oc * cin + ic) * kh + ki) * kw;
                for (int64_t kj = 0; kj < kw; ++kj) {
                  int64_t jj = oj * stride + kj - pad;
                  if (jj < 0 || jj >= wd) continue;
                  acc += static_cast<double>(xr[jj]) * wr[kj];
                }
              }
            out[((i * cout + oc) * ho + oi) * wo + oj] = static_cast<float>(acc);
          }
  } else {
    std::vector<float> cols(static_cast<size_t>(k * ho * wo));
    for (int64_t i = 0; i < n; ++i) {
      im2col(xv.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad, cols.data());
      sgemm(false, false, cout, ho * wo, k, 1.0f, wv.data(), k, cols.data(), ho * wo, 0.0f,
            out.data() + i * cout * ho * wo, ho * wo);
    }
  }
  if (bias) {
    const Tensor& bv = (*bias)->value;
    require(bv.numel() == cout, ErrorCategory::Shape, "conv2d: bias size mismatch");
    for (int64_t i = 0; i < n; ++i)
      for (int64_t c = 0; c < cout; ++c) {
        float b = bv[c];
        float* o = out.data() + (i * cout + c) * ho * wo;
        for (int64_t j = 0; j < ho * wo; ++j) o[j] += b;
      }
  }

  std::vector<Var> parents = {x, w};
  if (bias) parents.push_back(*bias);
  return make_op("conv2d", std::move(out), std::move(parents), [stride, pad](Node& nd) {
    auto& x = nd.parents[0];
    auto& w = nd.parents[1];
    Var bias = nd.parents.size() > 2 ? nd.parents[2] : nullptr;
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    int64_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    int64_t cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int64_t ho = nd.value.dim(2), wo = nd.value.dim(3);
    int64_t k = cin * kh * kw;
    const float* gout = nd.grad.data();

    std::vector<float> cols;
    if (w->requires_grad || x->requires_grad) cols.resize(static_cast<size_t>(k * ho * wo));

    if (w->requires_grad) {
      float* gw = w->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) {
        im2col(xv.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad, cols.data());
        // gW (cout,k) += gOut_i (cout, ho*wo) * cols^T (ho*wo, k)
        sgemm(false, true, cout, k, ho * wo, 1.0f, gout + i * cout * ho * wo, ho * wo,
              cols.data(), ho * wo, 1.0f, gw, k);
      }
    }
    if (bias && bias->requires_grad) {
      float* gb = bias->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < cout; ++c) {
          const float* g = gout + (i * cout + c) * ho * wo;
          double s = 0.0;
          for (int64_t j = 0; j < ho * wo; ++j) s += g[j];
          gb[c] += static_cast<float>(s);
        }
    }
    if (x->requires_grad) {
      float* gx = x->ensure_grad().data();
      for (int64_t i = 0; i < n; ++i) {
        // dcols (k, ho*wo) = W^T (k, cout) * gOut_i (cout, ho*wo)
        sgemm(true, false, k, ho * wo, cout, 1.0f, wv.data(), k, gout + i * cout * ho * wo,
              ho * wo, 0.0f, cols.data(), ho * wo);
        col2im(cols.data(), cin, h, wd, kh, kw, stride, pad, gx + i * cin * h * wd);
      }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, ErrorCategory::Shape, "upsample_nearest2: expects 4-D");
  int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  const float* px = xv.data();
  float* o = out.data();
  for (int64_t ic = 0; ic < n * c; ++ic) {
    const float* xs = px + ic * h * w;
    float* os = o + ic * 4 * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        float v = xs[i * w + j];
        float* row0 = os + (2 * i) * 2 * w + 2 * j;
        float* row1 = row0 + 2 * w;
        row0[0] = v;
        row0[1] = v;
        row1[0] = v;
        row1[1] = v;
      }
  }
  return make_op("upsample_nearest2", std::move(out), {x}, [](Node& nd) {
    auto& x = nd.parents[0];
    if (!x->requires_grad) return;
    int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    float* gx = x->ensure_grad().data();
    const float* g = nd.grad.data();
    for (int64_t ic = 0; ic < n * c; ++ic) {
      float* gs = gx + ic * h * w;
      const float* go = g + ic * 4 * h * w;
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
          const float* row0 = go + (2 * i) * 2 * w + 2 * j;
          const float* row1 = row0 + 2 * w;
          gs[i * w + j] += row0[0] + row0[1] + row1[0] + row1[1];
        }
    }
  });
}

Var crop2d(const Var& x, int64_t out_h, int64_t out_w) {
  const Tensor& xv = x->value;
  require(xv.rank() == 4, ErrorCategory::Shape, "crop2d: expects 4-D");
  int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(out_h <= h && out_w <= w && out_h > 0 && out_w > 0, ErrorCategory::Shape,
          "crop2d: invalid crop size");
  if (out_h == h && out_w == w) return x;
  Tensor out({n, c, out_h, out_w});
  const float* px = xv.data();
  float* o = out.data();
  for (int64_t ic = 0; ic < n * c; ++ic)
    for (int64_t i = 0; i < out_h; ++i)
      for (int64_t j = 0; j < out_w; ++j)
        o[(ic * out_h + i) * out_w + j] = px[(ic * h + i) * w + j];
  return make_op("crop2d", std::move(out), {x}, [out_h, out_w](Node& nd) {
    auto& x = nd.parents[0];
    if (!x->requires_grad) return;
    int64_t n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    float* gx = x->ensure_grad().data();
    const float* g = nd.grad.data();
    for (int64_t ic = 0; ic < n * c; ++ic)
      for (int64_t i = 0; i < out_h; ++i)
        for (int64_t j = 0; j < out_w; ++j)
          gx[(ic * h + i) * w + j] += g[(ic * out_h + i) * out_w + j];
  });
}

Var detach(const Var& a) { return constant(a->value); }

Var mae(const Var& a, const Var& b) {
  require(a->value.same_shape(b->value), ErrorCategory::Shape,
          "mae: shape mismatch " + Tensor::shape_str(a->value.shape()) + " vs " +
              Tensor::shape_str(b->value.shape()));
  return mean_all(abs_op(sub(a, b)));
}

}  // namespace iscl
