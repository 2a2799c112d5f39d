#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "iscl/tensor.hpp"

namespace iscl {

// Define-by-run reverse-mode autodiff. Each op builds a Node holding its
// value, parent links and a backprop closure; backward() walks the DAG in
// reverse topological order. Parameters are persistent leaves whose values
// the optimizer mutates in place between graphs.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  Tensor& ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor::zeros(value.shape());
    return grad;
  }
  void drop_grad() { grad = Tensor(); }
};

bool grad_enabled();

// RAII guard disabling graph construction (inference mode).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

Var constant(Tensor value);
Var parameter(Tensor value);  // leaf with requires_grad = true
Var make_op(const char* op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backprop);

// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
// node with requires_grad. root must be scalar.
void backward(const Var& root);

// --- elementwise / broadcast ops (same rank; dims equal or 1) ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var abs_op(const Var& a);
Var square(const Var& a);
Var rsqrt_eps(const Var& a, double eps);  // 1/sqrt(a + eps)

// --- reductions ---
Var mean_all(const Var& a);  // -> shape (1)
// Mean over the axes whose flag is set; keepdim controls result rank.
Var mean_axes(const Var& a, const std::vector<int>& axes, bool keepdim);

// --- structural ---
Var conv2d(const Var& x, const Var& w, const Var* bias, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var crop2d(const Var& x, int64_t out_h, int64_t out_w);  // top-left corner
Var detach(const Var& a);

// mean(|a - b|) over all elements; the workhorse of the consistency losses.
Var mae(const Var& a, const Var& b);

// Low-level conv plumbing, exposed for tests.
void im2col(const float* x, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int pad, float* cols);
void col2im(const float* cols, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
            int stride, int pad, float* x_accum);

}  // namespace iscl
