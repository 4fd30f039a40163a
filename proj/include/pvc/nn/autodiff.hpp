#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pvc/rng.hpp"
#include "pvc/tensor.hpp"

namespace pvc::nn {

// Reverse-mode automatic differentiation over Tensor. A Var wraps a graph
// node; ops build new nodes whose backward closures scatter gradients into
// their parents. Graphs are dynamic and freed when the last Var referencing
// them goes out of scope.

bool grad_enabled();

// Disables graph construction in scope (inference paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.shape != value.shape || grad.data.size() != value.data.size())
      grad = Tensor(value.shape);
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor t, bool requires_grad = false);

  static Var param(Tensor t);
  static Var constant(Tensor t);
  static Var scalar(double v);

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& value() const { return n_->value; }
  Tensor& value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const std::vector<i64>& shape() const { return n_->value.shape; }
  i64 dim(int i) const { return n_->value.dim(i); }
  double item() const {
    require_arg(n_ && n_->value.numel() == 1, "Var::item: not a scalar");
    return n_->value.data[0];
  }

  std::shared_ptr<Node> node() const { return n_; }

  void zero_grad() {
    if (n_) n_->grad = Tensor();
  }

 private:
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}
  std::shared_ptr<Node> n_;
  friend Var make_op(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backward);
};

// Runs reverse-mode accumulation from a scalar root.
void backward(const Var& root);

// --- elementwise / scalar ops -------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var sqrt_eps(const Var& a, double eps);
Var exp(const Var& a);
Var log_clamp(const Var& a, double floor);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var abs(const Var& a);
Var detach(const Var& a);

// --- convolution / structure ops ((B, C, T) layout) ----------------------
Var conv1d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad, i64 dilation);
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad);
Var avg_pool1d(const Var& x, i64 kernel, i64 stride);
Var pad_time(const Var& x, i64 left, i64 right);
Var pad_reflect_time(const Var& x, i64 left, i64 right);
Var slice_time(const Var& x, i64 start, i64 len);
Var slice_channels(const Var& x, i64 start, i64 len);
Var concat_channels(const std::vector<Var>& xs);
Var flip_channels(const Var& x);
Var broadcast_time(const Var& x, i64 t);               // (B,C,1) -> (B,C,T)
Var fold_period(const Var& x, i64 period);             // (B,1,T) -> (B*p,1,T/p)
Var mul_mask(const Var& x, const Tensor& mask);        // mask (B,1,T), constant

// --- reductions -----------------------------------------------------------
Var sum_all(const Var& x);
Var mean_all(const Var& x);
// Mean over cells (b, c, t) with mask[b,0,t] != 0, all channels included.
Var mean_masked(const Var& x, const Tensor& mask);

// --- constructors ----------------------------------------------------------
Var randn(std::vector<i64> shape, Rng& rng);

// --- initializers ----------------------------------------------------------
// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), the usual conv/linear default.
Tensor init_uniform_fan_in(std::vector<i64> shape, i64 fan_in, Rng& rng);

}  // namespace pvc::nn
