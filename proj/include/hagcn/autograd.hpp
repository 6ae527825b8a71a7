#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "hagcn/tensor.hpp"

namespace hagcn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. `backward_fn` reads `grad` and
// accumulates into the grads of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  // Allocates a zero gradient on first use.
  Tensor& grad_buffer();
};

// Handle to a tracked tensor. Copies share the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  // Direct mutation is meant for optimizer updates and finite differences.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  // Builds a non-leaf result. Inputs and the backward rule are only kept
  // when some input requires a gradient and gradient recording is enabled.
  static Var make_op(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> backward_fn);

 private:
  NodePtr node_;
};

// Disables graph recording in its scope (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Populates grads of every requires_grad node reachable from `loss`.
// Leaf gradients accumulate across calls; intermediate ones are reset.
void backward(const Var& loss);

// While a finite-difference check runs, ReLU reports its sign pattern here.
// A probe whose pattern differs from the unperturbed one straddles a kink and
// is retried with a step 100 and 10^4 times smaller; entries that still
// straddle one are skipped.
void note_relu_pattern(const Tensor& pre_activation);

// Max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|)
// using central differences. `fn` must map the input to a scalar.
double grad_check(const std::function<Var(const Var&)>& fn, const Tensor& input, double eps = 1e-5);

// Same check over the entries of existing parameters. `loss_fn` rebuilds the
// scalar loss from the current parameter values. When `max_per_param` is
// nonzero, at most that many evenly strided entries are probed per parameter.
double grad_check_params(const std::function<Var()>& loss_fn, std::vector<Var> params, double eps = 1e-5,
                         std::size_t max_per_param = 0);

}  // namespace hagcn
