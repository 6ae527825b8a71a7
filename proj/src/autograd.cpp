#include "hagcn/autograd.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <optional>
#include <unordered_map>

#include "hagcn/errors.hpp"

namespace hagcn {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var Var::make_op(Tensor value, std::vector<Var> inputs, const char* op, std::function<void(Node&)> backward_fn) {
  Var out(std::move(value), false);
  out.node_->op = op;
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs.reserve(inputs.size());
  for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; a node seen again while still on the stack
  // closes a cycle.
  enum class Mark { active, done };
  std::unordered_map<Node*, Mark> marks;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  marks[loss.node().get()] = Mark::active;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (!child->requires_grad) continue;
      auto it = marks.find(child);
      if (it == marks.end()) {
        marks.emplace(child, Mark::active);
        stack.emplace_back(child, 0);
      } else if (it->second == Mark::active) {
        throw NumericError("cycle detected in computation graph at op '" + std::string(child->op) + "'");
      }
    } else {
      marks[node] = Mark::done;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad = Tensor::zeros(n->value.shape());
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

namespace {

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double scalar_of(const Var& v) {
  if (v.numel() != 1) throw ShapeError("grad_check requires a scalar-valued function, got " + shape_str(v.shape()));
  return v.value()[0];
}

struct KinkWatch {
  bool active = false;
  std::uint64_t pattern = 0;
};
thread_local KinkWatch kink_watch;

class WatchKinks {
 public:
  WatchKinks() { kink_watch.active = true; }
  ~WatchKinks() { kink_watch.active = false; }
  WatchKinks(const WatchKinks&) = delete;
  WatchKinks& operator=(const WatchKinks&) = delete;
};

struct Evaluated {
  double value;
  std::uint64_t pattern;
};

Evaluated evaluate(const std::function<double()>& f) {
  kink_watch.pattern = 0xcbf29ce484222325ULL;
  const double v = f();
  return {v, kink_watch.pattern};
}

// Evaluates twice at the unperturbed point, rejecting nondeterministic functions.
Evaluated reference(const std::function<double()>& f) {
  const Evaluated a = evaluate(f), b = evaluate(f);
  if (std::bit_cast<std::uint64_t>(a.value) != std::bit_cast<std::uint64_t>(b.value) || a.pattern != b.pattern) {
    throw NumericError("grad_check: function is not deterministic");
  }
  return a;
}

// Central difference of f around entry `x`, shrinking the step while the
// stencil crosses a ReLU kink. Empty when no step avoids one.
std::optional<double> central_difference(const std::function<double()>& f, double& x, double eps,
                                         std::uint64_t pattern) {
  const double orig = x;
  for (double h : {eps, eps * 1e-2, eps * 1e-4}) {
    x = orig + h;
    const Evaluated fp = evaluate(f);
    x = orig - h;
    const Evaluated fm = evaluate(f);
    x = orig;
    if (fp.pattern == pattern && fm.pattern == pattern) return (fp.value - fm.value) / (2 * h);
  }
  return std::nullopt;
}

}  // namespace

void note_relu_pattern(const Tensor& pre) {
  if (!kink_watch.active) return;
  std::uint64_t h = kink_watch.pattern;
  for (double v : pre.data()) h = (h ^ static_cast<std::uint64_t>(v > 0.0)) * 0x100000001b3ULL;
  kink_watch.pattern = h;
}

double grad_check(const std::function<Var(const Var&)>& fn, const Tensor& input, double eps) {
  Tensor probe = input;
  auto at_probe = [&] { return scalar_of(fn(Var(probe))); };
  Evaluated base;
  {
    NoGradGuard guard;
    WatchKinks watch;
    base = reference(at_probe);
  }
  Var x(input, true);
  Var y = fn(x);
  scalar_of(y);
  backward(y);
  const Tensor analytic = x.has_grad() ? x.grad() : Tensor::zeros(input.shape());

  NoGradGuard guard;
  WatchKinks watch;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    if (const auto numeric = central_difference(at_probe, probe[i], eps, base.pattern)) {
      worst = std::max(worst, rel_err(analytic[i], *numeric));
    }
  }
  return worst;
}

double grad_check_params(const std::function<Var()>& loss_fn, std::vector<Var> params, double eps,
                         std::size_t max_per_param) {
  auto loss = [&] { return scalar_of(loss_fn()); };
  Evaluated base;
  {
    NoGradGuard guard;
    WatchKinks watch;
    base = reference(loss);
  }
  for (auto& p : params) p.zero_grad();
  Var y = loss_fn();
  scalar_of(y);
  backward(y);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.has_grad() ? p.grad() : Tensor::zeros(p.shape()));

  NoGradGuard guard;
  WatchKinks watch;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& value = params[k].mutable_value();
    const std::size_t n = value.numel();
    const std::size_t step = (max_per_param == 0 || n <= max_per_param) ? 1 : (n + max_per_param - 1) / max_per_param;
    for (std::size_t i = 0; i < n; i += step) {
      if (const auto numeric = central_difference(loss, value[i], eps, base.pattern)) {
        worst = std::max(worst, rel_err(analytic[k][i], *numeric));
      }
    }
  }
  return worst;
}

}  // namespace hagcn
