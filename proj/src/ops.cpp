#include "hagcn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hagcn/errors.hpp"
#include "hagcn/parallel.hpp"

namespace hagcn {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Idx = Eigen::Index;

Idx ix(std::size_t v) { return static_cast<Idx>(v); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  return Var::make_op(std::move(out), {a, b}, "add", [](Node& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) in->grad_buffer() += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return Var::make_op(std::move(out), {a, b}, "sub", [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->grad_buffer() += n.grad;
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return Var::make_op(std::move(out), {a, b}, "mul", [](Node& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return Var::make_op(std::move(out), {a}, "scale", [s](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var mul_scalar(const Var& x, const Var& alpha) {
  if (alpha.numel() != 1) throw ShapeError("mul_scalar: alpha must have one element, got " + shape_str(alpha.shape()));
  const double a = alpha.value()[0];
  Tensor out = x.value();
  for (auto& v : out.data()) v *= a;
  return Var::make_op(std::move(out), {x, alpha}, "mul_scalar", [](Node& n) {
    const auto& xv = n.inputs[0]->value;
    const double a = n.inputs[1]->value[0];
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += a * n.grad[i];
    }
    if (n.inputs[1]->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.numel(); ++i) acc += n.grad[i] * xv[i];
      n.inputs[1]->grad_buffer()[0] += acc;
    }
  });
}

Var add_trailing(const Var& x, const Var& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
    throw ShapeError("add_trailing: " + shape_str(bs) + " is not a trailing shape of " + shape_str(xs));
  }
  const std::size_t inner = b.numel();
  const std::size_t outer = x.numel() / inner;
  Tensor out = x.value();
  const auto& bv = b.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  return Var::make_op(std::move(out), {x, b}, "add_trailing", [outer, inner](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->grad_buffer() += n.grad;
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[i] += n.grad[o * inner + i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return Var::make_op(Tensor::scalar(s), {a}, "sum", [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    const double d = n.grad[0];
    for (auto& v : g.data()) v += d;
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum(a), inv);
}

Var mean_axis(const Var& a, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out(out_shape);
  const auto& x = a.value();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < len; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + k) * inner + i];
  for (auto& v : out.data()) v *= inv;
  return Var::make_op(std::move(out), {a}, "mean_axis", [outer, inner, len, inv](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < len; ++k)
        for (std::size_t i = 0; i < inner; ++i) g[(o * len + k) * inner + i] += inv * n.grad[o * inner + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return Var::make_op(std::move(out), {a}, "reshape", [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::vector<std::size_t> lens;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto& x = p.value();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.ptr() + o * len * inner, len * inner, out.ptr() + (o * total + offset) * inner);
    offset += len;
    lens.push_back(len);
  }
  return Var::make_op(std::move(out), parts, "concat", [outer, inner, total, lens](Node& n) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t len = lens[k];
      if (n.inputs[k]->requires_grad) {
        auto& g = n.inputs[k]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < len * inner; ++i) g[o * len * inner + i] += n.grad[(o * total + offset) * inner + i];
      }
      offset += len;
    }
  });
}

Var relu(const Var& a) {
  note_relu_pattern(a.value());
  Tensor out = a.value();
  for (auto& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return Var::make_op(std::move(out), {a}, "relu", [](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    const auto& x = n.inputs[0]->value;
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return Var::make_op(out, {a}, "tanh", [out](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (1.0 - out[i] * out[i]);
  });
}

Var softmax(const Var& a, std::size_t axis) {
  const auto& s = a.shape();
  if (axis >= s.size()) throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      auto at = [&](std::size_t k) -> double& { return out[(o * len + k) * inner + i]; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, at(k));
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) z += (at(k) = std::exp(at(k) - mx));
      for (std::size_t k = 0; k < len; ++k) at(k) /= z;
    }
  }
  return Var::make_op(out, {a}, "softmax", [out, outer, inner, len](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t p = (o * len + k) * inner + i;
          dot += n.grad[p] * out[p];
        }
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t p = (o * len + k) * inner + i;
          g[p] += out[p] * (n.grad[p] - dot);
        }
      }
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const bool ok_rank = (as.size() == 2 || as.size() == 3) && (bs.size() == 2 || bs.size() == 3);
  if (!ok_rank) throw ShapeError("matmul: unsupported ranks " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t ab = as.size() == 3 ? as[0] : 1;
  const std::size_t bb = bs.size() == 3 ? bs[0] : 1;
  const std::size_t m = as[as.size() - 2], k = as.back();
  const std::size_t k2 = bs[bs.size() - 2], p = bs.back();
  if (k != k2 || (ab != bb && ab != 1 && bb != 1) ||
      (as.size() == 3 && bs.size() == 3 && ab != bb)) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::size_t batch = std::max(ab, bb);
  const bool batched = as.size() == 3 || bs.size() == 3;
  Tensor out(batched ? Shape{batch, m, p} : Shape{m, p});
  const std::size_t a_stride = ab == 1 ? 0 : m * k;
  const std::size_t b_stride = bb == 1 ? 0 : k * p;
  for (std::size_t i = 0; i < batch; ++i) {
    MapR(out.ptr() + i * m * p, ix(m), ix(p)).noalias() =
        CMapR(a.value().ptr() + i * a_stride, ix(m), ix(k)) * CMapR(b.value().ptr() + i * b_stride, ix(k), ix(p));
  }
  return Var::make_op(std::move(out), {a, b}, "matmul", [=](Node& n) {
    const auto& av = n.inputs[0]->value;
    const auto& bv = n.inputs[1]->value;
    for (std::size_t i = 0; i < batch; ++i) {
      CMapR dy(n.grad.ptr() + i * m * p, ix(m), ix(p));
      if (n.inputs[0]->requires_grad) {
        MapR(n.inputs[0]->grad_buffer().ptr() + i * a_stride, ix(m), ix(k)).noalias() +=
            dy * CMapR(bv.ptr() + i * b_stride, ix(k), ix(p)).transpose();
      }
      if (n.inputs[1]->requires_grad) {
        MapR(n.inputs[1]->grad_buffer().ptr() + i * b_stride, ix(k), ix(p)).noalias() +=
            CMapR(av.ptr() + i * a_stride, ix(m), ix(k)).transpose() * dy;
      }
    }
  });
}

std::size_t conv_output_length(std::size_t t, std::size_t kernel, const Conv2dOptions& opt) {
  if (opt.stride_t == 0 || opt.dilation_t == 0) throw ConfigError("conv2d: stride and dilation must be positive");
  const std::size_t span = opt.dilation_t * (kernel - 1) + 1;
  if (t + 2 * opt.pad_t < span) {
    throw ShapeError("conv2d: input length " + std::to_string(t) + " too short for kernel span " + std::to_string(span));
  }
  return (t + 2 * opt.pad_t - span) / opt.stride_t + 1;
}

std::size_t same_padding(std::size_t kernel, std::size_t dilation) { return dilation * (kernel - 1) / 2; }

namespace {

// Unfolds one sample (C_in, T, V) into (C_in * k_t, T_out * V) columns.
void im2col(const double* x, std::size_t cin, std::size_t t, std::size_t v, std::size_t kt, std::size_t t_out,
            const Conv2dOptions& opt, double* cols) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t k = 0; k < kt; ++k) {
      double* row = cols + (c * kt + k) * t_out * v;
      for (std::size_t to = 0; to < t_out; ++to) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * opt.stride_t + k * opt.dilation_t) -
                                  static_cast<std::ptrdiff_t>(opt.pad_t);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(t)) {
          std::fill_n(row + to * v, v, 0.0);
        } else {
          std::copy_n(x + (c * t + static_cast<std::size_t>(ti)) * v, v, row + to * v);
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t t, std::size_t v, std::size_t kt, std::size_t t_out,
                const Conv2dOptions& opt, double* dx) {
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t k = 0; k < kt; ++k) {
      const double* row = cols + (c * kt + k) * t_out * v;
      for (std::size_t to = 0; to < t_out; ++to) {
        const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * opt.stride_t + k * opt.dilation_t) -
                                  static_cast<std::ptrdiff_t>(opt.pad_t);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(t)) continue;
        double* dst = dx + (c * t + static_cast<std::size_t>(ti)) * v;
        for (std::size_t j = 0; j < v; ++j) dst[j] += row[to * v + j];
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, const Conv2dOptions& opt) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const auto& xs = input.shape();
  const auto& ws = weight.shape();
  const std::size_t n = xs[0], cin = xs[1], t = xs[2], v = xs[3];
  const std::size_t cout = ws[0], kt = ws[2];
  if (ws[1] != cin) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(xs) + " vs weight " + shape_str(ws));
  }
  if (ws[3] != 1) throw ShapeError("conv2d: only k_v = 1 kernels are supported, got " + shape_str(ws));
  if (bias.defined() && (bias.value().rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(cout) + " outputs");
  }
  const std::size_t t_out = conv_output_length(t, kt, opt);
  const bool direct = kt == 1 && opt.stride_t == 1 && opt.pad_t == 0;
  const std::size_t krows = cin * kt;
  const std::size_t cols_n = t_out * v;

  Tensor out({n, cout, t_out, v});
  const double* xp = input.value().ptr();
  const double* wp = weight.value().ptr();
  const double* bp = bias.defined() ? bias.value().ptr() : nullptr;
  parallel_for(n, [&](std::size_t s) {
    MapR y(out.ptr() + s * cout * cols_n, ix(cout), ix(cols_n));
    CMapR w(wp, ix(cout), ix(krows));
    if (direct) {
      y.noalias() = w * CMapR(xp + s * cin * t * v, ix(cin), ix(cols_n));
    } else {
      std::vector<double> cols(krows * cols_n);
      im2col(xp + s * cin * t * v, cin, t, v, kt, t_out, opt, cols.data());
      y.noalias() = w * CMapR(cols.data(), ix(krows), ix(cols_n));
    }
    if (bp) {
      for (std::size_t c = 0; c < cout; ++c) y.row(ix(c)).array() += bp[c];
    }
  });

  std::vector<Var> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Var::make_op(std::move(out), inputs, "conv2d", [=](Node& node) {
    const auto& x = node.inputs[0]->value;
    const auto& w = node.inputs[1]->value;
    const bool need_x = node.inputs[0]->requires_grad;
    const bool need_w = node.inputs[1]->requires_grad;
    const bool need_b = node.inputs.size() > 2 && node.inputs[2]->requires_grad;
    CMapR wm(w.ptr(), ix(cout), ix(krows));
    if (need_x) {
      double* dxp = node.inputs[0]->grad_buffer().ptr();
      parallel_for(n, [&](std::size_t s) {
        CMapR dy(node.grad.ptr() + s * cout * cols_n, ix(cout), ix(cols_n));
        if (direct) {
          MapR(dxp + s * cin * t * v, ix(cin), ix(cols_n)).noalias() += wm.transpose() * dy;
        } else {
          MatR dcols = wm.transpose() * dy;
          col2im_add(dcols.data(), cin, t, v, kt, t_out, opt, dxp + s * cin * t * v);
        }
      });
    }
    if (need_w) {
      MapR dw(node.inputs[1]->grad_buffer().ptr(), ix(cout), ix(krows));
      std::vector<double> cols(direct ? 0 : krows * cols_n);
      for (std::size_t s = 0; s < n; ++s) {
        CMapR dy(node.grad.ptr() + s * cout * cols_n, ix(cout), ix(cols_n));
        if (direct) {
          dw.noalias() += dy * CMapR(x.ptr() + s * cin * t * v, ix(cin), ix(cols_n)).transpose();
        } else {
          im2col(x.ptr() + s * cin * t * v, cin, t, v, kt, t_out, opt, cols.data());
          dw.noalias() += dy * CMapR(cols.data(), ix(krows), ix(cols_n)).transpose();
        }
      }
    }
    if (need_b) {
      auto& db = node.inputs[2]->grad_buffer();
      // Plain loops: Eigen's vectorized sum depends on pointer alignment,
      // which would make training runs differ in the last bits.
      const double* dy = node.grad.ptr();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < cout; ++c) {
          const double* row = dy + (s * cout + c) * cols_n;
          db[c] += std::accumulate(row, row + cols_n, 0.0);
        }
    }
  });
}

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, NormStats& running, const BatchNormOptions& opt) {
  require_rank(input, 4, "batch_norm");
  const auto& s = input.shape();
  const std::size_t n = s[0], c = s[1], t = s[2], v = s[3];
  const std::size_t channels = opt.per_vertex ? c * v : c;
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("batch_norm: affine parameters must have " + std::to_string(channels) + " entries");
  }
  if (running.mean.numel() != channels || running.var.numel() != channels) {
    throw ShapeError("batch_norm: running statistics must have " + std::to_string(channels) + " entries");
  }
  if (!(opt.eps > 0.0)) throw ConfigError("batch_norm: eps must be positive");
  const bool per_vertex = opt.per_vertex;
  auto channel_of = [=](std::size_t ci, std::size_t vi) { return per_vertex ? ci * v + vi : ci; };
  const double count = static_cast<double>(per_vertex ? n * t : n * t * v);
  const auto& x = input.value();

  std::vector<double> mu(channels, 0.0), var(channels, 0.0);
  if (opt.training) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t vi = 0; vi < v; ++vi) mu[channel_of(ci, vi)] += x[((a * c + ci) * t + ti) * v + vi];
    for (auto& m : mu) m /= count;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t vi = 0; vi < v; ++vi) {
            const double d = x[((a * c + ci) * t + ti) * v + vi] - mu[channel_of(ci, vi)];
            var[channel_of(ci, vi)] += d * d;
          }
    for (auto& q : var) q /= count;
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    for (std::size_t k = 0; k < channels; ++k) {
      running.mean[k] = (1 - opt.momentum) * running.mean[k] + opt.momentum * mu[k];
      running.var[k] = (1 - opt.momentum) * running.var[k] + opt.momentum * var[k] * unbias;
    }
  } else {
    std::copy_n(running.mean.ptr(), channels, mu.begin());
    std::copy_n(running.var.ptr(), channels, var.begin());
  }
  std::vector<double> inv_std(channels);
  for (std::size_t k = 0; k < channels; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + opt.eps);

  Tensor xhat(s);
  Tensor out(s);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) {
          const std::size_t p = ((a * c + ci) * t + ti) * v + vi;
          const std::size_t k = channel_of(ci, vi);
          xhat[p] = (x[p] - mu[k]) * inv_std[k];
          out[p] = gv[k] * xhat[p] + bv[k];
        }

  const bool training = opt.training;
  return Var::make_op(std::move(out), {input, gamma, beta}, "batch_norm",
                      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& node) {
    const auto& g = node.grad;
    const auto& gv = node.inputs[1]->value;
    std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t vi = 0; vi < v; ++vi) {
            const std::size_t p = ((a * c + ci) * t + ti) * v + vi;
            const std::size_t k = channel_of(ci, vi);
            sum_dy[k] += g[p];
            sum_dy_xhat[k] += g[p] * xhat[p];
          }
    if (node.inputs[1]->requires_grad) {
      auto& dg = node.inputs[1]->grad_buffer();
      for (std::size_t k = 0; k < channels; ++k) dg[k] += sum_dy_xhat[k];
    }
    if (node.inputs[2]->requires_grad) {
      auto& db = node.inputs[2]->grad_buffer();
      for (std::size_t k = 0; k < channels; ++k) db[k] += sum_dy[k];
    }
    if (node.inputs[0]->requires_grad) {
      auto& dx = node.inputs[0]->grad_buffer();
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t vi = 0; vi < v; ++vi) {
              const std::size_t p = ((a * c + ci) * t + ti) * v + vi;
              const std::size_t k = channel_of(ci, vi);
              if (training) {
                dx[p] += gv[k] * inv_std[k] / count * (count * g[p] - sum_dy[k] - xhat[p] * sum_dy_xhat[k]);
              } else {
                dx[p] += gv[k] * inv_std[k] * g[p];
              }
            }
    }
  });
}

Var layer_norm(const Var& input, const Var& gamma, const Var& beta, double eps) {
  require_rank(input, 4, "layer_norm");
  const auto& s = input.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(c) + " entries");
  }
  const std::size_t per = c * plane;
  const double count = static_cast<double>(per);
  const auto& x = input.value();
  Tensor xhat(s), out(s);
  std::vector<double> inv_std(n);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t a = 0; a < n; ++a) {
    const double* xs = x.ptr() + a * per;
    double mu = 0.0;
    for (std::size_t i = 0; i < per; ++i) mu += xs[i];
    mu /= count;
    double var = 0.0;
    for (std::size_t i = 0; i < per; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= count;
    inv_std[a] = 1.0 / std::sqrt(var + eps);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t p = a * per + ci * plane + i;
        xhat[p] = (x[p] - mu) * inv_std[a];
        out[p] = gv[ci] * xhat[p] + bv[ci];
      }
  }
  return Var::make_op(std::move(out), {input, gamma, beta}, "layer_norm",
                      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& node) {
    const auto& g = node.grad;
    const auto& gv = node.inputs[1]->value;
    const bool need_x = node.inputs[0]->requires_grad;
    Tensor* dg = node.inputs[1]->requires_grad ? &node.inputs[1]->grad_buffer() : nullptr;
    Tensor* db = node.inputs[2]->requires_grad ? &node.inputs[2]->grad_buffer() : nullptr;
    for (std::size_t a = 0; a < n; ++a) {
      double sum_d = 0.0, sum_d_xhat = 0.0;
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t p = a * per + ci * plane + i;
          const double d = g[p] * gv[ci];
          sum_d += d;
          sum_d_xhat += d * xhat[p];
          if (dg) (*dg)[ci] += g[p] * xhat[p];
          if (db) (*db)[ci] += g[p];
        }
      if (!need_x) continue;
      auto& dx = node.inputs[0]->grad_buffer();
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t p = a * per + ci * plane + i;
          dx[p] += inv_std[a] / count * (count * g[p] * gv[ci] - sum_d - xhat[p] * sum_d_xhat);
        }
    }
  });
}

Var mask_aggregate(const Var& mask, const Var& x) {
  require_rank(x, 4, "mask_aggregate");
  const auto& xs = x.shape();
  const std::size_t n = xs[0], c = xs[1], t = xs[2], v = xs[3];
  const auto& ms = mask.shape();
  std::size_t mask_channels = 0;  // 0 marks a single shared (V, V) mask
  if (ms == Shape{v, v}) {
    mask_channels = 0;
  } else if (ms.size() == 4 && ms[0] == n && (ms[1] == c || ms[1] == 1) && ms[2] == v && ms[3] == v) {
    mask_channels = ms[1];
  } else {
    throw ShapeError("mask_aggregate: mask " + shape_str(ms) + " incompatible with features " + shape_str(xs));
  }
  auto mask_offset = [=](std::size_t a, std::size_t ci) -> std::size_t {
    if (mask_channels == 0) return 0;
    return (a * mask_channels + (mask_channels == 1 ? 0 : ci)) * v * v;
  };
  const std::size_t plane = t * v;
  Tensor out(xs);
  const double* mp = mask.value().ptr();
  const double* xp = x.value().ptr();
  parallel_for(n, [&](std::size_t a) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t off = (a * c + ci) * plane;
      MapR(out.ptr() + off, ix(t), ix(v)).noalias() =
          CMapR(xp + off, ix(t), ix(v)) * CMapR(mp + mask_offset(a, ci), ix(v), ix(v)).transpose();
    }
  });
  return Var::make_op(std::move(out), {mask, x}, "mask_aggregate", [=](Node& node) {
    const auto& mv = node.inputs[0]->value;
    const auto& xv = node.inputs[1]->value;
    if (node.inputs[1]->requires_grad) {
      double* dxp = node.inputs[1]->grad_buffer().ptr();
      parallel_for(n, [&](std::size_t a) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const std::size_t off = (a * c + ci) * plane;
          MapR(dxp + off, ix(t), ix(v)).noalias() +=
              CMapR(node.grad.ptr() + off, ix(t), ix(v)) * CMapR(mv.ptr() + mask_offset(a, ci), ix(v), ix(v));
        }
      });
    }
    if (node.inputs[0]->requires_grad) {
      double* dmp = node.inputs[0]->grad_buffer().ptr();
      // Shared masks accumulate across samples, so keep this loop sequential.
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t ci = 0; ci < c; ++ci) {
          const std::size_t off = (a * c + ci) * plane;
          MapR(dmp + mask_offset(a, ci), ix(v), ix(v)).noalias() +=
              CMapR(node.grad.ptr() + off, ix(t), ix(v)).transpose() * CMapR(xv.ptr() + off, ix(t), ix(v));
        }
      }
    }
  });
}

Var relative_distance_mask(const Var& features) {
  require_rank(features, 4, "relative_distance_mask");
  const auto& s = features.shape();
  const std::size_t n = s[0], c = s[1], t = s[2], v = s[3];
  const auto& f = features.value();
  Tensor out({n, c, v, v});
  std::vector<double> avg(v);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::fill(avg.begin(), avg.end(), 0.0);
      const double* fp = f.ptr() + (a * c + ci) * t * v;
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t i = 0; i < v; ++i) avg[i] += fp[ti * v + i];
      for (auto& m : avg) m /= static_cast<double>(t);
      double* op = out.ptr() + (a * c + ci) * v * v;
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < v; ++j) op[i * v + j] = std::tanh(avg[i] - avg[j]);
    }
  }
  return Var::make_op(out, {features}, "relative_distance_mask", [=](Node& node) {
    auto& df = node.inputs[0]->grad_buffer();
    std::vector<double> dm(v);
    const double inv_t = 1.0 / static_cast<double>(t);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t moff = (a * c + ci) * v * v;
        std::fill(dm.begin(), dm.end(), 0.0);
        for (std::size_t i = 0; i < v; ++i)
          for (std::size_t j = 0; j < v; ++j) {
            const double y = out[moff + i * v + j];
            const double gij = node.grad[moff + i * v + j] * (1.0 - y * y);
            dm[i] += gij;
            dm[j] -= gij;
          }
        double* dp = df.ptr() + (a * c + ci) * t * v;
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t i = 0; i < v; ++i) dp[ti * v + i] += dm[i] * inv_t;
      }
    }
  });
}

Var relative_angle_mask(const Var& features) {
  require_rank(features, 4, "relative_angle_mask");
  const auto& s = features.shape();
  const std::size_t n = s[0], c = s[1], t = s[2], v = s[3];
  const auto& f = features.value();
  Tensor out({n, c, v, v});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      CMapR fm(f.ptr() + (a * c + ci) * t * v, ix(t), ix(v));
      MapR om(out.ptr() + (a * c + ci) * v * v, ix(v), ix(v));
      om.noalias() = fm.transpose() * fm;
      om = om.array().tanh().matrix();
    }
  }
  return Var::make_op(out, {features}, "relative_angle_mask", [=](Node& node) {
    const auto& fv = node.inputs[0]->value;
    auto& df = node.inputs[0]->grad_buffer();
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const std::size_t moff = (a * c + ci) * v * v;
        CMapR y(out.ptr() + moff, ix(v), ix(v));
        CMapR dy(node.grad.ptr() + moff, ix(v), ix(v));
        MatR g = (dy.array() * (1.0 - y.array().square())).matrix();
        CMapR fm(fv.ptr() + (a * c + ci) * t * v, ix(t), ix(v));
        MapR(df.ptr() + (a * c + ci) * t * v, ix(t), ix(v)).noalias() += fm * (g + g.transpose());
      }
    }
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  Tensor keep(x.shape());
  std::bernoulli_distribution coin(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  for (auto& k : keep.data()) k = coin(rng) ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= keep[i];
  return Var::make_op(std::move(out), {x}, "dropout", [keep = std::move(keep)](Node& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * keep[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.dim(0), cin = x.dim(1), k = weight.dim(0);
  if (weight.dim(1) != cin || bias.numel() != k) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  Tensor out({n, k});
  MapR om(out.ptr(), ix(n), ix(k));
  om.noalias() = CMapR(x.value().ptr(), ix(n), ix(cin)) * CMapR(weight.value().ptr(), ix(k), ix(cin)).transpose();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t j = 0; j < k; ++j) out[a * k + j] += bias.value()[j];
  return Var::make_op(std::move(out), {x, weight, bias}, "linear", [=](Node& node) {
    CMapR dy(node.grad.ptr(), ix(n), ix(k));
    if (node.inputs[0]->requires_grad) {
      MapR(node.inputs[0]->grad_buffer().ptr(), ix(n), ix(cin)).noalias() +=
          dy * CMapR(node.inputs[1]->value.ptr(), ix(k), ix(cin));
    }
    if (node.inputs[1]->requires_grad) {
      MapR(node.inputs[1]->grad_buffer().ptr(), ix(k), ix(cin)).noalias() +=
          dy.transpose() * CMapR(node.inputs[0]->value.ptr(), ix(n), ix(cin));
    }
    if (node.inputs[2]->requires_grad) {
      auto& db = node.inputs[2]->grad_buffer();
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j = 0; j < k; ++j) db[j] += node.grad[a * k + j];
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  const auto& z = logits.value();
  Tensor prob({n, k});
  double loss = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    if (labels[a] >= k) throw ConfigError("cross_entropy: label " + std::to_string(labels[a]) + " out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[a * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (prob[a * k + j] = std::exp(z[a * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) prob[a * k + j] /= total;
    loss += -(z[a * k + labels[a]] - mx - std::log(total));
  }
  loss /= static_cast<double>(n);
  return Var::make_op(Tensor::scalar(loss), {logits}, "cross_entropy",
                      [prob = std::move(prob), labels, n, k](Node& node) {
    auto& g = node.inputs[0]->grad_buffer();
    const double d = node.grad[0] / static_cast<double>(n);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t j = 0; j < k; ++j) g[a * k + j] += d * (prob[a * k + j] - (j == labels[a] ? 1.0 : 0.0));
  });
}

}  // namespace hagcn
