#include "pvc/nn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "pvc/kernels.hpp"

namespace pvc::nn {

namespace {
thread_local bool g_grad_enabled = true;

const kernels::Ops& K() { return kernels::active(); }

void check3d(const Var& x, const char* who) {
  require_arg(x.defined() && x.value().rank() == 3,
              std::string(who) + ": expected rank-3 (batch, channels, time) input");
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Var::Var(Tensor t, bool requires_grad) : n_(std::make_shared<Node>()) {
  n_->value = std::move(t);
  n_->requires_grad = requires_grad && g_grad_enabled;
}

Var Var::param(Tensor t) {
  Var v(std::move(t), false);
  v.n_->requires_grad = true;  // params track gradients even under NoGrad at creation
  return v;
}

Var Var::constant(Tensor t) { return Var(std::move(t), false); }

Var Var::scalar(double v) { return Var(Tensor::scalar(v), false); }

// Builds an op node. If gradients are globally disabled or no parent needs
// them, the result is a plain constant and the closure is dropped.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool need = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) need = need || p.requires_grad();
  }
  if (need) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  require_arg(root.defined() && root.value().numel() == 1,
              "backward: root must be a defined scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order topological sort.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next_child;
  };
  std::vector<Frame> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.n->parents.size()) {
      Node* c = f.n->parents[f.next_child++].get();
      if (c->requires_grad && seen.insert(c).second) stack.push_back({c, 0});
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().data[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.numel() > 0) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

template <typename Fwd, typename Bwd>
Var binary_ew(const Var& a, const Var& b, const char* who, Fwd fwd, Bwd bwd) {
  require_arg(a.defined() && b.defined(), std::string(who) + ": undefined input");
  require_arg(a.value().same_shape(b.value()),
              std::string(who) + ": shape mismatch " + a.value().shape_str() + " vs " +
                  b.value().shape_str());
  Tensor out(a.shape());
  fwd(a.value(), b.value(), out);
  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(out), {a, b}, [an, bn, bwd](Node& self) { bwd(*an, *bn, self); });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "add",
      [](const Tensor& x, const Tensor& y, Tensor& o) {
        K().add(x.ptr(), y.ptr(), o.ptr(), o.data.size());
      },
      [](Node& an, Node& bn, Node& self) {
        const std::size_t n = self.grad.data.size();
        if (an.requires_grad) K().axpy(1.0, self.grad.ptr(), an.ensure_grad().ptr(), n);
        if (bn.requires_grad) K().axpy(1.0, self.grad.ptr(), bn.ensure_grad().ptr(), n);
      });
}

Var sub(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "sub",
      [](const Tensor& x, const Tensor& y, Tensor& o) {
        K().sub(x.ptr(), y.ptr(), o.ptr(), o.data.size());
      },
      [](Node& an, Node& bn, Node& self) {
        const std::size_t n = self.grad.data.size();
        if (an.requires_grad) K().axpy(1.0, self.grad.ptr(), an.ensure_grad().ptr(), n);
        if (bn.requires_grad) K().axpy(-1.0, self.grad.ptr(), bn.ensure_grad().ptr(), n);
      });
}

Var mul(const Var& a, const Var& b) {
  return binary_ew(
      a, b, "mul",
      [](const Tensor& x, const Tensor& y, Tensor& o) {
        K().mul(x.ptr(), y.ptr(), o.ptr(), o.data.size());
      },
      [](Node& an, Node& bn, Node& self) {
        const std::size_t n = self.grad.data.size();
        if (an.requires_grad)
          K().fma_acc(self.grad.ptr(), bn.value.ptr(), an.ensure_grad().ptr(), n);
        if (bn.requires_grad)
          K().fma_acc(self.grad.ptr(), an.value.ptr(), bn.ensure_grad().ptr(), n);
      });
}

namespace {

template <typename Fwd, typename Bwd>
Var unary_ew(const Var& a, const char* who, Fwd fwd, Bwd bwd) {
  require_arg(a.defined(), std::string(who) + ": undefined input");
  Tensor out(a.shape());
  fwd(a.value(), out);
  auto an = a.node();
  return make_op(std::move(out), {a}, [an, bwd](Node& self) {
    if (an->requires_grad) bwd(*an, self);
  });
}

}  // namespace

Var neg(const Var& a) {
  return unary_ew(
      a, "neg",
      [](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = -x.data[i];
      },
      [](Node& an, Node& self) {
        K().axpy(-1.0, self.grad.ptr(), an.ensure_grad().ptr(), self.grad.data.size());
      });
}

Var scale(const Var& a, double s) {
  return unary_ew(
      a, "scale",
      [s](const Tensor& x, Tensor& o) {
        o.data = x.data;
        K().scale(s, o.ptr(), o.data.size());
      },
      [s](Node& an, Node& self) {
        K().axpy(s, self.grad.ptr(), an.ensure_grad().ptr(), self.grad.data.size());
      });
}

Var add_scalar(const Var& a, double s) {
  return unary_ew(
      a, "add_scalar",
      [s](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = x.data[i] + s;
      },
      [](Node& an, Node& self) {
        K().axpy(1.0, self.grad.ptr(), an.ensure_grad().ptr(), self.grad.data.size());
      });
}

Var square(const Var& a) {
  return unary_ew(
      a, "square",
      [](const Tensor& x, Tensor& o) { K().mul(x.ptr(), x.ptr(), o.ptr(), o.data.size()); },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i)
          g.data[i] += 2.0 * an.value.data[i] * self.grad.data[i];
      });
}

Var sqrt_eps(const Var& a, double eps) {
  return unary_ew(
      a, "sqrt_eps",
      [eps](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::sqrt(x.data[i] + eps);
      },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i)
          g.data[i] += self.grad.data[i] * 0.5 / self.value.data[i];
      });
}

Var exp(const Var& a) {
  return unary_ew(
      a, "exp",
      [](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::exp(x.data[i]);
      },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i)
          g.data[i] += self.grad.data[i] * self.value.data[i];
      });
}

Var log_clamp(const Var& a, double floor) {
  require_arg(floor > 0.0, "log_clamp: floor must be positive");
  return unary_ew(
      a, "log_clamp",
      [floor](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i)
          o.data[i] = std::log(std::max(x.data[i], floor));
      },
      [floor](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i)
          if (an.value.data[i] > floor) g.data[i] += self.grad.data[i] / an.value.data[i];
      });
}

Var tanh(const Var& a) {
  return unary_ew(
      a, "tanh",
      [](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::tanh(x.data[i]);
      },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const double y = self.value.data[i];
          g.data[i] += self.grad.data[i] * (1.0 - y * y);
        }
      });
}

Var sigmoid(const Var& a) {
  return unary_ew(
      a, "sigmoid",
      [](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i)
          o.data[i] = 1.0 / (1.0 + std::exp(-x.data[i]));
      },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const double y = self.value.data[i];
          g.data[i] += self.grad.data[i] * y * (1.0 - y);
        }
      });
}

Var leaky_relu(const Var& a, double slope) {
  return unary_ew(
      a, "leaky_relu",
      [slope](const Tensor& x, Tensor& o) {
        K().leaky_relu(x.ptr(), o.ptr(), o.data.size(), slope);
      },
      [slope](Node& an, Node& self) {
        K().leaky_relu_grad(an.value.ptr(), self.grad.ptr(), an.ensure_grad().ptr(),
                            self.grad.data.size(), slope);
      });
}

Var abs(const Var& a) {
  return unary_ew(
      a, "abs",
      [](const Tensor& x, Tensor& o) {
        for (std::size_t i = 0; i < o.data.size(); ++i) o.data[i] = std::fabs(x.data[i]);
      },
      [](Node& an, Node& self) {
        Tensor& g = an.ensure_grad();
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          const double x = an.value.data[i];
          if (x > 0.0)
            g.data[i] += self.grad.data[i];
          else if (x < 0.0)
            g.data[i] -= self.grad.data[i];
        }
      });
}

Var detach(const Var& a) {
  require_arg(a.defined(), "detach: undefined input");
  return Var::constant(a.value());
}

// ---------------------------------------------------------------------------
// convolutions

Var conv1d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad, i64 dilation) {
  check3d(x, "conv1d");
  require_arg(w.defined() && w.value().rank() == 3, "conv1d: weight must be (out, in, k)");
  require_arg(stride >= 1 && dilation >= 1 && pad >= 0, "conv1d: bad stride/pad/dilation");
  const i64 B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const i64 Cout = w.dim(0), K_ = w.dim(2);
  require_arg(w.dim(1) == Cin, "conv1d: weight in-channels mismatch");
  if (b.defined()) require_arg(b.value().numel() == Cout, "conv1d: bias size mismatch");
  const i64 To = (T + 2 * pad - dilation * (K_ - 1) - 1) / stride + 1;
  require_arg(To > 0, "conv1d: output would be empty");

  Tensor out({B, Cout, To});
  const double* xp = x.value().ptr();
  const double* wp = w.value().ptr();
  double* yp = out.ptr();

  for (i64 bi = 0; bi < B; ++bi) {
    for (i64 oc = 0; oc < Cout; ++oc) {
      double* yrow = yp + (bi * Cout + oc) * To;
      if (b.defined()) {
        const double bv = b.value().data[static_cast<std::size_t>(oc)];
        for (i64 t = 0; t < To; ++t) yrow[t] = bv;
      }
      for (i64 ic = 0; ic < Cin; ++ic) {
        const double* xrow = xp + (bi * Cin + ic) * T;
        const double* wrow = wp + (oc * Cin + ic) * K_;
        for (i64 k = 0; k < K_; ++k) {
          const double wv = wrow[k];
          const i64 off = k * dilation - pad;
          if (stride == 1) {
            const i64 lo = std::max<i64>(0, -off);
            const i64 hi = std::min<i64>(To, T - off);
            if (hi > lo)
              K().axpy(wv, xrow + lo + off, yrow + lo, static_cast<std::size_t>(hi - lo));
          } else {
            for (i64 t = 0; t < To; ++t) {
              const i64 xi = t * stride + off;
              if (xi >= 0 && xi < T) yrow[t] += wv * xrow[xi];
            }
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);

  auto bwd = [xn, wn, bn, B, Cin, Cout, T, To, K_, stride, pad, dilation](Node& self) {
    const double* gy = self.grad.ptr();
    const double* xp2 = xn->value.ptr();
    const double* wp2 = wn->value.ptr();
    double* gx = xn->requires_grad ? xn->ensure_grad().ptr() : nullptr;
    double* gw = wn->requires_grad ? wn->ensure_grad().ptr() : nullptr;
    double* gb = (bn && bn->requires_grad) ? bn->ensure_grad().ptr() : nullptr;

    for (i64 bi = 0; bi < B; ++bi) {
      for (i64 oc = 0; oc < Cout; ++oc) {
        const double* gyrow = gy + (bi * Cout + oc) * To;
        if (gb) gb[oc] += K().sum(gyrow, static_cast<std::size_t>(To));
        for (i64 ic = 0; ic < Cin; ++ic) {
          const double* xrow = xp2 + (bi * Cin + ic) * T;
          const double* wrow = wp2 + (oc * Cin + ic) * K_;
          double* gxrow = gx ? gx + (bi * Cin + ic) * T : nullptr;
          double* gwrow = gw ? gw + (oc * Cin + ic) * K_ : nullptr;
          for (i64 k = 0; k < K_; ++k) {
            const i64 off = k * dilation - pad;
            if (stride == 1) {
              const i64 lo = std::max<i64>(0, -off);
              const i64 hi = std::min<i64>(To, T - off);
              if (hi <= lo) continue;
              const std::size_t n = static_cast<std::size_t>(hi - lo);
              if (gxrow) K().axpy(wrow[k], gyrow + lo, gxrow + lo + off, n);
              if (gwrow) gwrow[k] += K().dot(gyrow + lo, xrow + lo + off, n);
            } else {
              for (i64 t = 0; t < To; ++t) {
                const i64 xi = t * stride + off;
                if (xi < 0 || xi >= T) continue;
                if (gxrow) gxrow[xi] += wrow[k] * gyrow[t];
                if (gwrow) gwrow[k] += gyrow[t] * xrow[xi];
              }
            }
          }
        }
      }
    }
  };
  return make_op(std::move(out), std::move(parents), std::move(bwd));
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, i64 stride, i64 pad) {
  check3d(x, "conv_transpose1d");
  require_arg(w.defined() && w.value().rank() == 3,
              "conv_transpose1d: weight must be (in, out, k)");
  require_arg(stride >= 1 && pad >= 0, "conv_transpose1d: bad stride/pad");
  const i64 B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  require_arg(w.dim(0) == Cin, "conv_transpose1d: weight in-channels mismatch");
  const i64 Cout = w.dim(1), K_ = w.dim(2);
  if (b.defined())
    require_arg(b.value().numel() == Cout, "conv_transpose1d: bias size mismatch");
  const i64 To = (T - 1) * stride + K_ - 2 * pad;
  require_arg(To > 0, "conv_transpose1d: output would be empty");

  Tensor out({B, Cout, To});
  const double* xp = x.value().ptr();
  const double* wp = w.value().ptr();
  double* yp = out.ptr();

  for (i64 bi = 0; bi < B; ++bi) {
    for (i64 oc = 0; oc < Cout; ++oc) {
      double* yrow = yp + (bi * Cout + oc) * To;
      if (b.defined()) {
        const double bv = b.value().data[static_cast<std::size_t>(oc)];
        for (i64 t = 0; t < To; ++t) yrow[t] = bv;
      }
    }
    for (i64 ic = 0; ic < Cin; ++ic) {
      const double* xrow = xp + (bi * Cin + ic) * T;
      for (i64 oc = 0; oc < Cout; ++oc) {
        double* yrow = yp + (bi * Cout + oc) * To;
        const double* wrow = wp + (ic * Cout + oc) * K_;
        for (i64 k = 0; k < K_; ++k) {
          const double wv = wrow[k];
          const i64 off = k - pad;
          if (stride == 1) {
            const i64 lo = std::max<i64>(0, -off);
            const i64 hi = std::min<i64>(T, To - off);
            if (hi > lo)
              K().axpy(wv, xrow + lo, yrow + lo + off, static_cast<std::size_t>(hi - lo));
          } else {
            for (i64 t = 0; t < T; ++t) {
              const i64 yi = t * stride + off;
              if (yi >= 0 && yi < To) yrow[yi] += wv * xrow[t];
            }
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);

  auto bwd = [xn, wn, bn, B, Cin, Cout, T, To, K_, stride, pad](Node& self) {
    const double* gy = self.grad.ptr();
    const double* xp2 = xn->value.ptr();
    const double* wp2 = wn->value.ptr();
    double* gx = xn->requires_grad ? xn->ensure_grad().ptr() : nullptr;
    double* gw = wn->requires_grad ? wn->ensure_grad().ptr() : nullptr;
    double* gb = (bn && bn->requires_grad) ? bn->ensure_grad().ptr() : nullptr;

    for (i64 bi = 0; bi < B; ++bi) {
      if (gb) {
        for (i64 oc = 0; oc < Cout; ++oc)
          gb[oc] += K().sum(gy + (bi * Cout + oc) * To, static_cast<std::size_t>(To));
      }
      for (i64 ic = 0; ic < Cin; ++ic) {
        const double* xrow = xp2 + (bi * Cin + ic) * T;
        double* gxrow = gx ? gx + (bi * Cin + ic) * T : nullptr;
        for (i64 oc = 0; oc < Cout; ++oc) {
          const double* gyrow = gy + (bi * Cout + oc) * To;
          const double* wrow = wp2 + (ic * Cout + oc) * K_;
          double* gwrow = gw ? gw + (ic * Cout + oc) * K_ : nullptr;
          for (i64 k = 0; k < K_; ++k) {
            const i64 off = k - pad;
            if (stride == 1) {
              const i64 lo = std::max<i64>(0, -off);
              const i64 hi = std::min<i64>(T, To - off);
              if (hi <= lo) continue;
              const std::size_t n = static_cast<std::size_t>(hi - lo);
              if (gxrow) K().axpy(wrow[k], gyrow + lo + off, gxrow + lo, n);
              if (gwrow) gwrow[k] += K().dot(xrow + lo, gyrow + lo + off, n);
            } else {
              for (i64 t = 0; t < T; ++t) {
                const i64 yi = t * stride + off;
                if (yi < 0 || yi >= To) continue;
                if (gxrow) gxrow[t] += wrow[k] * gyrow[yi];
                if (gwrow) gwrow[k] += xrow[t] * gyrow[yi];
              }
            }
          }
        }
      }
    }
  };
  return make_op(std::move(out), std::move(parents), std::move(bwd));
}

Var avg_pool1d(const Var& x, i64 kernel, i64 stride) {
  check3d(x, "avg_pool1d");
  require_arg(kernel >= 1 && stride >= 1, "avg_pool1d: bad kernel/stride");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const i64 To = (T - kernel) / stride + 1;
  require_arg(To > 0, "avg_pool1d: output would be empty");
  Tensor out({B, C, To});
  const double inv = 1.0 / static_cast<double>(kernel);
  for (i64 r = 0; r < B * C; ++r) {
    const double* xrow = x.value().ptr() + r * T;
    double* yrow = out.ptr() + r * To;
    for (i64 t = 0; t < To; ++t)
      yrow[t] = inv * K().sum(xrow + t * stride, static_cast<std::size_t>(kernel));
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T, To, kernel, stride, inv](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    const double* gy = self.grad.ptr();
    for (i64 r = 0; r < B * C; ++r) {
      double* gxrow = gx + r * T;
      const double* gyrow = gy + r * To;
      for (i64 t = 0; t < To; ++t) {
        const double g = inv * gyrow[t];
        for (i64 k = 0; k < kernel; ++k) gxrow[t * stride + k] += g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// structural ops

Var pad_time(const Var& x, i64 left, i64 right) {
  check3d(x, "pad_time");
  require_arg(left >= 0 && right >= 0, "pad_time: negative padding");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const i64 To = T + left + right;
  Tensor out({B, C, To});
  for (i64 r = 0; r < B * C; ++r)
    std::copy_n(x.value().ptr() + r * T, T, out.ptr() + r * To + left);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T, To, left](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 r = 0; r < B * C; ++r)
      K().axpy(1.0, self.grad.ptr() + r * To + left, gx + r * T, static_cast<std::size_t>(T));
  });
}

Var pad_reflect_time(const Var& x, i64 left, i64 right) {
  check3d(x, "pad_reflect_time");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require_arg(left >= 0 && right >= 0 && left < T && right < T,
              "pad_reflect_time: padding must be in [0, T)");
  const i64 To = T + left + right;
  auto src_index = [T, left](i64 t) {
    i64 i = t - left;
    if (i < 0) i = -i;
    if (i >= T) i = 2 * T - 2 - i;
    return i;
  };
  Tensor out({B, C, To});
  for (i64 r = 0; r < B * C; ++r) {
    const double* xrow = x.value().ptr() + r * T;
    double* yrow = out.ptr() + r * To;
    for (i64 t = 0; t < To; ++t) yrow[t] = xrow[src_index(t)];
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T, To, src_index](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 r = 0; r < B * C; ++r) {
      const double* gyrow = self.grad.ptr() + r * To;
      double* gxrow = gx + r * T;
      for (i64 t = 0; t < To; ++t) gxrow[src_index(t)] += gyrow[t];
    }
  });
}

Var slice_time(const Var& x, i64 start, i64 len) {
  check3d(x, "slice_time");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require_arg(start >= 0 && len > 0 && start + len <= T, "slice_time: range out of bounds");
  Tensor out({B, C, len});
  for (i64 r = 0; r < B * C; ++r)
    std::copy_n(x.value().ptr() + r * T + start, len, out.ptr() + r * len);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T, start, len](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 r = 0; r < B * C; ++r)
      K().axpy(1.0, self.grad.ptr() + r * len, gx + r * T + start,
               static_cast<std::size_t>(len));
  });
}

Var slice_channels(const Var& x, i64 start, i64 len) {
  check3d(x, "slice_channels");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require_arg(start >= 0 && len > 0 && start + len <= C, "slice_channels: range out of bounds");
  Tensor out({B, len, T});
  for (i64 b = 0; b < B; ++b)
    std::copy_n(x.value().ptr() + (b * C + start) * T, len * T, out.ptr() + b * len * T);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T, start, len](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 b = 0; b < B; ++b)
      K().axpy(1.0, self.grad.ptr() + b * len * T, gx + (b * C + start) * T,
               static_cast<std::size_t>(len * T));
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  require_arg(!xs.empty(), "concat_channels: empty input list");
  for (const auto& v : xs) check3d(v, "concat_channels");
  const i64 B = xs[0].dim(0), T = xs[0].dim(2);
  i64 C = 0;
  for (const auto& v : xs) {
    require_arg(v.dim(0) == B && v.dim(2) == T, "concat_channels: shape mismatch");
    C += v.dim(1);
  }
  Tensor out({B, C, T});
  std::vector<i64> offsets;
  i64 off = 0;
  for (const auto& v : xs) {
    offsets.push_back(off);
    const i64 ci = v.dim(1);
    for (i64 b = 0; b < B; ++b)
      std::copy_n(v.value().ptr() + b * ci * T, ci * T, out.ptr() + (b * C + off) * T);
    off += ci;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<i64> dims;
  for (const auto& v : xs) {
    nodes.push_back(v.node());
    dims.push_back(v.dim(1));
  }
  return make_op(std::move(out), xs, [nodes, dims, offsets, B, C, T](Node& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) continue;
      double* gx = nodes[i]->ensure_grad().ptr();
      const i64 ci = dims[i];
      for (i64 b = 0; b < B; ++b)
        K().axpy(1.0, self.grad.ptr() + (b * C + offsets[i]) * T, gx + b * ci * T,
                 static_cast<std::size_t>(ci * T));
    }
  });
}

Var flip_channels(const Var& x) {
  check3d(x, "flip_channels");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  Tensor out({B, C, T});
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c)
      std::copy_n(x.value().ptr() + (b * C + c) * T, T, out.ptr() + (b * C + (C - 1 - c)) * T);
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, T](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 b = 0; b < B; ++b)
      for (i64 c = 0; c < C; ++c)
        K().axpy(1.0, self.grad.ptr() + (b * C + (C - 1 - c)) * T, gx + (b * C + c) * T,
                 static_cast<std::size_t>(T));
  });
}

Var broadcast_time(const Var& x, i64 t) {
  check3d(x, "broadcast_time");
  require_arg(x.dim(2) == 1, "broadcast_time: source time dim must be 1");
  require_arg(t >= 1, "broadcast_time: bad target length");
  const i64 B = x.dim(0), C = x.dim(1);
  Tensor out({B, C, t});
  for (i64 r = 0; r < B * C; ++r) {
    const double v = x.value().data[static_cast<std::size_t>(r)];
    double* yrow = out.ptr() + r * t;
    for (i64 i = 0; i < t; ++i) yrow[i] = v;
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, C, t](Node& self) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->ensure_grad();
    for (i64 r = 0; r < B * C; ++r)
      g.data[static_cast<std::size_t>(r)] +=
          K().sum(self.grad.ptr() + r * t, static_cast<std::size_t>(t));
  });
}

Var fold_period(const Var& x, i64 period) {
  check3d(x, "fold_period");
  require_arg(x.dim(1) == 1, "fold_period: expects a single channel");
  require_arg(period >= 1 && x.dim(2) % period == 0,
              "fold_period: time length must be a multiple of the period");
  const i64 B = x.dim(0), T = x.dim(2), U = T / period;
  Tensor out({B * period, 1, U});
  for (i64 b = 0; b < B; ++b) {
    const double* xrow = x.value().ptr() + b * T;
    for (i64 ph = 0; ph < period; ++ph) {
      double* yrow = out.ptr() + (b * period + ph) * U;
      for (i64 u = 0; u < U; ++u) yrow[u] = xrow[u * period + ph];
    }
  }
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, B, T, U, period](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 b = 0; b < B; ++b) {
      double* gxrow = gx + b * T;
      for (i64 ph = 0; ph < period; ++ph) {
        const double* gyrow = self.grad.ptr() + (b * period + ph) * U;
        for (i64 u = 0; u < U; ++u) gxrow[u * period + ph] += gyrow[u];
      }
    }
  });
}

Var mul_mask(const Var& x, const Tensor& mask) {
  check3d(x, "mul_mask");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require_arg(mask.rank() == 3 && mask.dim(0) == B && mask.dim(1) == 1 && mask.dim(2) == T,
              "mul_mask: mask must be (B,1,T)");
  Tensor out({B, C, T});
  for (i64 b = 0; b < B; ++b) {
    const double* mrow = mask.ptr() + b * T;
    for (i64 c = 0; c < C; ++c)
      K().mul(x.value().ptr() + (b * C + c) * T, mrow, out.ptr() + (b * C + c) * T,
              static_cast<std::size_t>(T));
  }
  auto xn = x.node();
  Tensor m = mask;
  return make_op(std::move(out), {x}, [xn, m, B, C, T](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    for (i64 b = 0; b < B; ++b) {
      const double* mrow = m.ptr() + b * T;
      for (i64 c = 0; c < C; ++c)
        K().fma_acc(self.grad.ptr() + (b * C + c) * T, mrow, gx + (b * C + c) * T,
                    static_cast<std::size_t>(T));
    }
  });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(const Var& x) {
  require_arg(x.defined(), "sum_all: undefined input");
  Tensor out = Tensor::scalar(K().sum(x.value().ptr(), x.value().data.size()));
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->ensure_grad();
    const double gv = self.grad.data[0];
    for (auto& v : g.data) v += gv;
  });
}

Var mean_all(const Var& x) {
  require_arg(x.defined() && x.value().numel() > 0, "mean_all: empty input");
  const double inv = 1.0 / static_cast<double>(x.value().numel());
  Tensor out = Tensor::scalar(inv * K().sum(x.value().ptr(), x.value().data.size()));
  auto xn = x.node();
  return make_op(std::move(out), {x}, [xn, inv](Node& self) {
    if (!xn->requires_grad) return;
    Tensor& g = xn->ensure_grad();
    const double gv = self.grad.data[0] * inv;
    for (auto& v : g.data) v += gv;
  });
}

Var mean_masked(const Var& x, const Tensor& mask) {
  check3d(x, "mean_masked");
  const i64 B = x.dim(0), C = x.dim(1), T = x.dim(2);
  require_arg(mask.rank() == 3 && mask.dim(0) == B && mask.dim(1) == 1 && mask.dim(2) == T,
              "mean_masked: mask must be (B,1,T)");
  double count = K().sum(mask.ptr(), mask.data.size()) * static_cast<double>(C);
  require_arg(count > 0.0, "mean_masked: mask selects no cells");
  double acc = 0.0;
  for (i64 b = 0; b < B; ++b) {
    const double* mrow = mask.ptr() + b * T;
    for (i64 c = 0; c < C; ++c)
      acc += K().dot(x.value().ptr() + (b * C + c) * T, mrow, static_cast<std::size_t>(T));
  }
  Tensor out = Tensor::scalar(acc / count);
  auto xn = x.node();
  Tensor m = mask;
  return make_op(std::move(out), {x}, [xn, m, B, C, T, count](Node& self) {
    if (!xn->requires_grad) return;
    double* gx = xn->ensure_grad().ptr();
    const double gv = self.grad.data[0] / count;
    for (i64 b = 0; b < B; ++b) {
      const double* mrow = m.ptr() + b * T;
      for (i64 c = 0; c < C; ++c)
        K().axpy(gv, mrow, gx + (b * C + c) * T, static_cast<std::size_t>(T));
    }
  });
}

// ---------------------------------------------------------------------------

Var randn(std::vector<i64> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.normal();
  return Var::constant(std::move(t));
}

Tensor init_uniform_fan_in(std::vector<i64> shape, i64 fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace pvc::nn
