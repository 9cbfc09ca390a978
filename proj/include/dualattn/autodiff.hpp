#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "dualattn/tensor.hpp"

namespace dualattn {

// Reverse-mode tape. One Graph per forward pass; episodes build independent
// graphs so concurrent rollouts never share mutable state. Handles are indices
// into the node list, which is already a topological order.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

template <typename S>
class Graph {
 public:
  using T = Tensor<S>;

  Var input(T value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }
  Var constant(T value) { return push(std::move(value), false, nullptr); }
  Var constant_scalar(S v) { return constant(T::scalar(v)); }

  const T& value(Var v) const { return nodes_[v.i].val; }
  T& grad(Var v) {
    Node& n = nodes_[v.i];
    if (n.grad.numel() == 0) n.grad = T::zeros(n.val.shape);
    return n.grad;
  }
  bool requires_grad(Var v) const { return nodes_[v.i].rg; }
  S scalar_value(Var v) const { return nodes_[v.i].val.data[0]; }

  // ---- elementwise -----------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    T out = value(a);
    out.data += value(b).data;
    return unary_or_binary(std::move(out), a, b, [this, a, b](const T& g) {
      if (requires_grad(a)) grad(a).data += g.data;
      if (requires_grad(b)) grad(b).data += g.data;
    });
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    T out = value(a);
    out.data -= value(b).data;
    return unary_or_binary(std::move(out), a, b, [this, a, b](const T& g) {
      if (requires_grad(a)) grad(a).data += g.data;
      if (requires_grad(b)) grad(b).data -= g.data;
    });
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    T out = value(a);
    out.data *= value(b).data;
    return unary_or_binary(std::move(out), a, b, [this, a, b](const T& g) {
      if (requires_grad(a)) grad(a).data += g.data * value(b).data;
      if (requires_grad(b)) grad(b).data += g.data * value(a).data;
    });
  }

  Var scale(Var a, S k) {
    T out = value(a);
    out.data *= k;
    return unary(std::move(out), a, [this, a, k](const T& g) {
      grad(a).data += g.data * k;
    });
  }

  Var add_const(Var a, const T& c) {
    T out = value(a);
    out.data += c.data;
    return unary(std::move(out), a, [this, a](const T& g) { grad(a).data += g.data; });
  }

  Var mul_const(Var a, T c) {
    T out = value(a);
    out.data *= c.data;
    return unary(std::move(out), a, [this, a, c = std::move(c)](const T& g) {
      grad(a).data += g.data * c.data;
    });
  }

  // Broadcast ops against a one-element tensor.
  Var mul_scalar(Var a, Var s) {
    T out = value(a);
    S sv = scalar_value(s);
    out.data *= sv;
    return unary_or_binary(std::move(out), a, s, [this, a, s, sv](const T& g) {
      if (requires_grad(a)) grad(a).data += g.data * sv;
      if (requires_grad(s)) grad(s).data[0] += (g.data * value(a).data).sum();
    });
  }

  Var inv_scalar(Var s) {
    S sv = scalar_value(s);
    T out = T::scalar(S(1) / sv);
    return unary(std::move(out), s, [this, s, sv](const T& g) {
      grad(s).data[0] -= g.data[0] / (sv * sv);
    });
  }

  // ---- nonlinearities ----------------------------------------------------

  Var relu(Var a) {
    T out = value(a);
    out.data = out.data.max(S(0));
    return unary(std::move(out), a, [this, a](const T& g) {
      grad(a).data += g.data * (value(a).data > S(0)).template cast<S>();
    });
  }

  Var tanh_op(Var a) {
    T out = value(a);
    out.data = out.data.tanh();
    Var r = unary(std::move(out), a, nullptr);
    set_back(r, [this, a, r](const T& g) {
      grad(a).data += g.data * (S(1) - value(r).data.square());
    });
    return r;
  }

  Var sigmoid(Var a) {
    T out = value(a);
    out.data = S(1) / (S(1) + (-out.data).exp());
    Var r = unary(std::move(out), a, nullptr);
    set_back(r, [this, a, r](const T& g) {
      const auto& y = value(r).data;
      grad(a).data += g.data * y * (S(1) - y);
    });
    return r;
  }

  Var exp_op(Var a) {
    T out = value(a);
    out.data = out.data.exp();
    Var r = unary(std::move(out), a, nullptr);
    set_back(r, [this, a, r](const T& g) { grad(a).data += g.data * value(r).data; });
    return r;
  }

  Var log_op(Var a) {
    T out = value(a);
    out.data = out.data.log();
    return unary(std::move(out), a, [this, a](const T& g) {
      grad(a).data += g.data / value(a).data;
    });
  }

  // ---- reductions ----------------------------------------------------------

  Var sum(Var a) {
    T out = T::scalar(value(a).data.sum());
    return unary(std::move(out), a, [this, a](const T& g) {
      grad(a).data += g.data[0];
    });
  }

  Var mean(Var a) {
    long n = value(a).numel();
    T out = T::scalar(value(a).data.sum() / S(n));
    return unary(std::move(out), a, [this, a, n](const T& g) {
      grad(a).data += g.data[0] / S(n);
    });
  }

  Var pick(Var a, long index) {
    T out = T::scalar(value(a).data[index]);
    return unary(std::move(out), a, [this, a, index](const T& g) {
      grad(a).data[index] += g.data[0];
    });
  }

  Var slice(Var a, long offset, long len) {
    T out({static_cast<int>(len)});
    out.data = value(a).data.segment(offset, len);
    return unary(std::move(out), a, [this, a, offset, len](const T& g) {
      grad(a).data.segment(offset, len) += g.data;
    });
  }

  Var concat(const std::vector<Var>& parts) {
    long total = 0;
    for (Var p : parts) total += value(p).numel();
    T out({static_cast<int>(total)});
    long off = 0;
    bool rg = false;
    for (Var p : parts) {
      out.data.segment(off, value(p).numel()) = value(p).data;
      off += value(p).numel();
      rg = rg || requires_grad(p);
    }
    Var r = push(std::move(out), rg, nullptr);
    if (rg)
      set_back(r, [this, parts](const T& g) {
        long o = 0;
        for (Var p : parts) {
          long n = value(p).numel();
          if (requires_grad(p)) grad(p).data += g.data.segment(o, n);
          o += n;
        }
      });
    return r;
  }

  // Rows of equal length stacked into an [m, n] matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows needs at least one row");
    long n = value(rows[0]).numel();
    T out({static_cast<int>(rows.size()), static_cast<int>(n)});
    bool rg = false;
    for (size_t i = 0; i < rows.size(); ++i) {
      require(value(rows[i]).numel() == n, "stack_rows length mismatch");
      out.data.segment(i * n, n) = value(rows[i]).data;
      rg = rg || requires_grad(rows[i]);
    }
    Var r = push(std::move(out), rg, nullptr);
    if (rg)
      set_back(r, [this, rows, n](const T& g) {
        for (size_t i = 0; i < rows.size(); ++i)
          if (requires_grad(rows[i])) grad(rows[i]).data += g.data.segment(i * n, n);
      });
    return r;
  }

  // ---- linear algebra --------------------------------------------------

  Var matmul(Var a, Var b) {
    const T& av = value(a);
    const T& bv = value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), "matmul shape mismatch");
    int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    T out({m, n});
    out.mat(m, n).noalias() = av.mat(m, k) * bv.mat(k, n);
    return unary_or_binary(std::move(out), a, b, [this, a, b, m, k, n](const T& g) {
      if (requires_grad(a))
        grad(a).mat(m, k).noalias() += g.mat(m, n) * value(b).mat(k, n).transpose();
      if (requires_grad(b))
        grad(b).mat(k, n).noalias() += value(a).mat(m, k).transpose() * g.mat(m, n);
    });
  }

  // W [m, n] * x [n] -> [m]
  Var matvec(Var w, Var x) {
    const T& wv = value(w);
    const T& xv = value(x);
    require(wv.rank() == 2 && wv.dim(1) == xv.numel(), "matvec shape mismatch");
    int m = wv.dim(0), n = wv.dim(1);
    T out({m});
    out.data.matrix().noalias() = wv.mat(m, n) * xv.data.matrix();
    return unary_or_binary(std::move(out), w, x, [this, w, x, m, n](const T& g) {
      if (requires_grad(w))
        grad(w).mat(m, n).noalias() += g.data.matrix() * value(x).data.matrix().transpose();
      if (requires_grad(x))
        grad(x).data.matrix().noalias() += value(w).mat(m, n).transpose() * g.data.matrix();
    });
  }

  // ---- softmax family ----------------------------------------------------

  // Softmax over the whole (flattened) tensor; serves both class logits and
  // spatial position maps.
  Var softmax(Var a) {
    T out = value(a);
    S mx = out.data.maxCoeff();
    out.data = (out.data - mx).exp();
    out.data /= out.data.sum();
    Var r = unary(std::move(out), a, nullptr);
    set_back(r, [this, a, r](const T& g) {
      const auto& y = value(r).data;
      S dot = (g.data * y).sum();
      grad(a).data += y * (g.data - dot);
    });
    return r;
  }

  Var log_softmax(Var a) {
    const auto& x = value(a).data;
    S mx = x.maxCoeff();
    S lse = std::log((x - mx).exp().sum()) + mx;
    T out = value(a);
    out.data = x - lse;
    Var r = unary(std::move(out), a, nullptr);
    set_back(r, [this, a, r](const T& g) {
      S gsum = g.data.sum();
      grad(a).data += g.data - value(r).data.exp() * gsum;
    });
    return r;
  }

  // ---- conv / pool -------------------------------------------------------

  // x [C,H,W], w [OC,C,KH,KW], b [OC]; zero padding, square stride.
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const T& xv = value(x);
    const T& wv = value(w);
    require(xv.rank() == 3 && wv.rank() == 4, "conv2d expects CHW input and OCKK weight");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int OC = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
    require(wv.dim(1) == C, "conv2d channel mismatch");
    int OH = (H + 2 * pad - KH) / stride + 1;
    int OW = (W + 2 * pad - KW) / stride + 1;
    require(OH > 0 && OW > 0, "conv2d output would be empty");

    T cols = im2col(xv, KH, KW, stride, pad, OH, OW);
    int kdim = C * KH * KW;
    T out({OC, OH, OW});
    out.mat(OC, OH * OW).noalias() = wv.mat(OC, kdim) * cols.mat(kdim, OH * OW);
    for (int oc = 0; oc < OC; ++oc)
      out.data.segment(static_cast<long>(oc) * OH * OW, OH * OW) += value(b).data[oc];

    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var r = push(std::move(out), rg, nullptr);
    if (rg)
      set_back(r, [this, x, w, b, cols = std::move(cols), stride, pad, C, H, W, OC, KH, KW, OH,
                   OW, kdim](const T& g) {
        if (requires_grad(b)) {
          for (int oc = 0; oc < OC; ++oc)
            grad(b).data[oc] += g.data.segment(static_cast<long>(oc) * OH * OW, OH * OW).sum();
        }
        if (requires_grad(w))
          grad(w).mat(OC, kdim).noalias() +=
              g.mat(OC, OH * OW) * cols.mat(kdim, OH * OW).transpose();
        if (requires_grad(x)) {
          T dcols({kdim, OH * OW});
          dcols.mat(kdim, OH * OW).noalias() =
              value(w).mat(OC, kdim).transpose() * g.mat(OC, OH * OW);
          col2im_accum(dcols, grad(x), C, H, W, KH, KW, stride, pad, OH, OW);
        }
      });
    return r;
  }

  Var maxpool2d(Var x, int k, int stride) {
    const T& xv = value(x);
    require(xv.rank() == 3, "maxpool2d expects CHW");
    int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    int OH = (H - k) / stride + 1;
    int OW = (W - k) / stride + 1;
    require(OH > 0 && OW > 0, "maxpool2d output would be empty");
    T out({C, OH, OW});
    std::vector<long> arg(static_cast<size_t>(C) * OH * OW);
    for (int c = 0; c < C; ++c) {
      const S* plane = xv.data.data() + static_cast<long>(c) * H * W;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          long best = -1;
          S bv = S(0);
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
              long idx = static_cast<long>(oy * stride + dy) * W + (ox * stride + dx);
              if (best < 0 || plane[idx] > bv) {
                best = idx;
                bv = plane[idx];
              }
            }
          long o = (static_cast<long>(c) * OH + oy) * OW + ox;
          out.data[o] = bv;
          arg[o] = static_cast<long>(c) * H * W + best;
        }
    }
    return unary(std::move(out), x, [this, x, arg = std::move(arg)](const T& g) {
      for (long o = 0; o < g.numel(); ++o) grad(x).data[arg[o]] += g.data[o];
    });
  }

  // Global average pool CHW -> [C].
  Var avgpool_all(Var x) {
    const T& xv = value(x);
    require(xv.rank() == 3, "avgpool_all expects CHW");
    int C = xv.dim(0);
    long plane = static_cast<long>(xv.dim(1)) * xv.dim(2);
    T out({C});
    for (int c = 0; c < C; ++c) out.data[c] = xv.data.segment(c * plane, plane).mean();
    return unary(std::move(out), x, [this, x, C, plane](const T& g) {
      for (int c = 0; c < C; ++c)
        grad(x).data.segment(c * plane, plane) += g.data[c] / S(plane);
    });
  }

  Var reshape(Var a, std::vector<int> shp) {
    require(T::numel_of(shp) == value(a).numel(), "reshape numel mismatch");
    T out = value(a);
    out.shape = std::move(shp);
    return unary(std::move(out), a, [this, a](const T& g) { grad(a).data += g.data; });
  }

  // ---- backward ------------------------------------------------------------

  void backward(Var loss) {
    require(value(loss).numel() == 1, "backward expects a scalar loss");
    grad(loss).data[0] = S(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.rg && n.back && n.grad.numel() > 0) n.back(n.grad);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    T val;
    T grad;
    std::function<void(const T&)> back;
    bool rg = false;
  };

  Var push(T val, bool rg, std::function<void(const T&)> back) {
    nodes_.push_back(Node{std::move(val), T{}, std::move(back), rg});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var unary(T out, Var a, std::function<void(const T&)> back) {
    bool rg = requires_grad(a);
    Var r = push(std::move(out), rg, nullptr);
    if (rg) nodes_[r.i].back = std::move(back);
    return r;
  }

  Var unary_or_binary(T out, Var a, Var b, std::function<void(const T&)> back) {
    bool rg = requires_grad(a) || requires_grad(b);
    Var r = push(std::move(out), rg, nullptr);
    if (rg) nodes_[r.i].back = std::move(back);
    return r;
  }

  void set_back(Var r, std::function<void(const T&)> back) {
    if (nodes_[r.i].rg) nodes_[r.i].back = std::move(back);
  }

  void check_same_shape(Var a, Var b, const char* op) {
    require(value(a).numel() == value(b).numel(), std::string(op) + " shape mismatch");
  }

  static T im2col(const T& x, int KH, int KW, int stride, int pad, int OH, int OW) {
    int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    int kdim = C * KH * KW;
    T cols({kdim, OH * OW});
    S* dst = cols.data.data();
    for (int c = 0; c < C; ++c) {
      const S* plane = x.data.data() + static_cast<long>(c) * H * W;
      for (int ky = 0; ky < KH; ++ky)
        for (int kx = 0; kx < KW; ++kx) {
          for (int oy = 0; oy < OH; ++oy) {
            int iy = oy * stride + ky - pad;
            long row = ((static_cast<long>(c) * KH + ky) * KW + kx) * (static_cast<long>(OH) * OW) +
                       static_cast<long>(oy) * OW;
            if (iy < 0 || iy >= H) {
              for (int ox = 0; ox < OW; ++ox) dst[row + ox] = S(0);
              continue;
            }
            for (int ox = 0; ox < OW; ++ox) {
              int ix = ox * stride + kx - pad;
              dst[row + ox] = (ix < 0 || ix >= W) ? S(0) : plane[static_cast<long>(iy) * W + ix];
            }
          }
        }
    }
    return cols;
  }

  static void col2im_accum(const T& cols, T& dx, int C, int H, int W, int KH, int KW, int stride,
                           int pad, int OH, int OW) {
    const S* src = cols.data.data();
    for (int c = 0; c < C; ++c) {
      S* plane = dx.data.data() + static_cast<long>(c) * H * W;
      for (int ky = 0; ky < KH; ++ky)
        for (int kx = 0; kx < KW; ++kx) {
          for (int oy = 0; oy < OH; ++oy) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            long row = ((static_cast<long>(c) * KH + ky) * KW + kx) * (static_cast<long>(OH) * OW) +
                       static_cast<long>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < W) plane[static_cast<long>(iy) * W + ix] += src[row + ox];
            }
          }
        }
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace dualattn
