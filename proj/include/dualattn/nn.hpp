#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualattn/autodiff.hpp"
#include "dualattn/rng.hpp"
#include "dualattn/tensor.hpp"

namespace dualattn {

// Ordered, named registry of the parameter tensors of a network. The order is
// the canonical one for gradient buffers, optimizer state and checkpoints.
template <typename S>
struct ParamList {
  std::vector<std::string> names;
  std::vector<Tensor<S>*> tensors;

  void add(const std::string& name, Tensor<S>& t) {
    names.push_back(name);
    tensors.push_back(&t);
  }
  size_t size() const { return tensors.size(); }
  long total_count() const {
    long n = 0;
    for (auto* t : tensors) n += t->numel();
    return n;
  }
};

// Gradient accumulator aligned with a ParamList.
template <typename S>
struct GradBuffer {
  std::vector<Tensor<S>> grads;

  explicit GradBuffer(const ParamList<S>& params) {
    grads.reserve(params.size());
    for (auto* t : params.tensors) grads.push_back(Tensor<S>::zeros(t->shape));
  }
  void add(const GradBuffer& other) {
    for (size_t i = 0; i < grads.size(); ++i) grads[i].data += other.grads[i].data;
  }
  void scale(S k) {
    for (auto& g : grads) g.data *= k;
  }
  void zero() {
    for (auto& g : grads) g.data.setZero();
  }
};

// Feeds parameter tensors into a graph once each and hands back the grads in
// ParamList order after the backward pass.
template <typename S>
class Binding {
 public:
  Binding(Graph<S>& g, bool train) : g_(g), train_(train) {}

  Var operator()(Tensor<S>& t) {
    auto it = vars_.find(&t);
    if (it != vars_.end()) return it->second;
    Var v = g_.input(t, train_);
    vars_.emplace(&t, v);
    return v;
  }

  bool training() const { return train_; }

  GradBuffer<S> read_grads(const ParamList<S>& params) {
    GradBuffer<S> out(params);
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = vars_.find(params.tensors[i]);
      if (it == vars_.end()) continue;  // parameter unused this pass
      Tensor<S>& g = g_.grad(it->second);
      if (g.numel() > 0) out.grads[i].data += g.data;
    }
    return out;
  }

 private:
  Graph<S>& g_;
  bool train_;
  std::unordered_map<const Tensor<S>*, Var> vars_;
};

// ---- layers ------------------------------------------------------------

template <typename S>
struct LinearLayer {
  int in = 0, out = 0;
  Tensor<S> w, b;

  LinearLayer() = default;
  LinearLayer(int in_, int out_, Rng& rng) : in(in_), out(out_) {
    S lim = static_cast<S>(std::sqrt(6.0 / in_));
    w = Tensor<S>::uniform({out_, in_}, -lim, lim, rng);
    b = Tensor<S>::zeros({out_});
  }

  Var apply(Graph<S>& g, Binding<S>& bind, Var x) {
    return g.add(g.matvec(bind(w), x), bind(b));
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    p.add(prefix + ".w", w);
    p.add(prefix + ".b", b);
  }
};

template <typename S>
struct Conv2dLayer {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
  Tensor<S> w, b;

  Conv2dLayer() = default;
  Conv2dLayer(int in_c_, int out_c_, int k_, int stride_, int pad_, Rng& rng)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_) {
    S lim = static_cast<S>(std::sqrt(6.0 / (in_c_ * k_ * k_)));
    w = Tensor<S>::uniform({out_c_, in_c_, k_, k_}, -lim, lim, rng);
    b = Tensor<S>::zeros({out_c_});
  }

  Var apply(Graph<S>& g, Binding<S>& bind, Var x) {
    return g.conv2d(x, bind(w), bind(b), stride, pad);
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    p.add(prefix + ".w", w);
    p.add(prefix + ".b", b);
  }
};

// Single LSTM cell; gate order i, f, g, o. Forget bias starts at 1.
template <typename S>
struct LstmCell {
  int in = 0, hidden = 0;
  Tensor<S> w, b;

  LstmCell() = default;
  LstmCell(int in_, int hidden_, Rng& rng) : in(in_), hidden(hidden_) {
    S lim = static_cast<S>(std::sqrt(6.0 / (in_ + hidden_)));
    w = Tensor<S>::uniform({4 * hidden_, in_ + hidden_}, -lim, lim, rng);
    b = Tensor<S>::zeros({4 * hidden_});
    for (int i = hidden_; i < 2 * hidden_; ++i) b.data[i] = S(1);
  }

  struct State {
    Var h, c;
  };

  State apply(Graph<S>& g, Binding<S>& bind, Var x, State s) {
    Var z = g.concat({x, s.h});
    Var gates = g.add(g.matvec(bind(w), z), bind(b));
    Var gi = g.sigmoid(g.slice(gates, 0, hidden));
    Var gf = g.sigmoid(g.slice(gates, hidden, hidden));
    Var gg = g.tanh_op(g.slice(gates, 2 * hidden, hidden));
    Var go = g.sigmoid(g.slice(gates, 3 * hidden, hidden));
    Var c_next = g.add(g.mul(gf, s.c), g.mul(gi, gg));
    Var h_next = g.mul(go, g.tanh_op(c_next));
    return {h_next, c_next};
  }

  State zero_state(Graph<S>& g) const {
    return {g.constant(Tensor<S>::zeros({hidden})), g.constant(Tensor<S>::zeros({hidden}))};
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    p.add(prefix + ".w", w);
    p.add(prefix + ".b", b);
  }
};

// Two 3x3 convs with identity skip; channel count is preserved.
template <typename S>
struct ResidualBlock {
  Conv2dLayer<S> c1, c2;

  ResidualBlock() = default;
  ResidualBlock(int channels, Rng& rng)
      : c1(channels, channels, 3, 1, 1, rng), c2(channels, channels, 3, 1, 1, rng) {}

  Var apply(Graph<S>& g, Binding<S>& bind, Var x) {
    Var y = g.relu(c1.apply(g, bind, x));
    y = c2.apply(g, bind, y);
    return g.relu(g.add(y, x));
  }

  void collect(ParamList<S>& p, const std::string& prefix) {
    c1.collect(p, prefix + ".c1");
    c2.collect(p, prefix + ".c2");
  }
};

// ---- optimizer -----------------------------------------------------------

template <typename S>
class Adam {
 public:
  explicit Adam(const ParamList<S>& params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : base_lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* t : params.tensors) {
      m_.push_back(Tensor<S>::zeros(t->shape));
      v_.push_back(Tensor<S>::zeros(t->shape));
    }
  }

  void set_lr(double lr) { base_lr_ = lr; }
  double lr() const { return base_lr_; }

  void step(const ParamList<S>& params, const GradBuffer<S>& grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params.tensors[i]->data;
      const auto& g = grads.grads[i].data;
      m_[i].data = static_cast<S>(beta1_) * m_[i].data + static_cast<S>(1.0 - beta1_) * g;
      v_[i].data = static_cast<S>(beta2_) * v_[i].data + static_cast<S>(1.0 - beta2_) * g * g;
      p -= static_cast<S>(base_lr_ / bc1) * m_[i].data /
           ((v_[i].data / static_cast<S>(bc2)).sqrt() + static_cast<S>(eps_));
    }
  }

 private:
  double base_lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

// Step decay: lr = lr0 * gamma^floor(epoch / step_size).
inline double step_decay_lr(double lr0, double gamma, int step_size, int epoch) {
  if (step_size <= 0) return lr0;
  return lr0 * std::pow(gamma, epoch / step_size);
}

}  // namespace dualattn
