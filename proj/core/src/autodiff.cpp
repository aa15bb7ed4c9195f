#include "rupp/autodiff.hpp"

#include <cmath>

#include "rupp/error.hpp"
#include "rupp/ops.hpp"

namespace rupp {

template <typename T>
const Tensor<T>& Variable<T>::value() const {
  if (!tape_) throw UsageError("use of an unbound Variable");
  return tape_->nodes_[id_].value;
}

template <typename T>
Tensor<T> Variable<T>::grad() const {
  if (!tape_) throw UsageError("use of an unbound Variable");
  const auto& node = tape_->nodes_[id_];
  return node.grad ? *node.grad : Tensor<T>::zeros_like(node.value);
}

template <typename T>
bool Variable<T>::requires_grad() const {
  if (!tape_) throw UsageError("use of an unbound Variable");
  return tape_->nodes_[id_].requires_grad;
}

template <typename T>
void Tape<T>::check_owned(const Variable<T>& v) const {
  if (v.tape_ != this) {
    throw UsageError(v.tape_ ? "variable belongs to a different tape" : "use of an unbound Variable");
  }
}

template <typename T>
Variable<T> Tape<T>::constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Variable<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node node;
  node.op = requires_grad ? "leaf" : "constant";
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Variable<T>(this, nodes_.size() - 1);
}

template <typename T>
Variable<T> Tape<T>::parameter(Parameter<T>& p) {
  Node node;
  node.op = "parameter";
  node.value = p.value;
  node.requires_grad = p.requires_grad;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return Variable<T>(this, nodes_.size() - 1);
}

template <typename T>
Variable<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Variable<T>> inputs,
                            BackwardFn backward) {
  return record(op, std::move(value), std::vector<Variable<T>>(inputs), std::move(backward));
}

template <typename T>
Variable<T> Tape<T>::record(std::string_view op, Tensor<T> value, const std::vector<Variable<T>>& inputs,
                            BackwardFn backward) {
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  for (const auto& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Variable<T>(this, nodes_.size() - 1);
}

template <typename T>
void Tape<T>::backward(const Variable<T>& root) {
  check_owned(root);
  if (nodes_[root.id_].value.numel() != 1) {
    throw UsageError("backward root must be a scalar, got shape " + shape_str(nodes_[root.id_].value.shape()));
  }
  if (backward_done_) throw UsageError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[root.id_].requires_grad) return;

  nodes_[root.id_].grad = Tensor<T>::ones_like(nodes_[root.id_].value);
  std::vector<Tensor<T>*> slots;
  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.grad || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      Node& in = nodes_[node.inputs[i]];
      if (!in.requires_grad) continue;
      if (!in.grad) in.grad = Tensor<T>::zeros_like(in.value);
      slots[i] = &*in.grad;
    }
    node.backward(*node.grad, node.value, slots);
  }
  for (auto& node : nodes_) {
    if (node.param && node.grad) {
      auto dst = node.param->grad.data();
      const auto src = node.grad->data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
  }
}

namespace ad {

namespace {

template <typename T>
Tape<T>& tape_of(const Variable<T>& v) {
  if (!v.tape()) throw UsageError("use of an unbound Variable");
  return *v.tape();
}

template <typename T>
bool channel_broadcast(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() != b.shape() && a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1);
}

// Reduce a full-shape gradient onto a broadcast rank-1 channel operand.
template <typename T>
void accumulate_channel(Tensor<T>& dst, const Tensor<T>& full_grad) {
  const std::size_t c = full_grad.dim(1), plane = full_grad.dim(2) * full_grad.dim(3);
  std::vector<double> acc(c, 0.0);
  for (std::size_t i = 0; i < full_grad.numel(); ++i) acc[(i / plane) % c] += static_cast<double>(full_grad[i]);
  for (std::size_t k = 0; k < c; ++k) dst[k] += static_cast<T>(acc[k]);
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  const auto s = src.data();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] += s[i];
}

template <typename T>
Variable<T> unary(const Variable<T>& x, UnaryOp op, const char* name,
                  void (*grad)(const T* go, const T* xv, const T* yv, T* gi, std::size_t n)) {
  const Tensor<T>* xv = &x.value();
  return tape_of(x).record(name, map_unary(op, *xv), {x},
                           [xv, grad](const Tensor<T>& go, const Tensor<T>& out, std::span<Tensor<T>* const> g) {
                             grad(go.raw(), xv->raw(), out.raw(), g[0]->raw(), go.numel());
                           });
}

}  // namespace

template <typename T>
Variable<T> relu(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::relu, "relu", [](const T* go, const T* xv, const T*, T* gi, std::size_t n) {
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < n; ++i) gi[i] += xv[i] > T(0) ? go[i] : T(0);
  });
}

template <typename T>
Variable<T> sigmoid(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::sigmoid, "sigmoid", [](const T* go, const T*, const T* y, T* gi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gi[i] += go[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Variable<T> neg(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::neg, "neg", [](const T* go, const T*, const T*, T* gi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gi[i] -= go[i];
  });
}

template <typename T>
Variable<T> exp(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::exp, "exp", [](const T* go, const T*, const T* y, T* gi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gi[i] += go[i] * y[i];
  });
}

template <typename T>
Variable<T> log(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::log, "log", [](const T* go, const T* xv, const T*, T* gi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gi[i] += go[i] / xv[i];
  });
}

template <typename T>
Variable<T> square(const Variable<T>& x) {
  return unary<T>(x, UnaryOp::square, "square", [](const T* go, const T* xv, const T*, T* gi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gi[i] += T(2) * xv[i] * go[i];
  });
}

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  const bool bcast = channel_broadcast(a.value(), b.value());
  return tape_of(a).record("add", broadcast_binary(BinaryOp::add, a.value(), b.value()), {a, b},
                           [bcast](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             if (g[0]) accumulate(*g[0], go);
                             if (g[1]) bcast ? accumulate_channel(*g[1], go) : accumulate(*g[1], go);
                           });
}

template <typename T>
Variable<T> sub(const Variable<T>& a, const Variable<T>& b) {
  const bool bcast = channel_broadcast(a.value(), b.value());
  return tape_of(a).record("sub", broadcast_binary(BinaryOp::sub, a.value(), b.value()), {a, b},
                           [bcast](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             if (g[0]) accumulate(*g[0], go);
                             if (g[1]) {
                               const Tensor<T> ng = map_unary(UnaryOp::neg, go);
                               bcast ? accumulate_channel(*g[1], ng) : accumulate(*g[1], ng);
                             }
                           });
}

template <typename T>
Variable<T> mul(const Variable<T>& a, const Variable<T>& b) {
  const bool bcast = channel_broadcast(a.value(), b.value());
  const Tensor<T>* av = &a.value();
  const Tensor<T>* bv = &b.value();
  return tape_of(a).record("mul", broadcast_binary(BinaryOp::mul, *av, *bv), {a, b},
                           [bcast, av, bv](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             if (g[0]) accumulate(*g[0], broadcast_binary(BinaryOp::mul, go, *bv));
                             if (g[1]) {
                               const Tensor<T> full = broadcast_binary(BinaryOp::mul, go, *av);
                               bcast ? accumulate_channel(*g[1], full) : accumulate(*g[1], full);
                             }
                           });
}

template <typename T>
Variable<T> div(const Variable<T>& a, const Variable<T>& b) {
  const bool bcast = channel_broadcast(a.value(), b.value());
  const Tensor<T>* bv = &b.value();
  return tape_of(a).record(
      "div", broadcast_binary(BinaryOp::div, a.value(), *bv), {a, b},
      [bcast, bv](const Tensor<T>& go, const Tensor<T>& out, std::span<Tensor<T>* const> g) {
        const Tensor<T> ga = broadcast_binary(BinaryOp::div, go, *bv);
        if (g[0]) accumulate(*g[0], ga);
        if (g[1]) {
          // d(a/b)/db = -(a/b)/b
          Tensor<T> full = broadcast_binary(BinaryOp::mul, ga, out);
          full = map_unary(UnaryOp::neg, full);
          bcast ? accumulate_channel(*g[1], full) : accumulate(*g[1], full);
        }
      });
}

template <typename T>
Variable<T> add_scalar(const Variable<T>& x, T c) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v += c;
  return tape_of(x).record("add_scalar", std::move(out), {x},
                           [](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             accumulate(*g[0], go);
                           });
}

template <typename T>
Variable<T> mul_scalar(const Variable<T>& x, T c) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= c;
  return tape_of(x).record("mul_scalar", std::move(out), {x},
                           [c](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             auto gi = g[0]->data();
                             for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += c * go[i];
                           });
}

template <typename T>
Variable<T> sum(const Variable<T>& x) {
  return tape_of(x).record("sum", reduce(ReduceOp::sum, x.value(), std::nullopt), {x},
                           [](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             for (auto& v : g[0]->data()) v += go[0];
                           });
}

template <typename T>
Variable<T> mean(const Variable<T>& x) {
  const T inv = T(1) / static_cast<T>(x.value().numel());
  return tape_of(x).record("mean", reduce(ReduceOp::mean, x.value(), std::nullopt), {x},
                           [inv](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             for (auto& v : g[0]->data()) v += go[0] * inv;
                           });
}

template <typename T>
Variable<T> conv2d(const Variable<T>& x, const Variable<T>& weight, const Variable<T>* bias, const ConvSpec& spec) {
  const Tensor<T>* xv = &x.value();
  const Tensor<T>* wv = &weight.value();
  Tensor<T> out = rupp::conv2d(*xv, *wv, bias ? &bias->value() : nullptr, spec);
  std::vector<Variable<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape_of(x).record(
      "conv2d", std::move(out), inputs,
      [xv, wv, spec](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
        const bool need_bias = g.size() > 2 && g[2];
        auto grads = conv2d_backward(go, *xv, *wv, spec, g[0] != nullptr, g[1] != nullptr, need_bias);
        if (g[0]) accumulate(*g[0], grads.input);
        if (g[1]) {
          if (conv_backward_fault().load()) {
            for (auto& v : grads.weight.data()) v = v * T(1.05) + T(1e-3);
          }
          accumulate(*g[1], grads.weight);
        }
        if (need_bias) accumulate(*g[2], grads.bias);
      });
}

template <typename T>
Variable<T> maxpool2d(const Variable<T>& x) {
  auto pooled = rupp::maxpool2d(x.value());
  Shape in_shape = x.value().shape();
  return tape_of(x).record(
      "maxpool2d", std::move(pooled.output), {x},
      [argmax = std::move(pooled.argmax), in_shape](const Tensor<T>& go, const Tensor<T>&,
                                                    std::span<Tensor<T>* const> g) {
        accumulate(*g[0], maxpool2d_backward(go, argmax, in_shape));
      });
}

template <typename T>
Variable<T> upsample2d(const Variable<T>& x, std::size_t factor) {
  return tape_of(x).record("upsample2d", rupp::upsample2d(x.value(), factor), {x},
                           [factor](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             accumulate(*g[0], upsample2d_backward(go, factor));
                           });
}

template <typename T>
Variable<T> concat_channels(const Variable<T>& a, const Variable<T>& b) {
  const std::size_t ca = a.value().dim(1);
  return tape_of(a).record("concat_channels", rupp::concat_channels(a.value(), b.value()), {a, b},
                           [ca](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
                             if (g[0]) accumulate(*g[0], slice_channels(go, 0, ca));
                             if (g[1]) accumulate(*g[1], slice_channels(go, ca, go.dim(1)));
                           });
}

template <typename T>
Variable<T> scale_by_map(const Variable<T>& x, const Variable<T>& map) {
  const Tensor<T>* xv = &x.value();
  const Tensor<T>* mv = &map.value();
  if (xv->rank() != 4 || mv->rank() != 4 || mv->dim(1) != 1 || xv->dim(0) != mv->dim(0) ||
      xv->dim(2) != mv->dim(2) || xv->dim(3) != mv->dim(3)) {
    throw ShapeError("scale_by_map: map " + shape_str(mv->shape()) + " incompatible with " + shape_str(xv->shape()));
  }
  const std::size_t n_batch = xv->dim(0), c = xv->dim(1), plane = xv->dim(2) * xv->dim(3);
  Tensor<T> out(xv->shape());
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* m = mv->raw() + n * plane;
    for (std::size_t k = 0; k < c; ++k) {
      const T* src = xv->raw() + (n * c + k) * plane;
      T* dst = out.raw() + (n * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * m[i];
    }
  }
  return tape_of(x).record(
      "scale_by_map", std::move(out), {x, map},
      [xv, mv, n_batch, c, plane](const Tensor<T>& go, const Tensor<T>&, std::span<Tensor<T>* const> g) {
        for (std::size_t n = 0; n < n_batch; ++n) {
          const T* m = mv->raw() + n * plane;
          for (std::size_t k = 0; k < c; ++k) {
            const std::size_t off = (n * c + k) * plane;
            if (g[0]) {
              T* gx = g[0]->raw() + off;
              for (std::size_t i = 0; i < plane; ++i) gx[i] += go[off + i] * m[i];
            }
            if (g[1]) {
              T* gm = g[1]->raw() + n * plane;
              const T* src = xv->raw() + off;
              for (std::size_t i = 0; i < plane; ++i) gm[i] += go[off + i] * src[i];
            }
          }
        }
      });
}

namespace {

template <typename T>
void check_bn_operands(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  if (x.rank() != 4) throw ShapeError("batch norm expects NCHW input, got " + shape_str(x.shape()));
  const Shape ch{x.dim(1)};
  if (gamma.shape() != ch || beta.shape() != ch) {
    throw ShapeError("batch norm gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match channels of " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
BatchNormOutput<T> batch_norm_train(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta, T eps) {
  const Tensor<T>& xv = x.value();
  check_bn_operands(xv, gamma.value(), beta.value());
  const std::size_t n_batch = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const std::size_t m = n_batch * plane;
  if (m < 2) {
    throw UsageError("batch norm in train mode needs N*H*W >= 2 per channel, got " + std::to_string(m));
  }
  Tensor<T> mean({c}), var({c});
  std::vector<T> inv_std(c);
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* src = xv.raw() + (n * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(src[i]);
    }
    const double mu = s / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* src = xv.raw() + (n * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(src[i]) - mu;
        sq += d * d;
      }
    }
    mean[k] = static_cast<T>(mu);
    var[k] = static_cast<T>(sq / static_cast<double>(m));
    inv_std[k] = T(1) / std::sqrt(var[k] + eps);
  }

  // Normalized activations are kept for backward.
  Tensor<T> xhat(xv.shape());
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (n * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = (xv[off + i] - mean[k]) * inv_std[k];
        xhat[off + i] = h;
        out[off + i] = gv[k] * h + bv[k];
      }
    }
  }
  const Tensor<T>* gptr = &gv;
  Variable<T> result = tape_of(x).record(
      "batch_norm_train", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_std, gptr, n_batch, c, plane, m](const Tensor<T>& go, const Tensor<T>&,
                                                                    std::span<Tensor<T>* const> g) {
        for (std::size_t k = 0; k < c; ++k) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t off = (n * c + k) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy += static_cast<double>(go[off + i]);
              sum_dy_xhat += static_cast<double>(go[off + i]) * static_cast<double>(xhat[off + i]);
            }
          }
          if (g[1]) (*g[1])[k] += static_cast<T>(sum_dy_xhat);
          if (g[2]) (*g[2])[k] += static_cast<T>(sum_dy);
          if (g[0]) {
            const T scale = (*gptr)[k] * inv_std[k] / static_cast<T>(m);
            const T mf = static_cast<T>(m);
            const T sdy = static_cast<T>(sum_dy), sdyx = static_cast<T>(sum_dy_xhat);
            for (std::size_t n = 0; n < n_batch; ++n) {
              const std::size_t off = (n * c + k) * plane;
              T* gx = g[0]->raw() + off;
              for (std::size_t i = 0; i < plane; ++i) {
                gx[i] += scale * (mf * go[off + i] - sdy - xhat[off + i] * sdyx);
              }
            }
          }
        }
      });
  return {result, std::move(mean), std::move(var)};
}

template <typename T>
Variable<T> batch_norm_eval(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta,
                            const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  const Tensor<T>& xv = x.value();
  check_bn_operands(xv, gamma.value(), beta.value());
  const std::size_t n_batch = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (mean.shape() != Shape{c} || var.shape() != Shape{c}) {
    throw ShapeError("batch norm running statistics do not match channel count " + std::to_string(c));
  }
  std::vector<T> inv_std(c);
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = T(1) / std::sqrt(var[k] + eps);
  Tensor<T> out(xv.shape());
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t off = (n * c + k) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = gv[k] * (xv[off + i] - mean[k]) * inv_std[k] + bv[k];
    }
  }
  const Tensor<T>* xptr = &xv;
  const Tensor<T>* gptr = &gv;
  return tape_of(x).record(
      "batch_norm_eval", std::move(out), {x, gamma, beta},
      [xptr, gptr, mean, inv_std, n_batch, c, plane](const Tensor<T>& go, const Tensor<T>&,
                                                     std::span<Tensor<T>* const> g) {
        for (std::size_t k = 0; k < c; ++k) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t off = (n * c + k) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const T h = ((*xptr)[off + i] - mean[k]) * inv_std[k];
              sum_dy += static_cast<double>(go[off + i]);
              sum_dy_xhat += static_cast<double>(go[off + i]) * static_cast<double>(h);
              if (g[0]) (*g[0])[off + i] += go[off + i] * (*gptr)[k] * inv_std[k];
            }
          }
          if (g[1]) (*g[1])[k] += static_cast<T>(sum_dy_xhat);
          if (g[2]) (*g[2])[k] += static_cast<T>(sum_dy);
        }
      });
}

#define RUPP_INSTANTIATE_AD(T)                                                                                     \
  template Variable<T> relu(const Variable<T>&);                                                                   \
  template Variable<T> sigmoid(const Variable<T>&);                                                                \
  template Variable<T> neg(const Variable<T>&);                                                                    \
  template Variable<T> exp(const Variable<T>&);                                                                    \
  template Variable<T> log(const Variable<T>&);                                                                    \
  template Variable<T> square(const Variable<T>&);                                                                 \
  template Variable<T> add(const Variable<T>&, const Variable<T>&);                                                \
  template Variable<T> sub(const Variable<T>&, const Variable<T>&);                                                \
  template Variable<T> mul(const Variable<T>&, const Variable<T>&);                                                \
  template Variable<T> div(const Variable<T>&, const Variable<T>&);                                                \
  template Variable<T> add_scalar(const Variable<T>&, T);                                                          \
  template Variable<T> mul_scalar(const Variable<T>&, T);                                                          \
  template Variable<T> sum(const Variable<T>&);                                                                    \
  template Variable<T> mean(const Variable<T>&);                                                                   \
  template Variable<T> conv2d(const Variable<T>&, const Variable<T>&, const Variable<T>*, const ConvSpec&);        \
  template Variable<T> maxpool2d(const Variable<T>&);                                                              \
  template Variable<T> upsample2d(const Variable<T>&, std::size_t);                                                \
  template Variable<T> concat_channels(const Variable<T>&, const Variable<T>&);                                    \
  template Variable<T> scale_by_map(const Variable<T>&, const Variable<T>&);                                       \
  template BatchNormOutput<T> batch_norm_train(const Variable<T>&, const Variable<T>&, const Variable<T>&, T);     \
  template Variable<T> batch_norm_eval(const Variable<T>&, const Variable<T>&, const Variable<T>&,                 \
                                       const Tensor<T>&, const Tensor<T>&, T);

RUPP_INSTANTIATE_AD(float)
RUPP_INSTANTIATE_AD(double)

#undef RUPP_INSTANTIATE_AD

}  // namespace ad

template class Variable<float>;
template class Variable<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace rupp
