#include "rupp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rupp/error.hpp"

namespace rupp {

namespace {

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw ShapeError(std::string(what) + " expects an NCHW tensor, got " + shape_str(s));
}

// C(MxN) += A(MxK) * B(KxN), all row-major. Four rows of C per pass so each B row
// is streamed once per block; the inner loop is a contiguous axpy.
template <typename T>
void gemm_nn_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a0 = a[i * k + p];
      const T a1 = a[(i + 1) * k + p];
      const T a2 = a[(i + 2) * k + p];
      const T a3 = a[(i + 3) * k + p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = br[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

// C(MxN) += A^T * B where A is stored (K x M).
template <typename T>
void gemm_tn_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      const T* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
}

template <typename T>
void check_conv_operands(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec) {
  require_rank4(x.shape(), "conv2d input");
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be (C_out, C_in, kh, kw), got " + shape_str(weight.shape()));
  if (weight.dim(2) != spec.kernel_h || weight.dim(3) != spec.kernel_w) {
    throw ShapeError("conv2d weight " + shape_str(weight.shape()) + " disagrees with kernel " +
                     std::to_string(spec.kernel_h) + "x" + std::to_string(spec.kernel_w));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d bias " + shape_str(bias->shape()) + " does not match C_out=" +
                     std::to_string(weight.dim(0)));
  }
  spec.validate();
}

}  // namespace

template <typename T>
Tensor<T> map_unary(UnaryOp op, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const auto in = x.data();
  auto o = out.data();
  switch (op) {
    case UnaryOp::relu:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case UnaryOp::sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) {
        // Split by sign so exp never overflows.
        if (in[i] >= T(0)) {
          o[i] = T(1) / (T(1) + std::exp(-in[i]));
        } else {
          const T e = std::exp(in[i]);
          o[i] = e / (T(1) + e);
        }
      }
      break;
    case UnaryOp::neg:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = -in[i];
      break;
    case UnaryOp::exp:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::exp(in[i]);
      break;
    case UnaryOp::log:
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] > T(0))) {
          throw DomainError("log of non-positive value " + std::to_string(in[i]) + " at index " + std::to_string(i));
        }
        o[i] = std::log(in[i]);
      }
      break;
    case UnaryOp::square:
      for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] * in[i];
      break;
  }
  return out;
}

template <typename T>
Tensor<T> broadcast_binary(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool channel = !same && a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1);
  if (!same && !channel) {
    throw ShapeError("incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  auto apply = [op](T x, T y, std::size_t i) -> T {
    switch (op) {
      case BinaryOp::add: return x + y;
      case BinaryOp::sub: return x - y;
      case BinaryOp::mul: return x * y;
      case BinaryOp::div:
        if (y == T(0)) throw DomainError("division by zero at index " + std::to_string(i));
        return x / y;
    }
    return x;
  };
  Tensor<T> out(a.shape());
  auto o = out.data();
  const auto av = a.data();
  const auto bv = b.data();
  if (same) {
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = apply(av[i], bv[i], i);
  } else {
    const std::size_t channels = a.dim(1);
    const std::size_t plane = a.dim(2) * a.dim(3);
    for (std::size_t i = 0; i < av.size(); ++i) o[i] = apply(av[i], bv[(i / plane) % channels], i);
  }
  return out;
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, const std::optional<std::vector<std::size_t>>& axes,
                 bool keepdims) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, !axes.has_value());
  if (axes) {
    for (auto ax : *axes) {
      if (ax >= rank) throw ShapeError("reduce axis " + std::to_string(ax) + " invalid for shape " + shape_str(x.shape()));
      if (reduced[ax]) throw ShapeError("reduce axis " + std::to_string(ax) + " listed twice");
      reduced[ax] = true;
    }
  }
  std::size_t count = 1;
  Shape out_shape;
  for (std::size_t d = 0; d < rank; ++d) {
    if (reduced[d]) {
      if (x.dim(d) == 0) throw DomainError("reduce over empty axis " + std::to_string(d));
      count *= x.dim(d);
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.dim(d));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  const std::size_t out_n = shape_numel(out_shape);
  std::vector<double> acc(out_n, op == ReduceOp::max ? -std::numeric_limits<double>::infinity() : 0.0);

  // Walk the input in row-major order, tracking the output offset incrementally.
  std::vector<std::size_t> out_stride(rank, 0);
  {
    std::size_t s = 1;
    for (std::size_t d = rank; d-- > 0;) {
      if (!reduced[d]) {
        out_stride[d] = s;
        s *= x.dim(d);
      }
    }
  }
  std::vector<std::size_t> idx(rank, 0);
  const auto xv = x.data();
  std::size_t o = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    if (op == ReduceOp::max) {
      if (v > acc[o]) acc[o] = v;
    } else {
      acc[o] += v;
    }
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < x.dim(d)) {
        o += out_stride[d];
        break;
      }
      o -= out_stride[d] * (x.dim(d) - 1);
      idx[d] = 0;
    }
  }

  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < out_n; ++i) {
    out[i] = static_cast<T>(op == ReduceOp::mean ? acc[i] / static_cast<double>(count) : acc[i]);
  }
  return out;
}

template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec) {
  check_conv_operands(x, weight, bias, spec);
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = weight.dim(0);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  Tensor<T> out({n_batch, c_out, oh, ow});
  const auto pad = static_cast<long long>(spec.padding);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xo = 0; xo < ow; ++xo) {
          T acc = bias ? (*bias)[co] : T(0);
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
              const long long iy = static_cast<long long>(y * spec.stride + ki * spec.dilation) - pad;
              if (iy < 0 || iy >= static_cast<long long>(h)) continue;
              for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
                const long long ix = static_cast<long long>(xo * spec.stride + kj * spec.dilation) - pad;
                if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                acc += weight.at(co, ci, ki, kj) *
                       x.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          out.at(n, co, y, xo) = acc;
        }
      }
    }
  }
  return out;
}

namespace detail {

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* col) {
  const auto pad = static_cast<long long>(spec.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = image + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        T* dst = col + row * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
          const long long iy = static_cast<long long>(y * spec.stride + ki * spec.dilation) - pad;
          T* drow = dst + y * out_w;
          if (iy < 0 || iy >= static_cast<long long>(height)) {
            std::fill(drow, drow + out_w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t xo = 0; xo < out_w; ++xo) {
            const long long ix = static_cast<long long>(xo * spec.stride + kj * spec.dilation) - pad;
            drow[xo] = (ix < 0 || ix >= static_cast<long long>(width)) ? T(0) : srow[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t height, std::size_t width, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* image) {
  const auto pad = static_cast<long long>(spec.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = image + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel_w; ++kj, ++row) {
        const T* src = col + row * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
          const long long iy = static_cast<long long>(y * spec.stride + ki * spec.dilation) - pad;
          if (iy < 0 || iy >= static_cast<long long>(height)) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * width;
          const T* srow = src + y * out_w;
          for (std::size_t xo = 0; xo < out_w; ++xo) {
            const long long ix = static_cast<long long>(xo * spec.stride + kj * spec.dilation) - pad;
            if (ix >= 0 && ix < static_cast<long long>(width)) drow[ix] += srow[xo];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::type_identity_t<Tensor<T>>* bias, const ConvSpec& spec) {
  check_conv_operands(x, weight, bias, spec);
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = weight.dim(0);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const std::size_t k = c_in * spec.kernel_h * spec.kernel_w;
  const std::size_t p = oh * ow;
  Tensor<T> out({n_batch, c_out, oh, ow});
  std::vector<T> col(k * p);
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* o = out.raw() + n * c_out * p;
    if (bias) {
      for (std::size_t co = 0; co < c_out; ++co) std::fill(o + co * p, o + (co + 1) * p, (*bias)[co]);
    }
    detail::im2col(x.raw() + n * c_in * h * w, c_in, h, w, spec, oh, ow, col.data());
    gemm_nn_accumulate(c_out, p, k, weight.raw(), col.data(), o);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& weight,
                             const ConvSpec& spec, bool need_input, bool need_weight, bool need_bias) {
  check_conv_operands(x, weight, static_cast<const Tensor<T>*>(nullptr), spec);
  const std::size_t n_batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t c_out = weight.dim(0);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const Shape expect{n_batch, c_out, oh, ow};
  if (grad_out.shape() != expect) {
    throw ShapeError("conv2d grad_out " + shape_str(grad_out.shape()) + " expected " + shape_str(expect));
  }
  const std::size_t k = c_in * spec.kernel_h * spec.kernel_w;
  const std::size_t p = oh * ow;

  ConvGrads<T> g;
  if (need_input) g.input = Tensor<T>(x.shape());
  if (need_weight) g.weight = Tensor<T>(weight.shape());
  if (need_bias) {
    g.bias = Tensor<T>({c_out});
    std::vector<double> acc(c_out, 0.0);
    for (std::size_t n = 0; n < n_batch; ++n) {
      for (std::size_t co = 0; co < c_out; ++co) {
        const T* go = grad_out.raw() + (n * c_out + co) * p;
        for (std::size_t i = 0; i < p; ++i) acc[co] += static_cast<double>(go[i]);
      }
    }
    for (std::size_t co = 0; co < c_out; ++co) g.bias[co] = static_cast<T>(acc[co]);
  }
  if (!need_input && !need_weight) return g;

  std::vector<T> col(k * p);
  std::vector<T> col_t(need_weight ? k * p : 0);
  for (std::size_t n = 0; n < n_batch; ++n) {
    const T* go = grad_out.raw() + n * c_out * p;
    if (need_weight) {
      detail::im2col(x.raw() + n * c_in * h * w, c_in, h, w, spec, oh, ow, col.data());
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t i = 0; i < p; ++i) col_t[i * k + r] = col[r * p + i];
      }
      // dW(C_out x K) += dOut(C_out x P) * col^T(P x K)
      gemm_nn_accumulate(c_out, k, p, go, col_t.data(), g.weight.raw());
    }
    if (need_input) {
      // dcol(K x P) = W^T(K x C_out) * dOut(C_out x P)
      std::fill(col.begin(), col.end(), T(0));
      gemm_tn_accumulate(k, p, c_out, weight.raw(), go, col.data());
      detail::col2im(col.data(), c_in, h, w, spec, oh, ow, g.input.raw() + n * c_in * h * w);
    }
  }
  return g;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x) {
  require_rank4(x.shape(), "maxpool2d");
  const std::size_t n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2d needs even spatial dims, got " + std::to_string(h) + "x" + std::to_string(w) +
                     "; resize the input to a multiple of 2^(depth-1)");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult<T> r{Tensor<T>({n_batch, c, oh, ow}), {}};
  r.argmax.resize(r.output.numel());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n_batch * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
        std::size_t best = base + (2 * y) * w + 2 * xo;
        const std::size_t cands[3] = {best + 1, best + w, best + w + 1};
        // Strict comparison: the first maximum in row-major scan wins ties.
        for (auto idx : cands) {
          if (x[idx] > x[best]) best = idx;
        }
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape) {
  if (argmax.size() != grad_out.numel()) throw ShapeError("maxpool2d_backward: argmax/grad size mismatch");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
Tensor<T> upsample2d(const Tensor<T>& x, std::size_t factor) {
  require_rank4(x.shape(), "upsample2d");
  if (factor == 0) throw ShapeError("upsample2d factor must be >= 1");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor<T> out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.raw() + p * h * w;
    T* dst = out.raw() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const T* srow = src + (y / factor) * w;
      T* drow = dst + y * ow;
      for (std::size_t xo = 0; xo < ow; ++xo) drow[xo] = srow[xo / factor];
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample2d_backward(const Tensor<T>& grad_out, std::size_t factor) {
  require_rank4(grad_out.shape(), "upsample2d_backward");
  if (factor == 0 || grad_out.dim(2) % factor != 0 || grad_out.dim(3) % factor != 0) {
    throw ShapeError("upsample2d_backward: grad " + shape_str(grad_out.shape()) + " not divisible by factor");
  }
  const std::size_t planes = grad_out.dim(0) * grad_out.dim(1);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  const std::size_t h = oh / factor, w = ow / factor;
  Tensor<T> g({grad_out.dim(0), grad_out.dim(1), h, w});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = grad_out.raw() + p * oh * ow;
    T* dst = g.raw() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      T* drow = dst + (y / factor) * w;
      const T* srow = src + y * ow;
      for (std::size_t xo = 0; xo < ow; ++xo) drow[xo / factor] += srow[xo];
    }
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: N/H/W mismatch between " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t n_batch = a.dim(0), plane = a.dim(2) * a.dim(3);
  const std::size_t ca = a.dim(1), cb = b.dim(1);
  Tensor<T> out({n_batch, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    T* dst = out.raw() + n * (ca + cb) * plane;
    std::copy_n(a.raw() + n * ca * plane, ca * plane, dst);
    std::copy_n(b.raw() + n * cb * plane, cb * plane, dst + ca * plane);
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  require_rank4(x.shape(), "slice_channels");
  if (begin > end || end > x.dim(1)) {
    throw ShapeError("slice_channels [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  const std::size_t n_batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t width = end - begin;
  Tensor<T> out({n_batch, width, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < n_batch; ++n) {
    std::copy_n(x.raw() + (n * c + begin) * plane, width * plane, out.raw() + n * width * plane);
  }
  return out;
}

#define RUPP_INSTANTIATE_OPS(T)                                                                                   \
  template Tensor<T> map_unary(UnaryOp, const Tensor<T>&);                                                        \
  template Tensor<T> broadcast_binary(BinaryOp, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> reduce(ReduceOp, const Tensor<T>&, const std::optional<std::vector<std::size_t>>&, bool);    \
  template Tensor<T> conv2d_naive(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvSpec&);         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvSpec&);               \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvSpec&,    \
                                        bool, bool, bool);                                                        \
  template PoolResult<T> maxpool2d(const Tensor<T>&);                                                             \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);         \
  template Tensor<T> upsample2d(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> upsample2d_backward(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t);                                  \
  template void detail::im2col(const T*, std::size_t, std::size_t, std::size_t, const ConvSpec&, std::size_t,     \
                               std::size_t, T*);                                                                  \
  template void detail::col2im(const T*, std::size_t, std::size_t, std::size_t, const ConvSpec&, std::size_t,     \
                               std::size_t, T*);

RUPP_INSTANTIATE_OPS(float)
RUPP_INSTANTIATE_OPS(double)

#undef RUPP_INSTANTIATE_OPS

}  // namespace rupp
