#pragma once

#include <atomic>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rupp/tensor.hpp"

namespace rupp {

/// Trainable tensor that outlives individual tapes. Gradients from every tape
/// that binds it accumulate into `grad` until zero_grad().
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(Tensor<T>::zeros_like(value)) {}

  void zero_grad() { grad = Tensor<T>::zeros_like(value); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
template <typename T>
class Variable {
 public:
  Variable() = default;

  const Tensor<T>& value() const;
  // Gradient after Tape::backward; zeros if no gradient reached this node.
  Tensor<T> grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t node_id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Variable(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Forward values are computed eagerly by the
/// op functions in namespace ad; each op registers a closure that maps the
/// output gradient onto its inputs. A tape is single-use and single-threaded.
template <typename T>
class Tape {
 public:
  // input_grads[i] is null when input i does not need a gradient; otherwise the
  // closure must accumulate (+=) into it. `out` is the node's forward value.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, const Tensor<T>& out,
                                        std::span<Tensor<T>* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Variable<T> constant(Tensor<T> value);
  Variable<T> leaf(Tensor<T> value, bool requires_grad = true);
  // Leaf bound to `p`; backward() adds this node's gradient into p.grad.
  Variable<T> parameter(Parameter<T>& p);

  Variable<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Variable<T>> inputs,
                     BackwardFn backward);
  Variable<T> record(std::string_view op, Tensor<T> value, const std::vector<Variable<T>>& inputs,
                     BackwardFn backward);

  // Root must hold exactly one element. May be called once per tape.
  void backward(const Variable<T>& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  friend class Variable<T>;

  struct Node {
    std::string op;
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  void check_owned(const Variable<T>& v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

namespace ad {

// Test hook: when set, conv2d's weight gradient is deliberately perturbed so the
// verification suite can prove it detects a broken backward pass.
inline std::atomic<bool>& conv_backward_fault() {
  static std::atomic<bool> flag{false};
  return flag;
}

template <typename T> Variable<T> relu(const Variable<T>& x);
template <typename T> Variable<T> sigmoid(const Variable<T>& x);
template <typename T> Variable<T> neg(const Variable<T>& x);
template <typename T> Variable<T> exp(const Variable<T>& x);
template <typename T> Variable<T> log(const Variable<T>& x);
template <typename T> Variable<T> square(const Variable<T>& x);

// Same shapes, or b rank-1 broadcast over the channel axis of rank-4 a.
template <typename T> Variable<T> add(const Variable<T>& a, const Variable<T>& b);
template <typename T> Variable<T> sub(const Variable<T>& a, const Variable<T>& b);
template <typename T> Variable<T> mul(const Variable<T>& a, const Variable<T>& b);
template <typename T> Variable<T> div(const Variable<T>& a, const Variable<T>& b);

template <typename T> Variable<T> add_scalar(const Variable<T>& x, T c);
template <typename T> Variable<T> mul_scalar(const Variable<T>& x, T c);

// Full reductions to shape {1}.
template <typename T> Variable<T> sum(const Variable<T>& x);
template <typename T> Variable<T> mean(const Variable<T>& x);

template <typename T>
Variable<T> conv2d(const Variable<T>& x, const Variable<T>& weight, const Variable<T>* bias, const ConvSpec& spec);

template <typename T> Variable<T> maxpool2d(const Variable<T>& x);
template <typename T> Variable<T> upsample2d(const Variable<T>& x, std::size_t factor = 2);
template <typename T> Variable<T> concat_channels(const Variable<T>& a, const Variable<T>& b);

// x (N,C,H,W) scaled per pixel by map (N,1,H,W).
template <typename T> Variable<T> scale_by_map(const Variable<T>& x, const Variable<T>& map);

template <typename T>
struct BatchNormOutput {
  Variable<T> output;
  Tensor<T> batch_mean;  // (C)
  Tensor<T> batch_var;   // (C), population variance
};

// Normalizes with the batch statistics; backward includes the statistics' dependence on x.
template <typename T>
BatchNormOutput<T> batch_norm_train(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta, T eps);

// Normalizes with fixed statistics.
template <typename T>
Variable<T> batch_norm_eval(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta,
                            const Tensor<T>& mean, const Tensor<T>& var, T eps);

}  // namespace ad

extern template class Variable<float>;
extern template class Variable<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace rupp
