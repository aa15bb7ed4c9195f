#include "rupp/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "rupp/error.hpp"

namespace rupp {

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "nadam";
}

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "nadam") return OptimizerKind::nadam;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or nadam)");
}

template <typename T>
void OptimizerState<T>::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(eps >= 0.0)) throw ConfigError("optimizer eps must be >= 0");
}

StepCoefficients step_coefficients(double lr, double beta1, double beta2, double eps, std::uint64_t t) {
  const double td = static_cast<double>(t);
  return StepCoefficients{lr,
                          beta1,
                          beta2,
                          eps,
                          1.0 - std::pow(beta1, td),
                          1.0 - std::pow(beta2, td),
                          1.0 - std::pow(beta1, td + 1.0)};
}

double adam_update_scalar(double theta, double g, double& m, double& v, const StepCoefficients& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g * g;
  const double m_hat = m / c.bias1;
  const double v_hat = v / c.bias2;
  return theta - c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
}

double nadam_update_scalar(double theta, double g, double& m, double& v, const StepCoefficients& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g * g;
  const double m_bar = c.beta1 * m / c.bias1_next + (1.0 - c.beta1) * g / c.bias1;
  const double v_hat = v / c.bias2;
  return theta - c.lr * m_bar / (std::sqrt(v_hat) + c.eps);
}

namespace {

template <typename T>
void check_ready(const Parameter<T>& param, Moments<T>& moments, std::uint64_t t) {
  if (param.grad.shape() != param.value.shape()) throw UsageError("optimizer step on a parameter without a gradient");
  if (t == 0) throw UsageError("optimizer step counter must be >= 1 when applying an update");
  if (moments.m.shape() != param.value.shape()) {
    moments.m = Tensor<T>::zeros_like(param.value);
    moments.v = Tensor<T>::zeros_like(param.value);
  }
}

template <typename T>
void apply(Parameter<T>& param, Moments<T>& moments, const OptimizerState<T>& state,
           double (*rule)(double, double, double&, double&, const StepCoefficients&)) {
  check_ready(param, moments, state.t);
  const StepCoefficients c = step_coefficients(state.lr, state.beta1, state.beta2, state.eps, state.t);
  for (std::size_t i = 0; i < param.value.numel(); ++i) {
    double m = static_cast<double>(moments.m[i]);
    double v = static_cast<double>(moments.v[i]);
    param.value[i] = static_cast<T>(rule(static_cast<double>(param.value[i]), static_cast<double>(param.grad[i]), m, v, c));
    moments.m[i] = static_cast<T>(m);
    moments.v[i] = static_cast<T>(v);
  }
}

}  // namespace

template <typename T>
void adam_step(Parameter<T>& param, Moments<T>& moments, const OptimizerState<T>& state) {
  apply(param, moments, state, &adam_update_scalar);
}

template <typename T>
void nadam_step(Parameter<T>& param, Moments<T>& moments, const OptimizerState<T>& state) {
  apply(param, moments, state, &nadam_update_scalar);
}

template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<const std::pair<std::string, Parameter<T>*>> params) {
  state.validate();
  for (const auto& [name, p] : params) {
    if (p->requires_grad && p->grad.shape() != p->value.shape()) {
      throw UsageError("optimizer step: parameter '" + name + "' has no gradient");
    }
  }
  ++state.t;
  for (const auto& [name, p] : params) {
    if (!p->requires_grad) continue;
    auto& mom = state.moments[name];
    if (state.kind == OptimizerKind::adam) {
      adam_step(*p, mom, state);
    } else {
      nadam_step(*p, mom, state);
    }
  }
}

void LRSchedule::validate() const {
  if (!(initial_lr > 0.0)) throw ConfigError("initial learning rate must be > 0");
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw ConfigError("schedule.decay_factor must lie in (0, 1)");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("schedule.plateau_factor must lie in (0, 1)");
  if (!(min_lr > 0.0)) throw ConfigError("schedule.min_lr must be > 0");
  if (cycle_length_epochs == 0) throw ConfigError("schedule.cycle_length_epochs must be >= 1");
  if (plateau_patience == 0) throw ConfigError("schedule.plateau_patience must be >= 1");
}

double schedule_lr(const LRSchedule& schedule, std::size_t epoch) {
  const auto cycles = static_cast<double>(epoch / std::max<std::size_t>(schedule.cycle_length_epochs, 1));
  return std::max(schedule.min_lr, schedule.initial_lr * std::pow(schedule.decay_factor, cycles));
}

double reduce_on_plateau(const LRSchedule& schedule, std::span<const double> val_loss_history) {
  if (val_loss_history.empty()) throw UsageError("reduce_on_plateau needs a non-empty history");
  double best = val_loss_history.front();
  std::size_t wait = 0;
  bool fired_last = false;
  for (std::size_t i = 1; i < val_loss_history.size(); ++i) {
    fired_last = false;
    if (best - val_loss_history[i] >= schedule.min_delta) {
      best = val_loss_history[i];
      wait = 0;
    } else if (++wait >= schedule.plateau_patience) {
      fired_last = true;
      wait = 0;
    }
  }
  return fired_last ? schedule.plateau_factor : 1.0;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;

#define RUPP_INSTANTIATE_OPT(T)                                                                        \
  template void adam_step(Parameter<T>&, Moments<T>&, const OptimizerState<T>&);                       \
  template void nadam_step(Parameter<T>&, Moments<T>&, const OptimizerState<T>&);                      \
  template void optimizer_step(OptimizerState<T>&, std::span<const std::pair<std::string, Parameter<T>*>>);

RUPP_INSTANTIATE_OPT(float)
RUPP_INSTANTIATE_OPT(double)

#undef RUPP_INSTANTIATE_OPT

}  // namespace rupp
