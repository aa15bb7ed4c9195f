#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rupp/autodiff.hpp"

namespace rupp {

enum class OptimizerKind { adam, nadam };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& s);

template <typename T>
struct Moments {
  Tensor<T> m;
  Tensor<T> v;
};

/// Adam/NAdam state. `t` counts completed steps; moments are keyed by parameter
/// name and created lazily (zeros) on first use.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::nadam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::map<std::string, Moments<T>> moments;

  void validate() const;
};

/// Step-invariant coefficients for one update at step t (t >= 1).
struct StepCoefficients {
  double lr, beta1, beta2, eps;
  double bias1;       // 1 - beta1^t
  double bias2;       // 1 - beta2^t
  double bias1_next;  // 1 - beta1^(t+1), NAdam only
};

StepCoefficients step_coefficients(double lr, double beta1, double beta2, double eps, std::uint64_t t);

// One element of the update rule; m and v are advanced in place, the new
// parameter value is returned. Tensor steps apply exactly this per element.
double adam_update_scalar(double theta, double g, double& m, double& v, const StepCoefficients& c);
double nadam_update_scalar(double theta, double g, double& m, double& v, const StepCoefficients& c);

// Single-parameter updates using state.t as the current step (already incremented).
template <typename T>
void adam_step(Parameter<T>& param, Moments<T>& moments, const OptimizerState<T>& state);
template <typename T>
void nadam_step(Parameter<T>& param, Moments<T>& moments, const OptimizerState<T>& state);

/// Advances t by one and updates every listed parameter with the state's rule.
/// Throws UsageError if a gradient is missing.
template <typename T>
void optimizer_step(OptimizerState<T>& state, std::span<const std::pair<std::string, Parameter<T>*>> params);

struct LRSchedule {
  double initial_lr = 1e-3;
  double decay_factor = 0.5;
  std::size_t cycle_length_epochs = 6;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.1;
  double min_lr = 1e-6;
  // Minimum decrease of the best validation loss that counts as improvement.
  double min_delta = 1e-4;

  void validate() const;
};

// initial_lr * decay_factor^floor(epoch / cycle_length), floored at min_lr.
double schedule_lr(const LRSchedule& schedule, std::size_t epoch);

/// Replays the plateau counter over `val_loss_history` and returns the
/// multiplier to apply after its last entry: plateau_factor if a reduction fires
/// there, else 1. The counter resets after each reduction.
double reduce_on_plateau(const LRSchedule& schedule, std::span<const double> val_loss_history);

extern template struct OptimizerState<float>;
extern template struct OptimizerState<double>;

}  // namespace rupp
