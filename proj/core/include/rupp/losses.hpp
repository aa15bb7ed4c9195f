#pragma once

#include "rupp/autodiff.hpp"

namespace rupp {

struct LossConfig {
  double smooth_eps = 1e-7;
  double binarize_threshold = 0.5;
  // false: one global ratio over the whole batch; true: mean of per-sample losses.
  bool per_sample = false;

  void validate() const;
};

/// Soft Jaccard loss 1 - (sum(p*t) + eps) / (sum(p) + sum(t) - sum(p*t) + eps).
/// `target` must be exactly binary. With per_sample, rank >= 2 inputs are split
/// along axis 0 and the per-sample losses are averaged.
template <typename T>
Variable<T> jaccard_loss(const Variable<T>& pred, const Tensor<T>& target, const LossConfig& cfg = {});

// Strict `> threshold`, so a probability of exactly 0.5 is background.
template <typename T>
Tensor<T> binarize(const Tensor<T>& prob, double threshold = 0.5);

// Hard-mask metrics; both operands must be binary and equal-shaped.
// Empty/empty counts as a perfect score for IoU and Dice.
template <typename T>
double jaccard_index(const Tensor<T>& pred_bin, const Tensor<T>& target);
template <typename T>
double dice_coefficient(const Tensor<T>& pred_bin, const Tensor<T>& target);
template <typename T>
double pixel_accuracy(const Tensor<T>& pred_bin, const Tensor<T>& target);

template <typename T>
bool is_binary(const Tensor<T>& t);

}  // namespace rupp
