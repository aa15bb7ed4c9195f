#include "rupp/losses.hpp"

#include <algorithm>

#include "rupp/error.hpp"

namespace rupp {

void LossConfig::validate() const {
  if (!(smooth_eps > 0.0)) throw ConfigError("loss.smooth_eps must be > 0");
  if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0)) {
    throw ConfigError("loss.binarize_threshold must lie in (0, 1)");
  }
}

template <typename T>
bool is_binary(const Tensor<T>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](T v) { return v == T(0) || v == T(1); });
}

template <typename T>
Variable<T> jaccard_loss(const Variable<T>& pred, const Tensor<T>& target, const LossConfig& cfg) {
  cfg.validate();
  const Tensor<T>& p = pred.value();
  if (p.shape() != target.shape()) {
    throw ShapeError("jaccard_loss: pred " + shape_str(p.shape()) + " vs target " + shape_str(target.shape()));
  }
  if (!is_binary(target)) throw ValidationError("jaccard_loss: target must contain only 0 and 1");
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (p[i] < T(0) || p[i] > T(1)) {
      throw ValidationError("jaccard_loss: prediction " + std::to_string(p[i]) + " at index " + std::to_string(i) +
                            " is not a probability");
    }
  }

  const std::size_t groups = cfg.per_sample && p.rank() >= 2 ? p.dim(0) : 1;
  const std::size_t group_size = groups ? p.numel() / groups : 0;
  const double eps = cfg.smooth_eps;

  // Per group: intersection and union, accumulated in double.
  std::vector<double> inter(groups, 0.0), uni(groups, 0.0);
  double loss = 0.0;
  for (std::size_t g = 0; g < groups; ++g) {
    double i_sum = 0.0, p_sum = 0.0, t_sum = 0.0;
    for (std::size_t k = g * group_size; k < (g + 1) * group_size; ++k) {
      const double pv = static_cast<double>(p[k]);
      const double tv = static_cast<double>(target[k]);
      i_sum += pv * tv;
      p_sum += pv;
      t_sum += tv;
    }
    inter[g] = i_sum;
    uni[g] = p_sum + t_sum - i_sum;
    loss += 1.0 - (i_sum + eps) / (uni[g] + eps);
  }
  loss /= static_cast<double>(groups);

  Tape<T>* tape = pred.tape();
  if (!tape) throw UsageError("jaccard_loss: unbound prediction variable");
  return tape->record(
      "jaccard_loss", Tensor<T>::scalar(static_cast<T>(loss)), {pred},
      [target, inter, uni, groups, group_size, eps](const Tensor<T>& go, const Tensor<T>&,
                                                   std::span<Tensor<T>* const> g) {
        // dL/dp = -[t (U + eps) - (I + eps)(1 - t)] / (U + eps)^2, per group, / groups.
        const double scale = static_cast<double>(go[0]) / static_cast<double>(groups);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          const double u = uni[grp] + eps;
          const double in = inter[grp] + eps;
          const double denom = u * u;
          for (std::size_t k = grp * group_size; k < (grp + 1) * group_size; ++k) {
            const double tv = static_cast<double>(target[k]);
            (*g[0])[k] += static_cast<T>(-scale * (tv * u - in * (1.0 - tv)) / denom);
          }
        }
      });
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& prob, double threshold) {
  Tensor<T> out(prob.shape());
  for (std::size_t i = 0; i < prob.numel(); ++i) out[i] = static_cast<double>(prob[i]) > threshold ? T(1) : T(0);
  return out;
}

namespace {

struct Counts {
  std::size_t both = 0, pred = 0, target = 0, agree = 0, total = 0;
};

template <typename T>
Counts count(const Tensor<T>& a, const Tensor<T>& b, const char* metric) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(metric) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (!is_binary(a) || !is_binary(b)) throw ValidationError(std::string(metric) + ": inputs must be binary masks");
  Counts c;
  c.total = a.numel();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const bool pa = a[i] == T(1), pb = b[i] == T(1);
    c.both += pa && pb;
    c.pred += pa;
    c.target += pb;
    c.agree += pa == pb;
  }
  return c;
}

}  // namespace

template <typename T>
double jaccard_index(const Tensor<T>& pred_bin, const Tensor<T>& target) {
  const Counts c = count(pred_bin, target, "jaccard_index");
  const std::size_t uni = c.pred + c.target - c.both;
  return uni == 0 ? 1.0 : static_cast<double>(c.both) / static_cast<double>(uni);
}

template <typename T>
double dice_coefficient(const Tensor<T>& pred_bin, const Tensor<T>& target) {
  const Counts c = count(pred_bin, target, "dice_coefficient");
  const std::size_t denom = c.pred + c.target;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.both) / static_cast<double>(denom);
}

template <typename T>
double pixel_accuracy(const Tensor<T>& pred_bin, const Tensor<T>& target) {
  const Counts c = count(pred_bin, target, "pixel_accuracy");
  return c.total == 0 ? 1.0 : static_cast<double>(c.agree) / static_cast<double>(c.total);
}

#define RUPP_INSTANTIATE_LOSSES(T)                                                           \
  template Variable<T> jaccard_loss(const Variable<T>&, const Tensor<T>&, const LossConfig&); \
  template Tensor<T> binarize(const Tensor<T>&, double);                                     \
  template double jaccard_index(const Tensor<T>&, const Tensor<T>&);                         \
  template double dice_coefficient(const Tensor<T>&, const Tensor<T>&);                      \
  template double pixel_accuracy(const Tensor<T>&, const Tensor<T>&);                        \
  template bool is_binary(const Tensor<T>&);

RUPP_INSTANTIATE_LOSSES(float)
RUPP_INSTANTIATE_LOSSES(double)

#undef RUPP_INSTANTIATE_LOSSES

}  // namespace rupp
