#include "rupp/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "rupp/error.hpp"

namespace rupp {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw UsageError("grad_check eps must lie in [1e-6, 1e-3]");
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double grad_check(const ScalarOfInput& f, const Tensor<double>& x, double eps) {
  check_eps(eps);
  Tensor<double> analytic;
  {
    Tape<double> tape;
    auto leaf = tape.leaf(x, true);
    auto out = f(tape, leaf);
    tape.backward(out);
    analytic = leaf.grad();
  }
  auto eval = [&](const Tensor<double>& point) {
    Tape<double> tape;
    auto leaf = tape.leaf(point, true);
    return f(tape, leaf).value()[0];
  };
  double worst = 0.0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval(probe);
    probe[i] = x[i] - eps;
    const double down = eval(probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_parameter(const ScalarBuilder& f, Parameter<double>& param, double eps, std::size_t max_coords) {
  check_eps(eps);
  param.zero_grad();
  {
    Tape<double> tape;
    auto out = f(tape);
    tape.backward(out);
  }
  const Tensor<double> analytic = param.grad;
  const Tensor<double> original = param.value;
  auto eval = [&]() {
    Tape<double> tape;
    return f(tape).value()[0];
  };
  const std::size_t n = original.numel();
  const std::size_t probes = (max_coords == 0 || max_coords > n) ? n : max_coords;
  double worst = 0.0;
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t i = probes == n ? k : k * n / probes;
    param.value[i] = original[i] + eps;
    const double up = eval();
    param.value[i] = original[i] - eps;
    const double down = eval();
    param.value[i] = original[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  param.zero_grad();
  return worst;
}

}  // namespace rupp
