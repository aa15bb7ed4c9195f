#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rupp {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 2024;
  // Random instances per layer grad check.
  std::size_t layer_seeds = 20;
  std::size_t conv_oracle_configs = 200;
  std::size_t optimizer_steps = 100;
  std::size_t identity_pairs = 1000;
  // Perturbs conv2d's weight gradient for the duration of the run.
  bool inject_conv_backward_fault = false;
};

struct VerifyReport {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool all_passed() const;
};

/// f64 gradient checks for every layer type and a reduced full model, plus the
/// im2col/naive conv oracle, the optimizer scalar oracle and the loss identities.
VerifyReport run_verification(const VerifyOptions& options = {});

// "PASS  name  max_err=... tol=...  detail"
std::string format_check(const CheckResult& check);

// Individual checks, exposed for tests.
CheckResult check_conv_oracle(std::uint64_t seed, std::size_t configs);
CheckResult check_optimizer_oracle(std::uint64_t seed, std::size_t steps);
CheckResult check_full_model_gradient(std::uint64_t seed);

}  // namespace rupp
