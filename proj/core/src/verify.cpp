#include "rupp/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "rupp/grad_check.hpp"
#include "rupp/layers.hpp"
#include "rupp/losses.hpp"
#include "rupp/model.hpp"
#include "rupp/ops.hpp"
#include "rupp/optimizer.hpp"
#include "rupp/random.hpp"

namespace rupp {

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string format_check(const CheckResult& c) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s  %-28s max_err=%.3e tol=%.0e", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                c.max_error, c.tolerance);
  std::string out = buf;
  if (!c.detail.empty()) out += "  " + c.detail;
  return out;
}

namespace {

using D = double;
using LayerFn = std::function<Variable<D>(Tape<D>&, const Variable<D>&)>;

Tensor<D> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

void randomize(NamedRefs<D>& refs, Rng& rng) {
  for (auto& [name, p] : refs.parameters) {
    const bool is_gamma = name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
    for (auto& v : p->value.data()) v = is_gamma ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
    p->zero_grad();
  }
}

// sum(y * R) with R fixed by `seed`, so no output direction is privileged.
Variable<D> project(Tape<D>& tape, const Variable<D>& y, std::uint64_t seed) {
  Rng rng(seed);
  auto r = tape.constant(random_tensor(y.shape(), rng));
  return ad::sum(ad::mul(y, r));
}

// Worst relative error over the input and every parameter of a layer.
// Roundoff in the difference is about 1e-16 * |f| / eps.
double layer_error(const LayerFn& layer, const Tensor<D>& x, NamedRefs<D>& refs, std::uint64_t seed, double eps) {
  double worst = grad_check([&](Tape<D>& tape, const Variable<D>& v) { return project(tape, layer(tape, v), seed); },
                            x, eps);
  for (auto& [name, p] : refs.parameters) {
    auto f = [&](Tape<D>& tape) { return project(tape, layer(tape, tape.constant(x)), seed); };
    worst = std::max(worst, grad_check_parameter(f, *p, eps));
  }
  return worst;
}

struct LayerCase {
  std::string name;
  double tolerance;
  std::function<double(std::uint64_t)> run;
};

CheckResult run_case(const LayerCase& c, std::uint64_t base_seed, std::size_t seeds) {
  CheckResult r{c.name, 0.0, c.tolerance, false, {}};
  for (std::size_t s = 0; s < seeds; ++s) {
    r.max_error = std::max(r.max_error, c.run(derive_seed(base_seed, hash_name(c.name) + s)));
  }
  r.passed = std::isfinite(r.max_error) && r.max_error < c.tolerance;
  r.detail = std::to_string(seeds) + " seeds";
  return r;
}

double conv_case(std::uint64_t seed, std::size_t dilation, std::size_t stride, double eps) {
  Rng rng(seed);
  Conv2DLayer<D> conv(2, 3, ConvSpec{3, 3, stride, dilation, dilation}, true);
  NamedRefs<D> refs;
  conv.collect("conv", refs);
  randomize(refs, rng);
  const Tensor<D> x = random_tensor({2, 2, 7, 7}, rng);
  return layer_error([&](Tape<D>& t, const Variable<D>& v) { return conv.forward(t, v); }, x, refs, seed, eps);
}

double batchnorm_case(std::uint64_t seed) {
  Rng rng(seed);
  BatchNorm2D<D> bn(3);
  NamedRefs<D> refs;
  bn.collect("bn", refs);
  randomize(refs, rng);
  const Tensor<D> x = random_tensor({2, 3, 3, 3}, rng);
  return layer_error([&](Tape<D>& t, const Variable<D>& v) { return bn.forward(t, v, Mode::train); }, x, refs, seed,
                     1e-6);
}

// Values spaced at least 1e-3 apart so a perturbation never flips an argmax.
Tensor<D> distinct_values(const Shape& shape, Rng& rng) {
  Tensor<D> t(shape);
  const auto order = permutation(t.numel(), rng.next());
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = -1.0 + 2.0 * static_cast<double>(order[i]) / t.numel();
  return t;
}

double maxpool_case(std::uint64_t seed) {
  Rng rng(seed);
  NamedRefs<D> none;
  return layer_error([](Tape<D>&, const Variable<D>& v) { return ad::maxpool2d(v); },
                     distinct_values({2, 2, 4, 6}, rng), none, seed, 1e-6);
}

double upsample_case(std::uint64_t seed) {
  Rng rng(seed);
  NamedRefs<D> none;
  return layer_error([](Tape<D>&, const Variable<D>& v) { return ad::upsample2d(v, 2); },
                     random_tensor({1, 2, 3, 3}, rng), none, seed, 1e-6);
}

double concat_case(std::uint64_t seed) {
  Rng rng(seed);
  const Tensor<D> other = random_tensor({2, 3, 3, 3}, rng);
  NamedRefs<D> none;
  return layer_error(
      [&](Tape<D>& t, const Variable<D>& v) { return ad::concat_channels(v, ad::square(t.leaf(other))); },
      random_tensor({2, 2, 3, 3}, rng), none, seed, 1e-6);
}

double resblock_case(std::uint64_t seed, std::size_t in, std::size_t out) {
  Rng rng(seed);
  ResBlock<D> block(in, out);
  NamedRefs<D> refs;
  block.collect("res", refs);
  randomize(refs, rng);
  const Tensor<D> x = random_tensor({2, in, 4, 4}, rng);
  return layer_error([&](Tape<D>& t, const Variable<D>& v) { return block.forward(t, v, Mode::train); }, x, refs,
                     seed, 1e-6);
}

double aspp_case(std::uint64_t seed) {
  Rng rng(seed);
  ASPPModule<D> aspp(2, 2, {1, 2, 4});
  NamedRefs<D> refs;
  aspp.collect("aspp", refs);
  randomize(refs, rng);
  const Tensor<D> x = random_tensor({1, 2, 5, 5}, rng);
  return layer_error([&](Tape<D>& t, const Variable<D>& v) { return aspp.forward(t, v); }, x, refs, seed, 1e-6);
}

double attention_case(std::uint64_t seed, double eps) {
  Rng rng(seed);
  AttentionGate<D> gate(3, 2, 2);
  NamedRefs<D> refs;
  gate.collect("gate", refs);
  randomize(refs, rng);
  const Tensor<D> skip = random_tensor({2, 3, 4, 4}, rng);
  const Tensor<D> g = random_tensor({2, 2, 4, 4}, rng);
  // Gradient through both the skip and the gating input.
  double worst = layer_error(
      [&](Tape<D>& t, const Variable<D>& v) { return gate.forward(t, v, t.constant(g)); }, skip, refs, seed, eps);
  worst = std::max(worst, layer_error([&](Tape<D>& t, const Variable<D>& v) { return gate.forward(t, t.constant(skip), v); },
                                      g, refs, seed, eps));
  return worst;
}

double jaccard_case(std::uint64_t seed, bool per_sample) {
  Rng rng(seed);
  const Tensor<D> pred = random_tensor({2, 1, 4, 4}, rng, 0.1, 0.9);
  Tensor<D> target({2, 1, 4, 4});
  for (auto& v : target.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  LossConfig cfg;
  cfg.per_sample = per_sample;
  return grad_check([&](Tape<D>&, const Variable<D>& p) { return jaccard_loss(p, target, cfg); }, pred, 1e-6);
}

// Independent transcription of the update equations, one scalar at a time.
struct ScalarReference {
  double m = 0.0, v = 0.0;
  double step(double theta, double g, bool nesterov, double lr, double b1, double b2, double eps, int t) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double v_hat = v / (1.0 - std::pow(b2, t));
    double num;
    if (nesterov) {
      num = b1 * m / (1.0 - std::pow(b1, t + 1)) + (1.0 - b1) * g / (1.0 - std::pow(b1, t));
    } else {
      num = m / (1.0 - std::pow(b1, t));
    }
    return theta - lr * num / (std::sqrt(v_hat) + eps);
  }
};

}  // namespace

CheckResult check_conv_oracle(std::uint64_t seed, std::size_t configs) {
  CheckResult r{"conv2d im2col vs naive", 0.0, 1e-5, false, {}};
  Rng rng(seed);
  for (std::size_t i = 0; i < configs; ++i) {
    ConvSpec spec{1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(2), rng.below(3), 1 + rng.below(3)};
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(4), cout = 1 + rng.below(4);
    const std::size_t min_h = spec.dilation * (spec.kernel_h - 1) + 1, min_w = spec.dilation * (spec.kernel_w - 1) + 1;
    const std::size_t h = min_h + rng.below(8), w = min_w + rng.below(8);
    Tensor<float> x({n, cin, h, w}), wt({cout, cin, spec.kernel_h, spec.kernel_w}), b({cout});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : wt.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-1, 1));
    const bool with_bias = rng.below(2) == 1;
    const auto a = conv2d_naive(x, wt, with_bias ? &b : nullptr, spec);
    const auto c = conv2d(x, wt, with_bias ? &b : nullptr, spec);
    if (a.shape() != c.shape()) {
      r.max_error = INFINITY;
      r.detail = "shape mismatch";
      return r;
    }
    for (std::size_t k = 0; k < a.numel(); ++k) {
      r.max_error = std::max(r.max_error, static_cast<double>(std::abs(a[k] - c[k])));
    }
  }
  r.passed = r.max_error < r.tolerance;
  r.detail = std::to_string(configs) + " configs, abs diff";
  return r;
}

CheckResult check_optimizer_oracle(std::uint64_t seed, std::size_t steps) {
  CheckResult r{"adam/nadam scalar oracle", 0.0, 1e-12, false, {}};
  Rng rng(seed);
  bool beta1_zero_exact = true;
  for (int kind = 0; kind < 2; ++kind) {
    OptimizerState<D> state;
    state.kind = kind == 0 ? OptimizerKind::adam : OptimizerKind::nadam;
    state.lr = 0.01;
    Parameter<D> p(random_tensor({3, 4}, rng));
    std::vector<ScalarReference> ref(p.value.numel());
    std::vector<double> theta(p.value.data().begin(), p.value.data().end());
    for (std::size_t s = 0; s < steps; ++s) {
      p.grad = random_tensor({3, 4}, rng);
      std::vector<std::pair<std::string, Parameter<D>*>> params{{"p", &p}};
      optimizer_step(state, std::span<const std::pair<std::string, Parameter<D>*>>(params));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] = ref[i].step(theta[i], p.grad[i], kind == 1, state.lr, state.beta1, state.beta2, state.eps,
                               static_cast<int>(state.t));
        r.max_error = std::max(r.max_error, std::abs(theta[i] - p.value[i]));
      }
    }
  }
  // beta1 = 0: the Nesterov term vanishes and both rules agree bit for bit.
  OptimizerState<D> a, n;
  a.kind = OptimizerKind::adam;
  n.kind = OptimizerKind::nadam;
  a.beta1 = n.beta1 = 0.0;
  Parameter<D> pa(random_tensor({5}, rng));
  Parameter<D> pn = pa;
  for (std::size_t s = 0; s < steps; ++s) {
    pa.grad = pn.grad = random_tensor({5}, rng);
    std::vector<std::pair<std::string, Parameter<D>*>> la{{"p", &pa}}, ln{{"p", &pn}};
    optimizer_step(a, std::span<const std::pair<std::string, Parameter<D>*>>(la));
    optimizer_step(n, std::span<const std::pair<std::string, Parameter<D>*>>(ln));
    if (pa.value != pn.value) beta1_zero_exact = false;
  }
  r.passed = r.max_error < r.tolerance && beta1_zero_exact;
  r.detail = std::to_string(steps) + " steps; beta1=0 adam==nadam: " + (beta1_zero_exact ? "yes" : "no");
  return r;
}

CheckResult check_full_model_gradient(std::uint64_t seed) {
  CheckResult r{"full model (base 2, 16x16)", 0.0, 1e-3, false, {}};
  ResUnetPPConfig cfg;
  cfg.base_channels = 2;
  cfg.depth = 4;
  cfg.input_height = cfg.input_width = 16;
  cfg.seed = seed;
  ResUnetPP<D> model(cfg);
  Rng rng(derive_seed(seed, 1));
  const Tensor<D> x = random_tensor({1, 3, 16, 16}, rng);
  Tensor<D> target({1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t xx = 0; xx < 16; ++xx) {
      target[y * 16 + xx] = (y >= 4 && y < 11 && xx >= 5 && xx < 12) ? 1.0 : 0.0;
    }
  }
  auto loss = [&](Tape<D>& tape, const Variable<D>& in) {
    return jaccard_loss(model.forward(tape, in, Mode::train), target);
  };
  r.max_error = grad_check(loss, x, 1e-6);
  auto refs = model.named();
  std::size_t probed = 0;
  for (auto& [name, p] : refs.parameters) {
    auto f = [&](Tape<D>& tape) { return loss(tape, tape.constant(x)); };
    r.max_error = std::max(r.max_error, grad_check_parameter(f, *p, 1e-6));
    ++probed;
  }
  r.passed = std::isfinite(r.max_error) && r.max_error < r.tolerance;
  r.detail = "input + " + std::to_string(probed) + " parameter tensors";
  return r;
}

VerifyReport run_verification(const VerifyOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  struct FaultGuard {
    bool previous;
    explicit FaultGuard(bool on) : previous(ad::conv_backward_fault().exchange(on)) {}
    ~FaultGuard() { ad::conv_backward_fault().store(previous); }
  } guard(opt.inject_conv_backward_fault);

  const std::vector<LayerCase> cases{
      {"conv2d dilation 1", 1e-4, [](std::uint64_t s) { return conv_case(s, 1, 1, 1e-4); }},
      {"conv2d dilation 2", 1e-4, [](std::uint64_t s) { return conv_case(s, 2, 1, 1e-4); }},
      {"conv2d dilation 4", 1e-4, [](std::uint64_t s) { return conv_case(s, 4, 1, 1e-4); }},
      {"conv2d stride 2", 1e-4, [](std::uint64_t s) { return conv_case(s, 1, 2, 1e-4); }},
      {"batchnorm train", 1e-4, batchnorm_case},
      {"maxpool 2x2", 1e-4, maxpool_case},
      {"upsample x2", 1e-4, upsample_case},
      {"concat channels", 1e-4, concat_case},
      {"resblock identity", 1e-4, [](std::uint64_t s) { return resblock_case(s, 2, 2); }},
      {"resblock projection", 1e-4, [](std::uint64_t s) { return resblock_case(s, 2, 3); }},
      {"aspp", 1e-4, aspp_case},
      {"attention gate", 1e-4, [](std::uint64_t s) { return attention_case(s, 1e-5); }},
      {"jaccard loss", 1e-4, [](std::uint64_t s) { return jaccard_case(s, false); }},
      {"jaccard loss per-sample", 1e-4, [](std::uint64_t s) { return jaccard_case(s, true); }},
  };

  VerifyReport report;
  for (const auto& c : cases) report.checks.push_back(run_case(c, opt.seed, opt.layer_seeds));
  report.checks.push_back(check_full_model_gradient(opt.seed));
  report.checks.push_back(check_conv_oracle(opt.seed, opt.conv_oracle_configs));
  report.checks.push_back(check_optimizer_oracle(opt.seed, opt.optimizer_steps));

  {
    CheckResult r{"loss == 1 - soft iou", 0.0, 1e-12, false, {}};
    Rng rng(derive_seed(opt.seed, 7));
    LossConfig cfg;
    for (std::size_t i = 0; i < opt.identity_pairs; ++i) {
      const std::size_t n = 1 + rng.below(32);
      Tensor<D> p = random_tensor({n}, rng, 0.0, 1.0), t({n});
      for (auto& v : t.data()) v = rng.below(2) ? 1.0 : 0.0;
      double inter = 0, sp = 0, st = 0;
      for (std::size_t k = 0; k < n; ++k) {
        inter += p[k] * t[k];
        sp += p[k];
        st += t[k];
      }
      const double soft = (inter + cfg.smooth_eps) / (sp + st - inter + cfg.smooth_eps);
      Tape<D> tape;
      const double l = jaccard_loss(tape.constant(p), t, cfg).value()[0];
      r.max_error = std::max(r.max_error, std::abs(l - (1.0 - soft)));
    }
    r.passed = r.max_error < r.tolerance;
    r.detail = std::to_string(opt.identity_pairs) + " pairs";
    report.checks.push_back(r);
  }
  {
    CheckResult r{"dice == 2J/(1+J)", 0.0, 1e-12, false, {}};
    Rng rng(derive_seed(opt.seed, 8));
    for (std::size_t i = 0; i < opt.identity_pairs; ++i) {
      const std::size_t n = 1 + rng.below(32);
      Tensor<D> a({n}), b({n});
      for (auto& v : a.data()) v = rng.below(2) ? 1.0 : 0.0;
      for (auto& v : b.data()) v = rng.below(2) ? 1.0 : 0.0;
      const double j = jaccard_index(a, b);
      r.max_error = std::max(r.max_error, std::abs(dice_coefficient(a, b) - 2.0 * j / (1.0 + j)));
    }
    r.passed = r.max_error < r.tolerance;
    r.detail = std::to_string(opt.identity_pairs) + " pairs";
    report.checks.push_back(r);
  }

  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace rupp
