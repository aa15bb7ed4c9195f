// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../../tools/commands.hpp"
#include "rupp/checkpoint.hpp"
#include "rupp/data.hpp"
#include "rupp/losses.hpp"
#include "rupp/model.hpp"
#include "rupp/ops.hpp"
#include "rupp/optimizer.hpp"
#include "rupp/random.hpp"
#include "rupp/trainer.hpp"
#include "rupp/verify.hpp"

using namespace rupp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rupp_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome ac1_gradients() {
  const auto t0 = Clock::now();
  const VerifyReport report = run_verification();
  const double secs = since(t0);
  const std::set<std::string> oracles{"conv2d im2col vs naive", "adam/nadam scalar oracle", "loss == 1 - soft iou",
                                      "dice == 2J/(1+J)"};
  double worst_layer = 0.0, full = -1.0;
  bool ok = true;
  std::size_t layers = 0;
  for (const auto& c : report.checks) {
    if (oracles.count(c.name)) continue;
    const bool is_full = c.name.rfind("full model", 0) == 0;
    const double limit = is_full ? 1e-3 : 1e-4;
    ok = ok && c.passed && c.max_error < limit;
    if (is_full) {
      full = c.max_error;
    } else {
      worst_layer = std::max(worst_layer, c.max_error);
      ++layers;
    }
  }
  ok = ok && full >= 0.0 && layers >= 13 && secs < 120.0;
  return {ok, std::to_string(layers) + " layer checks, worst rel err " + num("%.2e", worst_layer) + "; full model " +
                  num("%.2e", full) + "; " + num("%.1f", secs) + " s"};
}

Outcome ac2_shapes() {
  ResUnetPP<float> model(ResUnetPPConfig{});
  Tape<float> tape;
  ForwardTrace trace;
  model.forward(tape, tape.constant(Tensor<float>({1, 3, 256, 256})), Mode::eval, &trace);
  const std::vector<Shape> want{{16, 256, 256}, {32, 128, 128}, {64, 64, 64}, {128, 32, 32}, {256, 16, 16}};
  const bool ok = trace.encoder == want && trace.pre_head == Shape{16, 256, 256} && trace.output == Shape{1, 256, 256};
  return {ok, "encoder " + shape_str(trace.encoder.front()) + " .. " + shape_str(trace.encoder.back()) +
                  ", pre-head " + shape_str(trace.pre_head) + ", output " + shape_str(trace.output)};
}

Outcome ac3_conv_oracle() {
  const auto t0 = Clock::now();
  Rng rng(31337);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    ConvSpec spec;
    spec.kernel_h = 1 + rng.below(4);
    spec.kernel_w = 1 + rng.below(4);
    spec.stride = 1 + rng.below(3);
    spec.padding = rng.below(3);
    spec.dilation = 1 + rng.below(3);
    const std::size_t n = 1 + rng.below(2), ci = 1 + rng.below(4), co = 1 + rng.below(5);
    const std::size_t span_h = spec.dilation * (spec.kernel_h - 1) + 1;
    const std::size_t span_w = spec.dilation * (spec.kernel_w - 1) + 1;
    const std::size_t h = std::max<std::size_t>(span_h, 1 + rng.below(12));
    const std::size_t w = std::max<std::size_t>(span_w, 1 + rng.below(12));
    Tensor<float> x({n, ci, h, w}), k({co, ci, spec.kernel_h, spec.kernel_w}), b({co});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : k.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : b.data()) v = static_cast<float>(rng.uniform(-1, 1));
    const bool with_bias = rng.below(2) == 1;
    const auto fast = conv2d(x, k, with_bias ? &b : nullptr, spec);
    const auto slow = conv2d_naive(x, k, with_bias ? &b : nullptr, spec);
    if (fast.shape() != slow.shape()) return {false, "shape mismatch at config " + std::to_string(i)};
    for (std::size_t j = 0; j < fast.numel(); ++j) worst = std::max(worst, std::abs(double(fast[j]) - slow[j]));
  }
  const double secs = since(t0);
  return {worst < 1e-5 && secs < 60.0, "200 configs, max abs diff " + num("%.2e", worst) + ", " + num("%.2f", secs) + " s"};
}

// Textbook update rules written out with std::pow per step.
struct ScalarRef {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g, bool nesterov, double lr, double b1, double b2, double eps) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double vhat = v / (1.0 - std::pow(b2, t));
    const double mhat = nesterov ? b1 * m / (1.0 - std::pow(b1, t + 1)) + (1.0 - b1) * g / (1.0 - std::pow(b1, t))
                                 : m / (1.0 - std::pow(b1, t));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

Outcome ac4_optimizer() {
  Rng rng(77);
  double worst = 0.0;
  const std::size_t n = 16;
  for (auto kind : {OptimizerKind::adam, OptimizerKind::nadam}) {
    OptimizerState<double> s;
    s.kind = kind;
    s.lr = 0.01;
    Parameter<double> p(Tensor<double>({4, 4}));
    for (auto& v : p.value.data()) v = rng.uniform(-1, 1);
    std::vector<ScalarRef> ref(n);
    std::vector<double> theta(p.value.data().begin(), p.value.data().end());
    std::vector<std::pair<std::string, Parameter<double>*>> list{{"p", &p}};
    for (int step = 0; step < 100; ++step) {
      for (auto& g : p.grad.data()) g = rng.normal();
      for (std::size_t i = 0; i < n; ++i) {
        theta[i] = ref[i].step(theta[i], p.grad[i], kind == OptimizerKind::nadam, s.lr, s.beta1, s.beta2, s.eps);
      }
      optimizer_step(s, std::span<const std::pair<std::string, Parameter<double>*>>(list));
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(theta[i] - p.value[i]));
    }
  }
  OptimizerState<double> a, b;
  a.kind = OptimizerKind::adam;
  a.beta1 = b.beta1 = 0.0;
  Parameter<double> pa(Tensor<double>({8})), pb(Tensor<double>({8}));
  bool identical = true;
  for (int step = 0; step < 100; ++step) {
    for (std::size_t i = 0; i < 8; ++i) pa.grad[i] = pb.grad[i] = rng.normal();
    std::vector<std::pair<std::string, Parameter<double>*>> la{{"p", &pa}}, lb{{"p", &pb}};
    optimizer_step(a, std::span<const std::pair<std::string, Parameter<double>*>>(la));
    optimizer_step(b, std::span<const std::pair<std::string, Parameter<double>*>>(lb));
    identical = identical && pa.value == pb.value;
  }
  return {worst < 1e-12 && identical,
          "100 steps each, max |tensor - scalar| " + num("%.2e", worst) + "; beta1=0 adam==nadam " +
              (identical ? "bitwise" : "DIFFERS")};
}

Outcome ac5_overfit() {
  const auto t0 = Clock::now();
  std::vector<Sample> samples;
  for (auto& raw : make_synthetic_blobs(8, 64, 1)) samples.push_back(preprocess(raw, 64, 64));
  ResUnetPPConfig mc;
  mc.base_channels = 8;
  mc.depth = 4;
  mc.input_height = mc.input_width = 64;
  ResUnetPP<float> model(mc);
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 4;
  tc.optimizer = OptimizerKind::nadam;
  tc.initial_lr = 1e-3;
  tc.cycle_length_epochs = 30;
  tc.early_stop_patience = 15;
  DatasetSplit split;
  split.train = samples;
  const TrainResult r = train(model, split, tc);
  const EvalResult e = evaluate(model, samples, tc.loss, 8);
  const double secs = since(t0);
  return {e.set_loss < 0.1 && e.mean_iou > 0.9,
          std::to_string(r.history.records.size()) + " epochs, training loss " + num("%.4f", e.set_loss) +
              ", mean IoU " + num("%.4f", e.mean_iou) + ", " + num("%.0f", secs) + " s"};
}

// Soft IoU with the same smoothing term, summed in the opposite order.
double soft_iou(const Tensor<double>& p, const Tensor<double>& t, double eps) {
  double i = 0.0, ps = 0.0, ts = 0.0;
  for (std::size_t k = p.numel(); k-- > 0;) {
    i += p[k] * t[k];
    ps += p[k];
    ts += t[k];
  }
  return (i + eps) / (ps + ts - i + eps);
}

Outcome ac6_loss_identities() {
  Rng rng(6);
  double worst_loss = 0.0, worst_dice = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(64);
    Tensor<double> p({n}), t({n});
    for (auto& v : p.data()) v = rng.uniform();
    for (auto& v : t.data()) v = static_cast<double>(rng.below(2));
    Tape<double> tape;
    const LossConfig cfg;
    const double l = jaccard_loss(tape.constant(p), t, cfg).value()[0];
    worst_loss = std::max(worst_loss, std::abs(l - (1.0 - soft_iou(p, t, cfg.smooth_eps))));
  }
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(64);
    Tensor<double> a({n}), b({n});
    for (auto& v : a.data()) v = static_cast<double>(rng.below(2));
    for (auto& v : b.data()) v = static_cast<double>(rng.below(2));
    const double j = jaccard_index(a, b);
    worst_dice = std::max(worst_dice, std::abs(dice_coefficient(a, b) - 2.0 * j / (1.0 + j)));
  }
  return {worst_loss <= 1e-12 && worst_dice <= 1e-12,
          "1000 pairs each, max |loss - (1 - soft IoU)| " + num("%.2e", worst_loss) + ", max |D - 2J/(1+J)| " +
              num("%.2e", worst_dice)};
}

Outcome ac7_determinism() {
  const fs::path dir = scratch("determinism");
  std::ostringstream sink;
  cli::GenerateArgs g;
  g.out_dir = dir / "data";
  g.count = 10;
  g.size = 32;
  g.seed = 3;
  if (cli::cmd_generate(g, sink, sink) != cli::kOk) return {false, "generate failed: " + sink.str()};
  auto run = [&](const std::string& out, std::size_t epochs, bool resume) {
    cli::TrainArgs a;
    a.data_dir = dir / "data";
    a.out_dir = dir / out;
    a.seed = 42;
    a.quiet = true;
    a.resume = resume;
    a.overrides = {"model.base_channels=4", "model.depth=3", "model.input_height=32", "model.input_width=32",
                   "train.batch_size=2", "train.epochs=" + std::to_string(epochs), "schedule.cycle_length_epochs=2"};
    return cli::cmd_train(a, sink, sink);
  };
  if (run("a", 4, false) != cli::kOk || run("b", 4, false) != cli::kOk) return {false, "train failed: " + sink.str()};
  const bool history_same = slurp(dir / "a" / "history.csv") == slurp(dir / "b" / "history.csv");

  auto loaded = checkpoint_load(dir / "a" / "best.ckpt");
  checkpoint_save(dir / "resaved.ckpt", loaded.model);
  auto reloaded = checkpoint_load(dir / "resaved.ckpt");
  Tensor<float> x({2, 3, 32, 32});
  Rng rng(5);
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  const bool predict_same = loaded.model.predict(x) == reloaded.model.predict(x);

  // Uninterrupted 4 epochs vs 2 epochs then resume to 4, in memory at full precision.
  std::vector<Sample> samples = load_dataset(dir / "data", 32, 32, StandardizeMode::per_image);
  DataConfig dc;
  dc.split_seed = 42;
  const DatasetSplit split = split_dataset(samples, dc);
  ResUnetPPConfig mc;
  mc.base_channels = 4;
  mc.depth = 3;
  mc.input_height = mc.input_width = 32;
  mc.seed = 42;
  TrainConfig tc;
  tc.batch_size = 2;
  tc.seed = 42;
  tc.cycle_length_epochs = 2;
  tc.epochs = 4;
  std::vector<double> full_losses, resumed_losses;
  ResUnetPP<float> full(mc);
  train(full, split, tc, std::nullopt, [&](const EpochRecord& r) { full_losses.push_back(r.train_loss); });

  const std::size_t k = 2;
  TrainConfig part = tc;
  part.epochs = k;
  part.checkpoint_path = dir / "part_best.ckpt";
  part.last_checkpoint_path = dir / "part_last.ckpt";
  ResUnetPP<float> first(mc);
  train(first, split, part);
  auto last = checkpoint_load(part.last_checkpoint_path);
  TrainConfig rest = part;
  rest.epochs = tc.epochs;
  train(last.model, split, rest, ResumeState{*last.optimizer, *last.trainer},
        [&](const EpochRecord& r) { resumed_losses.push_back(r.train_loss); });
  const double resume_diff =
      resumed_losses.empty() ? INFINITY : std::abs(resumed_losses.front() - full_losses.at(k));

  return {history_same && predict_same && resume_diff <= 1e-9,
          std::string("history.csv ") + (history_same ? "identical" : "DIFFERS") + "; save/load predict " +
              (predict_same ? "bitwise equal" : "DIFFERS") + "; resume at epoch " + std::to_string(k) +
              ", epoch " + std::to_string(k + 1) + " train loss diff " + num("%.1e", resume_diff)};
}

Outcome ac8_pipeline() {
  const fs::path dir = scratch("pipeline");
  std::ostringstream sink;
  cli::GenerateArgs g;
  g.out_dir = dir / "data";
  g.count = 12;
  g.size = 40;
  g.seed = 8;
  if (cli::cmd_generate(g, sink, sink) != cli::kOk) return {false, "generate failed: " + sink.str()};

  double worst_mean = 0.0, worst_std = 0.0;
  bool binary = true;
  for (std::size_t size : {32u, 40u, 56u}) {
    const auto samples = load_dataset(dir / "data", size, size, StandardizeMode::per_image);
    for (const auto& s : samples) {
      double sum = 0.0, sq = 0.0;
      for (float v : s.image.data()) sum += v;
      const double mean = sum / static_cast<double>(s.image.numel());
      for (float v : s.image.data()) sq += (v - mean) * (v - mean);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_std = std::max(worst_std, std::abs(std::sqrt(sq / static_cast<double>(s.image.numel())) - 1.0));
      binary = binary && is_binary(s.mask);
    }
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    binary = binary && is_binary(make_batch(samples, all).masks);
  }

  bool disjoint = true;
  std::vector<Sample> pool;
  for (std::size_t i = 0; i < 60; ++i) {
    pool.push_back(Sample{"id" + std::to_string(i), Tensor<float>({1, 1, 1}), Tensor<float>({1, 1, 1})});
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DataConfig dc;
    dc.split_seed = seed;
    const auto split = split_dataset(pool, dc);
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
      for (const auto& s : *part) seen.insert(s.id);
      total += part->size();
    }
    disjoint = disjoint && seen.size() == total && total == pool.size();
  }
  return {worst_mean < 1e-5 && worst_std < 1e-4 && binary && disjoint,
          "max |mean| " + num("%.1e", worst_mean) + ", max |std-1| " + num("%.1e", worst_std) + "; masks " +
              (binary ? "binary" : "NOT binary") + "; 100 split seeds " + (disjoint ? "disjoint" : "OVERLAP")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"AC1 gradient correctness", ac1_gradients},   {"AC2 shape contract", ac2_shapes},
      {"AC3 conv kernel oracle", ac3_conv_oracle},   {"AC4 optimizer oracle", ac4_optimizer},
      {"AC5 synthetic overfit", ac5_overfit},        {"AC6 loss identities", ac6_loss_identities},
      {"AC7 determinism and checkpoints", ac7_determinism}, {"AC8 pipeline contracts", ac8_pipeline},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("%s  %-32s %s\n", o.passed ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
