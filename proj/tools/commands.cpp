#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "rupp/checkpoint.hpp"
#include "rupp/config.hpp"
#include "rupp/data.hpp"
#include "rupp/error.hpp"
#include "rupp/image_io.hpp"
#include "rupp/losses.hpp"
#include "rupp/trainer.hpp"
#include "rupp/verify.hpp"

namespace rupp::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

Setting split_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  return {trim(kv.substr(0, eq)), trim(kv.substr(eq + 1))};
}

// defaults < config file < flags
RunConfig resolve(const fs::path& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) apply_settings(cfg, read_config_file(file));
  for (const auto& kv : overrides) {
    const auto [k, v] = split_override(kv);
    apply_setting(cfg, k, v);
  }
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const TrainingAborted& e) {
    err << "error: training aborted: " << e.what() << "\n";
    return kNanAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
}

const std::vector<Sample>& pick_split(const DatasetSplit& split, const std::vector<Sample>& all,
                                      const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  if (name == "test") return split.test;
  if (name == "all") return all;
  throw ConfigError("unknown split '" + name + "' (expected train, val, test or all)");
}

}  // namespace

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = resolve(args.config, args.overrides);
    if (args.seed) {
      cfg.train.seed = *args.seed;
      cfg.model.seed = *args.seed;
      cfg.data.split_seed = *args.seed;
    }
    cfg.validate();
    if (!fs::is_directory(args.data_dir)) {
      throw IoError("data directory '" + args.data_dir.string() + "' does not exist");
    }
    if (args.out_dir.empty()) throw ConfigError("--out-dir is required");
    fs::create_directories(args.out_dir);

    const auto& m = cfg.model;
    std::vector<Sample> samples = load_dataset(args.data_dir, m.input_height, m.input_width, cfg.data.standardize);
    if (samples.empty()) throw ValidationError("no image/mask pairs found under '" + args.data_dir.string() + "'");
    const std::size_t total = samples.size();
    DatasetSplit split = split_dataset(std::move(samples), cfg.data);

    cfg.train.checkpoint_path = args.out_dir / "best.ckpt";
    cfg.train.last_checkpoint_path = args.out_dir / "last.ckpt";

    std::string manifest = "# resolved run configuration\n";
    manifest += "data_dir = " + fs::absolute(args.data_dir).string() + "\n";
    manifest += format_config(cfg);
    manifest += "# samples: total " + std::to_string(total) + ", train " + std::to_string(split.train.size()) +
                ", val " + std::to_string(split.val.size()) + ", test " + std::to_string(split.test.size()) + "\n";
    write_text(args.out_dir / "manifest.txt", manifest);

    std::optional<ResumeState> resume;
    ResUnetPP<float> model(cfg.model);
    if (args.resume) {
      auto loaded = checkpoint_load(cfg.train.last_checkpoint_path, cfg.model, cfg.train.fresh_optimizer());
      if (!loaded.optimizer || !loaded.trainer) throw FormatError("last.ckpt carries no training state to resume");
      model = std::move(loaded.model);
      resume = ResumeState{*loaded.optimizer, *loaded.trainer};
      if (!args.quiet) out << "resuming at epoch " << resume->trainer.next_epoch + 1 << "\n";
    }
    if (!args.quiet) {
      out << "samples: train " << split.train.size() << ", val " << split.val.size() << ", test "
          << split.test.size() << "; parameters " << model.count_parameters() << "\n";
    }

    const auto on_epoch = [&](const EpochRecord& r) {
      if (args.quiet) return;
      out << "epoch " << r.epoch << "  train_loss " << fmt("%.4f", r.train_loss) << "  val_loss "
          << fmt("%.4f", r.val_loss) << "  val_iou " << fmt("%.4f", r.val_iou) << "  lr " << fmt("%.3g", r.lr)
          << std::endl;
    };
    const TrainResult result = train(model, split, cfg.train, resume, on_epoch);
    result.history.write_csv(args.out_dir / "history.csv");
    if (!fs::exists(cfg.train.checkpoint_path)) checkpoint_save(cfg.train.checkpoint_path, model);
    if (!args.quiet) {
      out << "best epoch " << result.best_epoch << " val_loss " << fmt("%.4f", result.best_val_loss)
          << (result.stopped_early ? " (early stop)" : "") << "\n";
    }
    return static_cast<int>(kOk);
  });
}

int cmd_predict(const PredictArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.out.empty()) throw ConfigError("--out is required");
    auto loaded = checkpoint_load(args.model);
    const auto& mcfg = loaded.model.config();

    const Image8 original = read_png(args.image);
    Sample raw{"input", image_to_tensor(original), Tensor<float>({1, original.height, original.width})};
    std::optional<Tensor<float>> truth;
    if (!args.mask.empty()) {
      raw = load_pair(args.image, args.mask, "input");
      truth = raw.mask;
    }
    Sample s = preprocess(raw, mcfg.input_height, mcfg.input_width, StandardizeMode::per_image);
    const Tensor<float> x = s.image.reshaped({1, 3, mcfg.input_height, mcfg.input_width});
    Tensor<float> prob = loaded.model.predict(x).reshaped({1, mcfg.input_height, mcfg.input_width});
    if (mcfg.input_height != original.height || mcfg.input_width != original.width) {
      prob = resize_bilinear(prob, original.height, original.width);
    }
    const Tensor<float> pred = binarize(prob, mcfg.threshold);

    fs::create_directories(args.out);
    Image8 prob_img{original.width, original.height, 1, std::vector<std::uint8_t>(prob.numel())};
    for (std::size_t i = 0; i < prob.numel(); ++i) {
      prob_img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(static_cast<double>(prob[i]), 0.0, 1.0)));
    }
    write_png(args.out / "prob.png", prob_img);
    write_png(args.out / "mask.png", mask_to_image(pred));

    std::size_t positive = 0;
    for (float v : pred.data()) positive += v > 0.5f ? 1 : 0;
    const double fraction = static_cast<double>(positive) / static_cast<double>(pred.numel());

    if (truth) {
      Image8 overlay{original.width, original.height, 3, std::vector<std::uint8_t>(original.width * original.height * 3)};
      for (std::size_t y = 0; y < original.height; ++y) {
        for (std::size_t x2 = 0; x2 < original.width; ++x2) {
          const std::size_t i = y * original.width + x2;
          const bool gt = (*truth)[i] > 0.5f, pr = pred[i] > 0.5f;
          for (std::size_t c = 0; c < 3; ++c) {
            const double base = original.at(y, x2, original.channels == 3 ? c : 0);
            double v = base;
            if (gt || pr) {
              const double tint = (c == 0 && gt) || (c == 1 && pr) ? 255.0 : 0.0;
              v = 0.5 * base + 0.5 * tint;
            }
            overlay.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v));
          }
        }
      }
      write_png(args.out / "overlay.png", overlay);
      out << "iou: " << fmt("%.6f", jaccard_index(pred, *truth)) << "\n";
    }
    out << "positive fraction: " << fmt("%.6f", fraction) << "\n";
    out << "tumour present: " << (fraction > 0.001 ? "yes" : "no") << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    fs::path config = args.config;
    if (config.empty()) {
      const fs::path manifest = args.model.parent_path() / "manifest.txt";
      if (fs::exists(manifest)) config = manifest;
    }
    RunConfig cfg;
    if (!config.empty()) {
      for (const auto& [k, v] : read_config_file(config)) {
        if (k != "data_dir") apply_setting(cfg, k, v);
      }
    }
    for (const auto& kv : args.overrides) {
      const auto [k, v] = split_override(kv);
      apply_setting(cfg, k, v);
    }
    cfg.data.validate();
    cfg.train.loss.validate();

    auto loaded = checkpoint_load(args.model);
    const auto& mcfg = loaded.model.config();
    std::vector<Sample> all = load_dataset(args.data_dir, mcfg.input_height, mcfg.input_width, cfg.data.standardize);
    if (all.empty()) throw ValidationError("no image/mask pairs found under '" + args.data_dir.string() + "'");
    DatasetSplit split;
    if (args.split != "all") split = split_dataset(all, cfg.data);
    const std::vector<Sample>& chosen = pick_split(split, all, args.split);
    if (chosen.empty()) throw ValidationError("split '" + args.split + "' is empty");

    const EvalResult r = evaluate(loaded.model, chosen, cfg.train.loss, cfg.train.batch_size);
    out << "split: " << args.split << " (" << chosen.size() << " samples)\n";
    out << "loss: " << fmt("%.6f", r.mean_loss) << "\n";
    out << "iou: " << fmt("%.6f", r.mean_iou) << "\n";
    out << "dice: " << fmt("%.6f", r.mean_dice) << "\n";
    out << "pixel_accuracy: " << fmt("%.6f", r.mean_accuracy) << "\n";
    out << "set_loss: " << fmt("%.6f", r.set_loss) << "\n";
    const fs::path csv = args.csv.empty() ? args.model.parent_path() / ("eval_" + args.split + ".csv") : args.csv;
    write_text(csv, r.to_csv());
    out << "per-sample csv: " << csv.string() << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_verify(const VerifyArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    VerifyOptions opt;
    if (!args.inject_fault.empty()) {
      if (args.inject_fault != "conv-backward") throw ConfigError("unknown fault '" + args.inject_fault + "'");
      opt.inject_conv_backward_fault = true;
    }
    const VerifyReport report = run_verification(opt);
    std::size_t failed = 0;
    for (const auto& c : report.checks) {
      out << format_check(c) << "\n";
      failed += c.passed ? 0 : 1;
    }
    out << (failed == 0 ? "all " + std::to_string(report.checks.size()) + " checks passed"
                        : std::to_string(failed) + " of " + std::to_string(report.checks.size()) + " checks failed")
        << " in " << fmt("%.1f", report.seconds) << " s\n";
    return static_cast<int>(failed == 0 ? kOk : kVerifyFailed);
  });
}

int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.out_dir.empty()) throw ConfigError("--out is required");
    for (const auto& s : make_synthetic_blobs(args.count, args.size, args.seed)) {
      const fs::path dir = args.out_dir / s.id;
      fs::create_directories(dir);
      write_png(dir / "image.png", tensor_to_image(s.image));
      write_png(dir / "mask.png", mask_to_image(s.mask));
    }
    out << "wrote " << args.count << " samples to " << args.out_dir.string() << "\n";
    return static_cast<int>(kOk);
  });
}

}  // namespace rupp::cli
