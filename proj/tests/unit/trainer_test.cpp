#include <gtest/gtest.h>

#include <algorithm>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "rupp/checkpoint.hpp"
#include "rupp/error.hpp"
#include "rupp/trainer.hpp"

using namespace rupp;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("rupp_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ResUnetPPConfig tiny_config() {
  ResUnetPPConfig c;
  c.base_channels = 2;
  c.depth = 3;
  c.input_height = c.input_width = 16;
  c.seed = 3;
  return c;
}

DatasetSplit tiny_split(std::size_t n = 6) {
  std::vector<Sample> s;
  for (auto& r : make_synthetic_blobs(n, 16, 5)) s.push_back(preprocess(r, 16, 16));
  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) (i + 2 < n ? split.train : split.val).push_back(s[i]);
  return split;
}

TrainConfig quick_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 2;
  t.initial_lr = 1e-2;
  t.early_stop_patience = 100;
  t.plateau_patience = 100;
  return t;
}

bool same_weights(ResUnetPP<float>& a, ResUnetPP<float>& b) {
  auto na = a.named(), nb = b.named();
  for (std::size_t i = 0; i < na.parameters.size(); ++i) {
    if (!(na.parameters[i].second->value == nb.parameters[i].second->value)) return false;
  }
  for (std::size_t i = 0; i < na.buffers.size(); ++i) {
    if (!(*na.buffers[i].second == *nb.buffers[i].second)) return false;
  }
  return true;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  auto dir = temp_dir("roundtrip");
  ResUnetPP<float> model(tiny_config());
  // Run one training step so running stats and moments are non-trivial.
  auto cfg = quick_train(1);
  train(model, tiny_split(), cfg);
  OptimizerState<float> opt;
  auto params = model.named().parameters;
  for (auto& [name, p] : params) p->grad = Tensor<float>::full(p->value.shape(), 0.5f);
  optimizer_step(opt, std::span<const std::pair<std::string, Parameter<float>*>>(params));
  checkpoint_save(dir / "a.ckpt", model, &opt);
  auto loaded = checkpoint_load(dir / "a.ckpt");
  EXPECT_TRUE(same_weights(model, loaded.model));
  ASSERT_TRUE(loaded.optimizer.has_value());
  EXPECT_EQ(loaded.optimizer->t, 1u);
  for (auto& [name, mom] : opt.moments) {
    EXPECT_EQ(loaded.optimizer->moments.at(name).m, mom.m);
    EXPECT_EQ(loaded.optimizer->moments.at(name).v, mom.v);
  }
  Tensor<float> x({1, 3, 16, 16});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::sin(0.1f * static_cast<float>(i));
  EXPECT_EQ(model.predict(x), loaded.model.predict(x));
}

TEST(Checkpoint, ModelOnlyFileLoadsWithoutOptimizer) {
  auto dir = temp_dir("modelonly");
  ResUnetPP<float> model(tiny_config());
  checkpoint_save(dir / "m.ckpt", model);
  auto loaded = checkpoint_load(dir / "m.ckpt");
  EXPECT_FALSE(loaded.optimizer.has_value());
  EXPECT_FALSE(loaded.trainer.has_value());
  EXPECT_TRUE(same_weights(model, loaded.model));
  EXPECT_EQ(read_model_config(dir / "m.ckpt").base_channels, 2u);
}

TEST(Checkpoint, TruncatedFileNamesTensor) {
  auto dir = temp_dir("trunc");
  ResUnetPP<float> model(tiny_config());
  checkpoint_save(dir / "m.ckpt", model);
  fs::resize_file(dir / "m.ckpt", fs::file_size(dir / "m.ckpt") / 2);
  try {
    checkpoint_load(dir / "m.ckpt");
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unexpected end of file"), std::string::npos) << msg;
    EXPECT_NE(msg.find("model/"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, MismatchedArchitectureListsNames) {
  auto dir = temp_dir("mismatch");
  ResUnetPP<float> model(tiny_config());
  checkpoint_save(dir / "m.ckpt", model);
  auto other = tiny_config();
  other.depth = 2;
  try {
    checkpoint_load(dir / "m.ckpt", other);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("extra: model/"), std::string::npos) << e.what();
  }
  other = tiny_config();
  other.base_channels = 3;
  EXPECT_THROW(checkpoint_load(dir / "m.ckpt", other), FormatError);
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto dir = temp_dir("magic");
  {
    std::ofstream f(dir / "bad.ckpt", std::ios::binary);
    f << "NOPE0000";
  }
  EXPECT_THROW(read_tensors(dir / "bad.ckpt"), FormatError);
  write_tensors(dir / "v.ckpt", {{"x", Tensor<float>({2}, {1, 2})}});
  {
    std::fstream f(dir / "v.ckpt", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v[4] = {9, 0, 0, 0};
    f.write(v, 4);
  }
  try {
    read_tensors(dir / "v.ckpt");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(checkpoint_load("/nonexistent/x.ckpt"), IoError);
}

TEST(Trainer, SingleEpochGivesOneRecord) {
  ResUnetPP<float> model(tiny_config());
  auto r = train(model, tiny_split(), quick_train(1));
  ASSERT_EQ(r.history.records.size(), 1u);
  EXPECT_EQ(r.history.records[0].epoch, 1u);
  EXPECT_EQ(r.best_epoch, 1u);
  EXPECT_FALSE(r.stopped_early);
}

TEST(Trainer, EmptyTrainSplitRejected) {
  ResUnetPP<float> model(tiny_config());
  DatasetSplit split = tiny_split();
  split.train.clear();
  EXPECT_THROW(train(model, split, quick_train(1)), ValidationError);
}

TEST(Trainer, NanLossAbortsNamingEpochAndBatch) {
  ResUnetPP<float> model(tiny_config());
  model.head().weight.value[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, tiny_split(), quick_train(2));
    FAIL();
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 1"), std::string::npos) << e.what();
  }
}

TEST(Trainer, EarlyStopsAfterPatience) {
  ResUnetPP<float> model(tiny_config());
  auto cfg = quick_train(50);
  cfg.initial_lr = 1e-12;
  cfg.min_lr = 1e-12;
  cfg.min_delta = 10.0;  // nothing counts as an improvement after epoch 1
  cfg.early_stop_patience = 2;
  auto r = train(model, tiny_split(), cfg);
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(r.history.records.size(), 3u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Trainer, DeterministicHistoryAndWeights) {
  auto split = tiny_split();
  ResUnetPP<float> a(tiny_config()), b(tiny_config());
  auto ra = train(a, split, quick_train(3));
  auto rb = train(b, split, quick_train(3));
  EXPECT_EQ(ra.history.to_csv(), rb.history.to_csv());
  EXPECT_TRUE(same_weights(a, b));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  auto dir = temp_dir("resume");
  auto split = tiny_split();
  ResUnetPP<float> full(tiny_config());
  auto cfg = quick_train(4);
  auto rf = train(full, split, cfg);

  ResUnetPP<float> part(tiny_config());
  auto pcfg = quick_train(2);
  pcfg.checkpoint_path = dir / "best.ckpt";
  pcfg.last_checkpoint_path = dir / "last.ckpt";
  train(part, split, pcfg);
  auto last = checkpoint_load(dir / "last.ckpt");
  ASSERT_TRUE(last.optimizer && last.trainer);
  EXPECT_EQ(last.trainer->next_epoch, 2u);

  auto rcfg = quick_train(4);
  rcfg.checkpoint_path = dir / "best.ckpt";
  rcfg.last_checkpoint_path = dir / "last.ckpt";
  auto rr = train(last.model, split, rcfg, ResumeState{*last.optimizer, *last.trainer});
  ASSERT_EQ(rr.history.records.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(rr.history.records[i].train_loss, rf.history.records[i].train_loss, 1e-9) << i;
    EXPECT_NEAR(rr.history.records[i].val_loss, rf.history.records[i].val_loss, 1e-9) << i;
  }
  EXPECT_EQ(rr.best_epoch, rf.best_epoch);
}

TEST(Trainer, HistoryCsvHeader) {
  TrainHistory h;
  h.records.push_back({1, 0.5, 0.25, 0.75, 1e-3, 0});
  EXPECT_EQ(h.to_csv(), "epoch,train_loss,val_loss,val_iou,lr,seconds\n1,0.5,0.25,0.75,0.001,0\n");
}

TEST(Trainer, ConfigValidation) {
  TrainConfig t;
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.epochs = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.epochs = 25;
  EXPECT_EQ(t.schedule().cycle_length_epochs, 2u);
}

TEST(Evaluate, PerfectAndEmptyPredictions) {
  ResUnetPP<float> model(tiny_config());
  auto split = tiny_split();
  // A head bias of +100 saturates every pixel to 1; -100 to 0.
  auto& head = model.head();
  for (auto& w : head.weight.value.data()) w = 0.0f;
  head.bias->value[0] = -100.0f;
  auto r = evaluate(model, split.val);
  ASSERT_EQ(r.samples.size(), split.val.size());
  for (auto& s : r.samples) {
    EXPECT_EQ(s.iou, 0.0);
    EXPECT_EQ(s.dice, 0.0);
  }
  std::vector<Sample> all_ones = split.val;
  for (auto& s : all_ones) s.mask = Tensor<float>::ones(s.mask.shape());
  head.bias->value[0] = 100.0f;
  auto p = evaluate(model, all_ones);
  EXPECT_EQ(p.mean_iou, 1.0);
  EXPECT_EQ(p.mean_accuracy, 1.0);
  EXPECT_NEAR(p.set_loss, 0.0, 1e-6);
  const std::string csv = p.to_csv();
  EXPECT_EQ(csv.rfind("id,loss,iou,dice,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(all_ones.size() + 1));
}

TEST(Evaluate, EmptySetRejected) {
  ResUnetPP<float> model(tiny_config());
  EXPECT_THROW(evaluate(model, {}), ValidationError);
}

TEST(Predict, StacksSamples) {
  ResUnetPP<float> model(tiny_config());
  auto split = tiny_split();
  auto p = predict_samples(model, split.train, 3);
  EXPECT_EQ(p.shape(), (Shape{4, 1, 16, 16}));
}
