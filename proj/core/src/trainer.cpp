#include "rupp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "rupp/error.hpp"

namespace rupp {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
  if (!(min_delta >= 0.0)) throw ConfigError("train.min_delta must be >= 0");
  schedule().validate();
  fresh_optimizer().validate();
  loss.validate();
}

LRSchedule TrainConfig::schedule() const {
  LRSchedule s;
  s.initial_lr = initial_lr;
  s.decay_factor = decay_factor;
  s.cycle_length_epochs = cycle_length_epochs == 0 ? std::max<std::size_t>(1, epochs / 10) : cycle_length_epochs;
  s.plateau_patience = plateau_patience;
  s.plateau_factor = plateau_factor;
  s.min_lr = min_lr;
  s.min_delta = min_delta;
  return s;
}

OptimizerState<float> TrainConfig::fresh_optimizer() const {
  OptimizerState<float> opt;
  opt.kind = optimizer;
  opt.lr = initial_lr;
  opt.beta1 = beta1;
  opt.beta2 = beta2;
  opt.eps = adam_eps;
  return opt;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Snapshot {
  std::vector<Tensor<float>> tensors;

  static Snapshot take(ResUnetPP<float>& model) {
    Snapshot s;
    auto refs = model.named();
    for (auto& [name, p] : refs.parameters) s.tensors.push_back(p->value);
    for (auto& [name, b] : refs.buffers) s.tensors.push_back(*b);
    return s;
  }

  void restore(ResUnetPP<float>& model) const {
    auto refs = model.named();
    std::size_t i = 0;
    for (auto& [name, p] : refs.parameters) p->value = tensors.at(i++);
    for (auto& [name, b] : refs.buffers) *b = tensors.at(i++);
  }
};

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

std::string TrainHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_iou,lr,seconds\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," + fmt(r.val_iou) + "," +
           fmt(r.lr) + "," + fmt(r.seconds) + "\n";
  }
  return out;
}

void TrainHistory::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << to_csv();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string EvalResult::to_csv() const {
  std::string out = "id,loss,iou,dice,accuracy\n";
  for (const auto& s : samples) {
    out += s.id + "," + fmt(s.loss) + "," + fmt(s.iou) + "," + fmt(s.dice) + "," + fmt(s.accuracy) + "\n";
  }
  return out;
}

Tensor<float> predict_samples(const ResUnetPP<float>& model, const std::vector<Sample>& samples,
                              std::size_t batch_size) {
  if (samples.empty()) throw ValidationError("no samples to predict");
  const auto idx = iota_indices(samples.size());
  const Shape& ms = samples.front().mask.shape();
  Tensor<float> out({samples.size(), 1, ms[1], ms[2]});
  const std::size_t per = ms[1] * ms[2];
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, samples.size() - start);
    Batch b = make_batch(samples, std::span<const std::size_t>(idx).subspan(start, len));
    Tensor<float> p = model.predict(b.images);
    std::copy(p.raw(), p.raw() + p.numel(), out.raw() + start * per);
  }
  return out;
}

namespace {

double loss_value(const Tensor<float>& pred, const Tensor<float>& target, const LossConfig& cfg) {
  Tape<float> tape;
  return static_cast<double>(jaccard_loss(tape.constant(pred), target, cfg).value()[0]);
}

}  // namespace

EvalResult evaluate(const ResUnetPP<float>& model, const std::vector<Sample>& samples, const LossConfig& loss,
                    std::size_t batch_size) {
  if (samples.empty()) throw ValidationError("cannot evaluate an empty sample list");
  loss.validate();
  const Tensor<float> probs = predict_samples(model, samples, batch_size);
  const std::size_t per = probs.numel() / samples.size();
  const Shape one{1, 1, probs.dim(2), probs.dim(3)};

  EvalResult r;
  Tensor<float> targets(probs.shape());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& mask = samples[i].mask;
    std::copy(mask.raw(), mask.raw() + per, targets.raw() + i * per);
    Tensor<float> p(one, std::vector<float>(probs.raw() + i * per, probs.raw() + (i + 1) * per));
    Tensor<float> t(one, std::vector<float>(mask.raw(), mask.raw() + per));
    const Tensor<float> pb = binarize(p, loss.binarize_threshold);
    SampleMetrics m{samples[i].id, loss_value(p, t, loss), jaccard_index(pb, t), dice_coefficient(pb, t),
                    pixel_accuracy(pb, t)};
    r.mean_loss += m.loss;
    r.mean_iou += m.iou;
    r.mean_dice += m.dice;
    r.mean_accuracy += m.accuracy;
    r.samples.push_back(std::move(m));
  }
  const double n = static_cast<double>(samples.size());
  r.mean_loss /= n;
  r.mean_iou /= n;
  r.mean_dice /= n;
  r.mean_accuracy /= n;
  r.set_loss = loss_value(probs, targets, loss);
  return r;
}

TrainResult train(ResUnetPP<float>& model, const DatasetSplit& split, const TrainConfig& cfg,
                  const std::optional<ResumeState>& resume, const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw ValidationError("training split is empty");
  const auto& mcfg = model.config();
  for (const auto* set : {&split.train, &split.val}) {
    for (const auto& s : *set) {
      const Shape expect{mcfg.input_channels, mcfg.input_height, mcfg.input_width};
      if (s.image.shape() != expect) {
        throw ValidationError("sample '" + s.id + "' has shape " + shape_str(s.image.shape()) +
                              ", model expects " + shape_str(expect));
      }
    }
  }
  const std::vector<Sample>& val_set = split.val.empty() ? split.train : split.val;
  const LRSchedule schedule = cfg.schedule();

  OptimizerState<float> opt = cfg.fresh_optimizer();
  TrainerState st;
  st.best_val_loss = std::numeric_limits<float>::infinity();
  TrainResult result;
  if (resume) {
    opt.moments = resume->optimizer.moments;
    opt.t = resume->optimizer.t;
    st = resume->trainer;
    for (const auto& row : st.history) {
      result.history.records.push_back(EpochRecord{static_cast<std::size_t>(row[0]), row[1], row[2], row[3],
                                                   row[4], row[5]});
    }
  }

  Snapshot best = Snapshot::take(model);
  if (resume && !cfg.checkpoint_path.empty() && fs::exists(cfg.checkpoint_path)) {
    auto stored = checkpoint_load(cfg.checkpoint_path, mcfg);
    best = Snapshot::take(stored.model);
  }

  std::vector<double> val_history;
  for (const auto& r : result.history.records) val_history.push_back(r.val_loss);

  auto params = model.named().parameters;
  const std::size_t n_train = split.train.size();

  for (std::size_t epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = std::max(schedule.min_lr, schedule_lr(schedule, epoch) * static_cast<double>(st.plateau_scale));
    opt.lr = lr;

    const auto order = shuffle_epoch(n_train, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n_train - start);
      Batch b = make_batch(split.train, std::span<const std::size_t>(order).subspan(start, len));
      model.zero_grad();
      Tape<float> tape;
      auto out = model.forward(tape, tape.constant(std::move(b.images)), Mode::train);
      auto loss = jaccard_loss(out, b.masks, cfg.loss);
      const double lv = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(lv)) {
        throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batches + 1));
      }
      tape.backward(loss);
      optimizer_step(opt, std::span<const std::pair<std::string, Parameter<float>*>>(params));
      loss_sum += lv;
      ++batches;
    }

    const EvalResult val = evaluate(model, val_set, cfg.loss, cfg.batch_size);
    if (!std::isfinite(val.set_loss)) {
      throw TrainingAborted("non-finite validation loss at epoch " + std::to_string(epoch + 1));
    }
    const double seconds =
        cfg.log_wall_time ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
    EpochRecord rec{epoch + 1, as_float(loss_sum / static_cast<double>(batches)), as_float(val.set_loss),
                    as_float(val.mean_iou), as_float(lr), as_float(seconds)};
    result.history.records.push_back(rec);
    st.history.push_back({static_cast<float>(rec.epoch), static_cast<float>(rec.train_loss),
                          static_cast<float>(rec.val_loss), static_cast<float>(rec.val_iou),
                          static_cast<float>(rec.lr), static_cast<float>(rec.seconds)});
    val_history.push_back(rec.val_loss);

    bool stop = false;
    if (static_cast<double>(st.best_val_loss) - rec.val_loss >= cfg.min_delta) {
      st.best_val_loss = static_cast<float>(rec.val_loss);
      st.best_epoch = rec.epoch;
      st.epochs_since_improve = 0;
      best = Snapshot::take(model);
      if (!cfg.checkpoint_path.empty()) checkpoint_save(cfg.checkpoint_path, model);
    } else if (++st.epochs_since_improve >= cfg.early_stop_patience) {
      stop = true;
    }
    const double factor = reduce_on_plateau(schedule, val_history);
    if (factor != 1.0) st.plateau_scale = static_cast<float>(st.plateau_scale * factor);
    st.next_epoch = epoch + 1;
    if (!cfg.last_checkpoint_path.empty()) checkpoint_save(cfg.last_checkpoint_path, model, &opt, &st);
    if (on_epoch) on_epoch(rec);
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }

  best.restore(model);
  model.zero_grad();
  result.best_epoch = st.best_epoch;
  result.best_val_loss = st.best_val_loss;
  return result;
}

}  // namespace rupp
