#include "rupp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "rupp/error.hpp"

namespace rupp {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  void need(std::size_t n, const std::string& context) const {
    if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of file while reading " + context);
  }
  std::uint32_t u32(const std::string& context) {
    need(4, context);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const std::string& context) {
    need(8, context);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const std::string& context) {
    const std::uint32_t bits = u32(context);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }
  std::string str(std::size_t n, const std::string& context) {
    need(n, context);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

Tensor<float> model_config_tensor(const ResUnetPPConfig& cfg) {
  std::vector<float> v{static_cast<float>(cfg.input_channels), static_cast<float>(cfg.base_channels),
                       static_cast<float>(cfg.depth),          static_cast<float>(cfg.input_height),
                       static_cast<float>(cfg.input_width),    static_cast<float>(cfg.threshold),
                       static_cast<float>(cfg.aspp_dilations.size())};
  for (auto d : cfg.aspp_dilations) v.push_back(static_cast<float>(d));
  const std::size_t n = v.size();
  return Tensor<float>({n}, std::move(v));
}

ResUnetPPConfig model_config_from_tensor(const Tensor<float>& t) {
  if (t.numel() < 7) throw FormatError("meta/model_config is too short");
  ResUnetPPConfig cfg;
  cfg.input_channels = static_cast<std::size_t>(t[0]);
  cfg.base_channels = static_cast<std::size_t>(t[1]);
  cfg.depth = static_cast<std::size_t>(t[2]);
  cfg.input_height = static_cast<std::size_t>(t[3]);
  cfg.input_width = static_cast<std::size_t>(t[4]);
  cfg.threshold = static_cast<double>(t[5]);
  const auto n = static_cast<std::size_t>(t[6]);
  if (t.numel() != 7 + n) throw FormatError("meta/model_config has inconsistent dilation count");
  cfg.aspp_dilations.clear();
  for (std::size_t i = 0; i < n; ++i) cfg.aspp_dilations.push_back(static_cast<std::size_t>(t[7 + i]));
  return cfg;
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

}  // namespace

void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors) {
  std::string buf(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u64(buf, d);
    for (float f : t.data()) put_f32(buf, f);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint '" + path.string() + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

std::vector<NamedTensor> read_tensors(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  Reader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw FormatError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string idx = "tensor #" + std::to_string(i);
    const std::uint32_t len = r.u32(idx + " name length");
    const std::string name = r.str(len, idx + " name");
    const std::string ctx = "tensor '" + name + "'";
    const std::uint32_t rank = r.u32(ctx);
    if (rank == 0) throw FormatError(ctx + " has rank 0");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64(ctx)));
    const std::size_t n = shape_numel(shape);
    r.need(n * 4, ctx);
    std::vector<float> data(n);
    for (auto& f : data) f = r.f32(ctx);
    out.push_back(NamedTensor{name, Tensor<float>(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after the last tensor in '" + path.string() + "'");
  return out;
}

void checkpoint_save(const fs::path& path, ResUnetPP<float>& model, const OptimizerState<float>* optimizer,
                     const TrainerState* trainer) {
  std::vector<NamedTensor> tensors;
  auto refs = model.named();
  for (const auto& [name, p] : refs.parameters) tensors.push_back({"model/" + name, p->value});
  for (const auto& [name, b] : refs.buffers) tensors.push_back({"model/" + name, *b});
  if (optimizer) {
    for (const auto& [name, p] : refs.parameters) {
      auto it = optimizer->moments.find(name);
      const bool have = it != optimizer->moments.end() && it->second.m.shape() == p->value.shape();
      tensors.push_back({"opt/m/" + name, have ? it->second.m : Tensor<float>::zeros_like(p->value)});
      tensors.push_back({"opt/v/" + name, have ? it->second.v : Tensor<float>::zeros_like(p->value)});
    }
    tensors.push_back({"opt/t", Tensor<float>::scalar(static_cast<float>(optimizer->t))});
  }
  if (trainer) {
    tensors.push_back({"train/state", Tensor<float>({5}, {static_cast<float>(trainer->next_epoch),
                                                          trainer->best_val_loss,
                                                          static_cast<float>(trainer->best_epoch),
                                                          static_cast<float>(trainer->epochs_since_improve),
                                                          trainer->plateau_scale})});
    std::vector<float> hist;
    for (const auto& row : trainer->history) hist.insert(hist.end(), row.begin(), row.end());
    if (!trainer->history.empty()) {
      tensors.push_back({"train/history", Tensor<float>({trainer->history.size(), 6}, std::move(hist))});
    }
  }
  tensors.push_back({"meta/model_config", model_config_tensor(model.config())});
  write_tensors(path, tensors);
}

ResUnetPPConfig read_model_config(const fs::path& path) {
  for (auto& nt : read_tensors(path)) {
    if (nt.name == "meta/model_config") return model_config_from_tensor(nt.tensor);
  }
  throw FormatError("checkpoint '" + path.string() + "' does not record its model configuration");
}

LoadedCheckpoint checkpoint_load(const fs::path& path, const std::optional<ResUnetPPConfig>& config,
                                 const OptimizerState<float>& optimizer_template) {
  std::map<std::string, Tensor<float>> file;
  for (auto& nt : read_tensors(path)) {
    if (!file.emplace(nt.name, std::move(nt.tensor)).second) throw FormatError("duplicate tensor '" + nt.name + "'");
  }
  ResUnetPPConfig cfg;
  if (config) {
    cfg = *config;
  } else {
    auto it = file.find("meta/model_config");
    if (it == file.end()) throw FormatError("checkpoint has no meta/model_config; pass a model config");
    cfg = model_config_from_tensor(it->second);
  }

  LoadedCheckpoint out{ResUnetPP<float>(cfg), std::nullopt, std::nullopt};
  auto refs = out.model.named();
  std::map<std::string, Tensor<float>*> expected;
  for (auto& [name, p] : refs.parameters) expected["model/" + name] = &p->value;
  for (auto& [name, b] : refs.buffers) expected["model/" + name] = b;

  std::vector<std::string> missing, extra;
  for (const auto& [name, dst] : expected) {
    if (!file.count(name)) missing.push_back(name);
  }
  for (const auto& [name, t] : file) {
    if (name.rfind("model/", 0) == 0 && !expected.count(name)) extra.push_back(name);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "checkpoint '" + path.string() + "' does not match the model architecture";
    if (!missing.empty()) msg += "; missing: " + join(missing);
    if (!extra.empty()) msg += "; extra: " + join(extra);
    throw FormatError(msg);
  }
  for (auto& [name, dst] : expected) {
    const Tensor<float>& src = file.at(name);
    if (src.shape() != dst->shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(src.shape()) + ", model expects " +
                        shape_str(dst->shape()));
    }
    *dst = src;
  }
  out.model.zero_grad();

  if (file.count("opt/t")) {
    OptimizerState<float> opt = optimizer_template;
    opt.moments.clear();
    opt.t = static_cast<std::uint64_t>(file.at("opt/t")[0]);
    for (auto& [name, p] : refs.parameters) {
      auto m = file.find("opt/m/" + name);
      auto v = file.find("opt/v/" + name);
      if (m == file.end() || v == file.end()) throw FormatError("optimizer moments missing for '" + name + "'");
      if (m->second.shape() != p->value.shape() || v->second.shape() != p->value.shape()) {
        throw FormatError("optimizer moments for '" + name + "' have the wrong shape");
      }
      opt.moments[name] = Moments<float>{m->second, v->second};
    }
    out.optimizer = std::move(opt);
  }

  if (auto it = file.find("train/state"); it != file.end()) {
    const Tensor<float>& s = it->second;
    if (s.numel() != 5) throw FormatError("train/state must hold 5 values");
    TrainerState ts;
    ts.next_epoch = static_cast<std::size_t>(s[0]);
    ts.best_val_loss = s[1];
    ts.best_epoch = static_cast<std::size_t>(s[2]);
    ts.epochs_since_improve = static_cast<std::size_t>(s[3]);
    ts.plateau_scale = s[4];
    if (auto h = file.find("train/history"); h != file.end()) {
      const Tensor<float>& ht = h->second;
      if (ht.rank() != 2 || ht.dim(1) != 6) throw FormatError("train/history must be (epochs, 6)");
      for (std::size_t r = 0; r < ht.dim(0); ++r) {
        std::array<float, 6> row;
        for (std::size_t c = 0; c < 6; ++c) row[c] = ht[r * 6 + c];
        ts.history.push_back(row);
      }
    }
    out.trainer = std::move(ts);
  }
  return out;
}

}  // namespace rupp
