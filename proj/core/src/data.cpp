#include "rupp/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>

#include "rupp/error.hpp"
#include "rupp/random.hpp"

namespace rupp {

namespace fs = std::filesystem;

const char* to_string(StandardizeMode mode) {
  return mode == StandardizeMode::per_image ? "per_image" : "dataset";
}

StandardizeMode parse_standardize_mode(const std::string& s) {
  if (s == "per_image") return StandardizeMode::per_image;
  if (s == "dataset") return StandardizeMode::dataset;
  throw ConfigError("unknown standardize mode '" + s + "' (expected per_image or dataset)");
}

void DataConfig::validate() const {
  if (!(train_ratio > 0.0 && val_ratio > 0.0 && test_ratio > 0.0)) throw ConfigError("split ratios must be positive");
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

Tensor<float> image_to_tensor(const Image8& image) {
  const std::size_t h = image.height, w = image.width;
  Tensor<float> t({3, h, w});
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels == 1 ? 0 : c;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) t[(c * h + y) * w + x] = static_cast<float>(image.at(y, x, src_c));
    }
  }
  return t;
}

Tensor<float> mask_to_tensor(const Image8& image) {
  const std::size_t h = image.height, w = image.width;
  Tensor<float> t({1, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) t[y * w + x] = image.at(y, x, 0) > 127 ? 1.0f : 0.0f;
  }
  return t;
}

Sample load_pair(const fs::path& image_path, const fs::path& mask_path, std::string id) {
  const Image8 img = read_png(image_path);
  const Image8 msk = read_png(mask_path);
  if (img.width != msk.width || img.height != msk.height) {
    throw ValidationError("image '" + image_path.string() + "' is " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " but mask '" + mask_path.string() + "' is " +
                          std::to_string(msk.width) + "x" + std::to_string(msk.height));
  }
  if (id.empty()) id = image_path.stem().string();
  return Sample{std::move(id), image_to_tensor(img), mask_to_tensor(msk)};
}

Tensor<float> normalize01(Tensor<float> image) {
  for (auto& v : image.data()) v = v / 255.0f;
  return image;
}

Tensor<float> standardize_with(const Tensor<float>& image, double mean, double stddev) {
  Tensor<float> out(image.shape());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(image[i]) - mean) / stddev);
  }
  return out;
}

Tensor<float> standardize(const Tensor<float>& image, bool* was_constant) {
  double sum = 0.0;
  for (float v : image.data()) sum += v;
  const double n = static_cast<double>(std::max<std::size_t>(image.numel(), 1));
  const double mean = sum / n;
  double sq = 0.0;
  for (float v : image.data()) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / n);
  const bool constant = stddev < 1e-8;
  if (was_constant) *was_constant = constant;
  if (constant) {
    std::cerr << "warning: standardize on a constant image; returning zeros\n";
    return Tensor<float>(image.shape());
  }
  return standardize_with(image, mean, stddev);
}

namespace {

void require_chw(const Tensor<float>& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + " expects (C,H,W), got " + shape_str(t.shape()));
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width) {
  require_chw(image, "resize_bilinear");
  if (height == 0 || width == 0) throw ShapeError("resize target must be positive");
  const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (ih == height && iw == width) return image;
  const double sy = static_cast<double>(ih) / static_cast<double>(height);
  const double sx = static_cast<double>(iw) / static_cast<double>(width);
  auto source = [](std::size_t dst, double scale, std::size_t in, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  Tensor<float> out({c, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, sy, ih, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, sx, iw, x0, x1, fx);
      for (std::size_t k = 0; k < c; ++k) {
        const float* p = image.raw() + k * ih * iw;
        const double top = p[y0 * iw + x0] * (1.0 - fx) + p[y0 * iw + x1] * fx;
        const double bottom = p[y1 * iw + x0] * (1.0 - fx) + p[y1 * iw + x1] * fx;
        out[(k * height + y) * width + x] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& image, std::size_t height, std::size_t width) {
  require_chw(image, "resize_nearest");
  if (height == 0 || width == 0) throw ShapeError("resize target must be positive");
  const std::size_t c = image.dim(0), ih = image.dim(1), iw = image.dim(2);
  if (ih == height && iw == width) return image;
  Tensor<float> out({c, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(ih - 1, (2 * y * ih + ih) / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(iw - 1, (2 * x * iw + iw) / (2 * width));
      for (std::size_t k = 0; k < c; ++k) out[(k * height + y) * width + x] = image[(k * ih + sy) * iw + sx];
    }
  }
  return out;
}

Sample preprocess(Sample raw, std::size_t height, std::size_t width, StandardizeMode mode) {
  Tensor<float> img = normalize01(resize_bilinear(raw.image, height, width));
  if (mode == StandardizeMode::per_image) img = standardize(img);
  return Sample{std::move(raw.id), std::move(img), resize_nearest(raw.mask, height, width)};
}

void standardize_dataset(std::vector<Sample>& samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    for (float v : s.image.data()) sum += v;
    n += s.image.numel();
  }
  if (n == 0) return;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const auto& s : samples) {
    for (float v : s.image.data()) sq += (v - mean) * (v - mean);
  }
  const double stddev = std::max(std::sqrt(sq / static_cast<double>(n)), 1e-8);
  for (auto& s : samples) s.image = standardize_with(s.image, mean, stddev);
}

std::vector<SamplePaths> discover_pairs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("data directory '" + root.string() + "' does not exist");
  std::map<std::string, SamplePaths> found;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (p.extension() != ".png") continue;
    const std::string stem = p.stem().string();
    if (stem == "mask") {
      const fs::path image = p.parent_path() / "image.png";
      if (fs::exists(image)) {
        const std::string id = p.parent_path().filename().string();
        found[id] = SamplePaths{id, image, p};
      }
      continue;
    }
    constexpr std::string_view suffix = "_mask";
    if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
      const std::string base = stem.substr(0, stem.size() - suffix.size());
      const fs::path image = p.parent_path() / (base + ".png");
      if (fs::exists(image)) found[base] = SamplePaths{base, image, p};
    }
  }
  std::vector<SamplePaths> out;
  out.reserve(found.size());
  for (auto& [id, paths] : found) out.push_back(std::move(paths));
  return out;
}

std::vector<Sample> load_dataset(const fs::path& root, std::size_t height, std::size_t width, StandardizeMode mode) {
  std::vector<Sample> samples;
  for (const auto& paths : discover_pairs(root)) {
    samples.push_back(preprocess(load_pair(paths.image, paths.mask, paths.id), height, width, mode));
  }
  if (mode == StandardizeMode::dataset) standardize_dataset(samples);
  return samples;
}

DatasetSplit split_dataset(std::vector<Sample> samples, const DataConfig& cfg) {
  cfg.validate();
  const std::size_t n = samples.size();
  if (n < 3) throw ValidationError("need at least 3 samples to split, got " + std::to_string(n));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.val_ratio + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.test_ratio + 1e-9));
  const std::size_t n_train = n - n_val - n_test;

  DatasetSplit split;
  split.split_seed = cfg.split_seed;
  split.ratios = {cfg.train_ratio, cfg.val_ratio, cfg.test_ratio};
  const auto order = permutation(n, derive_seed(cfg.split_seed, 0x5EED5EEDULL));
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = samples[order[i]];
    if (i < n_train) {
      split.train.push_back(std::move(s));
    } else if (i < n_train + n_val) {
      split.val.push_back(std::move(s));
    } else {
      split.test.push_back(std::move(s));
    }
  }
  return split;
}

std::vector<std::size_t> shuffle_epoch(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  return permutation(n, derive_seed(seed, epoch));
}

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty index list");
  const Sample& first = samples.at(indices[0]);
  const std::size_t c = first.image.dim(0), h = first.image.dim(1), w = first.image.dim(2);
  Batch b{Tensor<float>({indices.size(), c, h, w}), Tensor<float>({indices.size(), 1, h, w}), {}};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = samples.at(indices[i]);
    if (s.image.shape() != first.image.shape() || s.mask.shape() != first.mask.shape()) {
      throw ShapeError("make_batch: sample '" + s.id + "' has shape " + shape_str(s.image.shape()) +
                       ", expected " + shape_str(first.image.shape()));
    }
    std::copy(s.image.data().begin(), s.image.data().end(), b.images.raw() + i * c * h * w);
    std::copy(s.mask.data().begin(), s.mask.data().end(), b.masks.raw() + i * h * w);
    b.ids.push_back(s.id);
  }
  return b;
}

std::vector<Sample> make_synthetic_blobs(std::size_t count, std::size_t size, std::uint64_t seed) {
  if (size < 8) throw ConfigError("synthetic image size must be >= 8");
  std::vector<Sample> out;
  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    const double cy = rng.uniform(s / 4.0, 3.0 * s / 4.0);
    const double cx = rng.uniform(s / 4.0, 3.0 * s / 4.0);
    const double sigma = rng.uniform(s / 16.0, s / 8.0);
    Tensor<float> image({3, size, size});
    Tensor<float> mask({1, size, size});
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double profile = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        mask[y * size + x] = profile >= 0.5 ? 1.0f : 0.0f;
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = rng.uniform(0.0, 60.0) + 180.0 * profile;
          image[(c * size + y) * size + x] = static_cast<float>(std::round(std::min(v, 255.0)));
        }
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "blob%03zu", i);
    out.push_back(Sample{id, std::move(image), std::move(mask)});
  }
  return out;
}

Image8 tensor_to_image(const Tensor<float>& image) {
  require_chw(image, "tensor_to_image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Image8 out{w, h, c == 1 ? 1u : 3u, {}};
  out.pixels.resize(w * h * out.channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < out.channels; ++k) {
        const float v = image[(k * h + y) * w + x];
        out.at(y, x, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Image8 mask_to_image(const Tensor<float>& mask) {
  require_chw(mask, "mask_to_image");
  const std::size_t h = mask.dim(1), w = mask.dim(2);
  Image8 out{w, h, 1, std::vector<std::uint8_t>(w * h)};
  for (std::size_t i = 0; i < w * h; ++i) out.pixels[i] = mask[i] > 0.5f ? 255 : 0;
  return out;
}

}  // namespace rupp
