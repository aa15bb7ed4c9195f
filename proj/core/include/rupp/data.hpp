#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rupp/image_io.hpp"
#include "rupp/tensor.hpp"

namespace rupp {

enum class StandardizeMode { per_image, dataset };

const char* to_string(StandardizeMode mode);
StandardizeMode parse_standardize_mode(const std::string& s);

struct DataConfig {
  std::uint64_t split_seed = 0;
  double train_ratio = 0.70;
  double val_ratio = 0.15;
  double test_ratio = 0.15;
  StandardizeMode standardize = StandardizeMode::per_image;

  void validate() const;
};

/// image: (3,H,W); mask: (1,H,W) with values exactly 0 or 1.
struct Sample {
  std::string id;
  Tensor<float> image;
  Tensor<float> mask;
};

struct SamplePaths {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
  std::uint64_t split_seed = 0;
  std::array<double, 3> ratios{0.70, 0.15, 0.15};
};

// (3,H,W) floats in [0,255]; gray input is replicated to three channels.
Tensor<float> image_to_tensor(const Image8& image);
// (1,H,W) with pixel > 127 -> 1, else 0. Multi-channel masks use channel 0.
Tensor<float> mask_to_tensor(const Image8& image);

// Raw sample: image values in [0,255], mask binarized. Throws IoError or
// ValidationError (image/mask size mismatch).
Sample load_pair(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                 std::string id = {});

Tensor<float> normalize01(Tensor<float> image);

/// Subtracts the joint mean of all elements and divides by the population std.
/// A constant input (std below 1e-8) yields zeros and a warning on stderr.
Tensor<float> standardize(const Tensor<float>& image, bool* was_constant = nullptr);
Tensor<float> standardize_with(const Tensor<float>& image, double mean, double stddev);

// (C,H,W) resizing. Bilinear uses half-pixel centers with edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t height, std::size_t width);
Tensor<float> resize_nearest(const Tensor<float>& image, std::size_t height, std::size_t width);

/// load -> resize -> normalize01 -> standardize for images (standardization is
/// skipped in dataset mode, see standardize_dataset); masks are only resized
/// with nearest neighbour, which keeps them binary.
Sample preprocess(Sample raw, std::size_t height, std::size_t width,
                  StandardizeMode mode = StandardizeMode::per_image);

// Dataset-wide standardization with statistics pooled over every sample.
void standardize_dataset(std::vector<Sample>& samples);

/// Finds image/mask pairs under `root`, sorted by id. Accepted layouts:
///   <root>/<case>/image.png + <root>/<case>/mask.png   (id = case)
///   <dir>/<stem>.png + <dir>/<stem>_mask.png, any depth (id = stem)
std::vector<SamplePaths> discover_pairs(const std::filesystem::path& root);

std::vector<Sample> load_dataset(const std::filesystem::path& root, std::size_t height, std::size_t width,
                                 StandardizeMode mode);

/// Deterministic shuffled partition: floor(n * ratio) samples each for val and
/// test, the remainder for train. Needs at least 3 samples.
DatasetSplit split_dataset(std::vector<Sample> samples, const DataConfig& cfg);

// Training order for one epoch, derived from (seed, epoch).
std::vector<std::size_t> shuffle_epoch(std::size_t n, std::uint64_t seed, std::size_t epoch);

struct Batch {
  Tensor<float> images;  // (N,3,H,W)
  Tensor<float> masks;   // (N,1,H,W)
  std::vector<std::string> ids;
};

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices);

/// Raw (unpreprocessed) synthetic samples: a bright Gaussian blob on uniform
/// noise, integer-valued in [0,255]. The mask is the blob support, where the
/// Gaussian profile is at least half its peak.
std::vector<Sample> make_synthetic_blobs(std::size_t count, std::size_t size, std::uint64_t seed);

// Raw sample tensors back to 8-bit images (image clamped to [0,255], mask 0/255).
Image8 tensor_to_image(const Tensor<float>& image);
Image8 mask_to_image(const Tensor<float>& mask);

}  // namespace rupp
