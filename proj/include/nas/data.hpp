#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nas/rng.hpp"
#include "nas/tensor.hpp"

namespace nas {

struct DataShape {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t numel() const { return c * h * w; }
  bool operator==(const DataShape&) const = default;
};

// One image, channel-major pixels, with a dense label in [0, n_classes).
struct Sample {
  std::vector<double> pixels;
  int label = 0;
};

// Per-channel statistics fitted on the training split only.
struct NormStats {
  std::vector<double> mean, stddev;
};

struct SplitDataset {
  DataShape shape;
  std::size_t n_classes = 0;
  std::vector<Sample> train, validation, test;
  NormStats stats;
};

// Raw shard file: header (u32 count, C, H, W, n_classes), then records of
// u32 label + f32 pixels, little-endian.
void save_shard(const std::string& path, const std::vector<Sample>& samples,
                DataShape shape, std::size_t n_classes);
std::vector<Sample> load_shard(const std::string& path, DataShape& shape,
                               std::size_t& n_classes);

// Shuffles deterministically by seed, splits by ratio (test takes the
// remainder), fits per-channel normalization on train, applies it everywhere.
SplitDataset split_and_normalize(std::vector<Sample> all, DataShape shape,
                                 std::size_t n_classes, double train_ratio,
                                 double val_ratio, std::uint64_t seed);

// Loads one or more shard files (shapes and class counts must agree) and
// runs the shuffle/split/normalize pipeline.
SplitDataset load_dataset(const std::vector<std::string>& shard_paths, double train_ratio,
                          double val_ratio, std::uint64_t seed);

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  std::size_t pad_pixels = 4;   // zero padding per side before the crop
  std::size_t crop_size = 32;   // output height and width
  std::size_t cutout_size = 4;  // 0 disables cutout

  void validate(const DataShape& in) const;
};

// Random horizontal flip, zero-pad, uniform random crop, then cutout (a
// square zeroed at a uniform random center, clipped at the borders, across
// all channels), in that order.  Output is always C x crop_size x crop_size.
std::vector<double> augment(const std::vector<double>& pixels, const DataShape& shape,
                            const AugmentConfig& cfg, Rng& rng);

// Class-conditional oriented wave patterns with random phase and additive
// noise: enough local structure for a small convnet, while the random phase
// keeps raw pixels linearly inseparable.  The raw form (class-ordered, not
// normalized) is what the shard emitter writes; the dataset form splits and
// normalizes it under the same seed.
std::vector<Sample> synth_identity_samples(std::size_t n_classes, std::size_t per_class,
                                           std::size_t image_size, std::uint64_t seed);
SplitDataset synth_identity_dataset(std::size_t n_classes, std::size_t per_class,
                                    std::size_t image_size, std::uint64_t seed);

// Assembles rows of a split into an [N,C,H,W] batch plus its labels.
struct Batch {
  Tensor images;
  std::vector<int> labels;
};
Batch make_batch(const std::vector<Sample>& split, const std::vector<std::size_t>& indices,
                 const DataShape& shape);

// Make_batch with per-sample augmentation (training pipeline).
Batch make_augmented_batch(const std::vector<Sample>& split,
                           const std::vector<std::size_t>& indices, const DataShape& shape,
                           const AugmentConfig& cfg, Rng& rng);

}  // namespace nas
