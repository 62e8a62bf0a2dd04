#include "nas/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "nas/common.hpp"

namespace nas {

static_assert(std::endian::native == std::endian::little,
              "shard files assume a little-endian host");

namespace {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void save_shard(const std::string& path, const std::vector<Sample>& samples,
                DataShape shape, std::size_t n_classes) {
  NAS_CHECK(shape.numel() > 0, ContractError, "save_shard: empty image shape");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  NAS_CHECK(out.is_open(), DataError, "cannot open shard for writing: " + path);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(samples.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.c));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.h));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.w));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(n_classes));
  std::vector<float> row(shape.numel());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    NAS_CHECK(s.pixels.size() == shape.numel(), ContractError,
              "save_shard: record " + std::to_string(i) + " has wrong pixel count");
    NAS_CHECK(s.label >= 0 && static_cast<std::size_t>(s.label) < n_classes, ContractError,
              "save_shard: record " + std::to_string(i) + " label out of range");
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.label));
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<float>(s.pixels[j]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  NAS_CHECK(out.good(), DataError, "failed writing shard: " + path);
}

std::vector<Sample> load_shard(const std::string& path, DataShape& shape,
                               std::size_t& n_classes) {
  std::ifstream in(path, std::ios::binary);
  NAS_CHECK(in.is_open(), DataError, "cannot open shard: " + path);
  const auto count = read_pod<std::uint32_t>(in);
  shape.c = read_pod<std::uint32_t>(in);
  shape.h = read_pod<std::uint32_t>(in);
  shape.w = read_pod<std::uint32_t>(in);
  n_classes = read_pod<std::uint32_t>(in);
  NAS_CHECK(in.good(), DataError, "shard '" + path + "': truncated header");
  NAS_CHECK(shape.numel() > 0 && n_classes > 0, DataError,
            "shard '" + path + "': degenerate header");
  std::vector<Sample> samples(count);
  std::vector<float> row(shape.numel());
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto label = read_pod<std::uint32_t>(in);
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    NAS_CHECK(in.good(), DataError,
              "shard '" + path + "': record " + std::to_string(i) + " is truncated");
    NAS_CHECK(label < n_classes, DataError,
              "shard '" + path + "': record " + std::to_string(i) + " label " +
                  std::to_string(label) + " out of range [0, " + std::to_string(n_classes) + ")");
    samples[i].label = static_cast<int>(label);
    samples[i].pixels.assign(row.begin(), row.end());
  }
  return samples;
}

SplitDataset split_and_normalize(std::vector<Sample> all, DataShape shape,
                                 std::size_t n_classes, double train_ratio,
                                 double val_ratio, std::uint64_t seed) {
  NAS_CHECK(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0, ConfigError,
            "split ratios must be positive and leave room for a test split");
  const std::size_t n = all.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * n));
  const auto n_val = static_cast<std::size_t>(std::llround(val_ratio * n));
  NAS_CHECK(n_train >= 1 && n_val >= 1 && n_train + n_val < n, ConfigError,
            "dataset too small for the requested split ratios");

  Rng rng = derive_stream(seed, StreamPurpose::kSplit);
  rng.shuffle(all.data(), all.size());

  SplitDataset ds;
  ds.shape = shape;
  ds.n_classes = n_classes;
  ds.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.validation.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                       all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  ds.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());

  // Per-channel mean and (population) standard deviation, fitted on train.
  const std::size_t plane = shape.h * shape.w;
  ds.stats.mean.assign(shape.c, 0.0);
  ds.stats.stddev.assign(shape.c, 0.0);
  const double count = static_cast<double>(ds.train.size() * plane);
  for (const Sample& s : ds.train)
    for (std::size_t c = 0; c < shape.c; ++c)
      for (std::size_t p = 0; p < plane; ++p) ds.stats.mean[c] += s.pixels[c * plane + p];
  for (double& m : ds.stats.mean) m /= count;
  for (const Sample& s : ds.train)
    for (std::size_t c = 0; c < shape.c; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = s.pixels[c * plane + p] - ds.stats.mean[c];
        ds.stats.stddev[c] += d * d;
      }
  for (double& v : ds.stats.stddev) v = std::max(std::sqrt(v / count), 1e-12);

  auto apply = [&](std::vector<Sample>& split) {
    for (Sample& s : split)
      for (std::size_t c = 0; c < shape.c; ++c)
        for (std::size_t p = 0; p < plane; ++p) {
          double& x = s.pixels[c * plane + p];
          x = (x - ds.stats.mean[c]) / ds.stats.stddev[c];
        }
  };
  apply(ds.train);
  apply(ds.validation);
  apply(ds.test);
  return ds;
}

SplitDataset load_dataset(const std::vector<std::string>& shard_paths, double train_ratio,
                          double val_ratio, std::uint64_t seed) {
  NAS_CHECK(!shard_paths.empty(), ConfigError, "no dataset shards given");
  std::vector<Sample> all;
  DataShape shape{};
  std::size_t n_classes = 0;
  for (const std::string& path : shard_paths) {
    DataShape s{};
    std::size_t k = 0;
    std::vector<Sample> part = load_shard(path, s, k);
    if (all.empty() && n_classes == 0) {
      shape = s;
      n_classes = k;
    } else {
      NAS_CHECK(s == shape && k == n_classes, DataError,
                "shard '" + path + "' disagrees with earlier shards on shape or classes");
    }
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  NAS_CHECK(!all.empty(), DataError, "dataset shards contain no samples");
  return split_and_normalize(std::move(all), shape, n_classes, train_ratio, val_ratio, seed);
}

void AugmentConfig::validate(const DataShape& in) const {
  NAS_CHECK(flip_prob >= 0.0 && flip_prob <= 1.0, ConfigError,
            "flip probability must lie in [0, 1]");
  NAS_CHECK(crop_size >= 1, ConfigError, "crop size must be positive");
  NAS_CHECK(crop_size <= in.h + 2 * pad_pixels && crop_size <= in.w + 2 * pad_pixels,
            ConfigError, "crop size exceeds the padded image");
  NAS_CHECK(cutout_size <= crop_size, ConfigError, "cutout square exceeds the crop");
}

std::vector<double> augment(const std::vector<double>& pixels, const DataShape& shape,
                            const AugmentConfig& cfg, Rng& rng) {
  cfg.validate(shape);
  NAS_CHECK(pixels.size() == shape.numel(), ContractError, "augment: pixel count mismatch");
  const std::size_t plane = shape.h * shape.w;

  // With augmentation off, only a deterministic center pad/crop runs so the
  // output shape contract still holds (identity when crop == input size).
  const bool flip =
      cfg.enabled && cfg.flip_prob > 0.0 && rng.uniform01() < cfg.flip_prob;

  const std::size_t slack_y = shape.h + 2 * cfg.pad_pixels - cfg.crop_size;
  const std::size_t slack_x = shape.w + 2 * cfg.pad_pixels - cfg.crop_size;
  std::size_t oy = slack_y / 2, ox = slack_x / 2;
  if (cfg.enabled) {
    if (slack_y > 0) oy = rng.uniform_int(slack_y + 1);
    if (slack_x > 0) ox = rng.uniform_int(slack_x + 1);
  }

  std::vector<double> out(shape.c * cfg.crop_size * cfg.crop_size, 0.0);
  for (std::size_t c = 0; c < shape.c; ++c)
    for (std::size_t y = 0; y < cfg.crop_size; ++y)
      for (std::size_t x = 0; x < cfg.crop_size; ++x) {
        // Position in the padded frame, then back into the source image.
        const std::ptrdiff_t sy =
            static_cast<std::ptrdiff_t>(oy + y) - static_cast<std::ptrdiff_t>(cfg.pad_pixels);
        std::ptrdiff_t sx =
            static_cast<std::ptrdiff_t>(ox + x) - static_cast<std::ptrdiff_t>(cfg.pad_pixels);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(shape.h) || sx < 0 ||
            sx >= static_cast<std::ptrdiff_t>(shape.w))
          continue;
        if (flip) sx = static_cast<std::ptrdiff_t>(shape.w) - 1 - sx;
        out[(c * cfg.crop_size + y) * cfg.crop_size + x] =
            pixels[c * plane + static_cast<std::size_t>(sy) * shape.w +
                   static_cast<std::size_t>(sx)];
      }

  if (cfg.enabled && cfg.cutout_size > 0) {
    const auto cy = static_cast<std::ptrdiff_t>(rng.uniform_int(cfg.crop_size));
    const auto cx = static_cast<std::ptrdiff_t>(rng.uniform_int(cfg.crop_size));
    const auto s = static_cast<std::ptrdiff_t>(cfg.cutout_size);
    const auto lo_y = std::max<std::ptrdiff_t>(cy - s / 2, 0);
    const auto hi_y = std::min<std::ptrdiff_t>(cy - s / 2 + s, static_cast<std::ptrdiff_t>(cfg.crop_size));
    const auto lo_x = std::max<std::ptrdiff_t>(cx - s / 2, 0);
    const auto hi_x = std::min<std::ptrdiff_t>(cx - s / 2 + s, static_cast<std::ptrdiff_t>(cfg.crop_size));
    for (std::size_t c = 0; c < shape.c; ++c)
      for (std::ptrdiff_t y = lo_y; y < hi_y; ++y)
        for (std::ptrdiff_t x = lo_x; x < hi_x; ++x)
          out[(c * cfg.crop_size + static_cast<std::size_t>(y)) * cfg.crop_size +
              static_cast<std::size_t>(x)] = 0.0;
  }
  return out;
}

std::vector<Sample> synth_identity_samples(std::size_t n_classes, std::size_t per_class,
                                           std::size_t image_size, std::uint64_t seed) {
  NAS_CHECK(n_classes > 0 && per_class > 0 && image_size > 0, ContractError,
            "synthetic dataset sizes must be positive");
  constexpr std::size_t kChannels = 3;
  constexpr double kTau = 6.28318530717958647692;
  const DataShape shape{kChannels, image_size, image_size};
  Rng rng = derive_stream(seed, StreamPurpose::kDataSynth);

  std::vector<Sample> all;
  all.reserve(n_classes * per_class);
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    // Identity = an oriented wave: five orientations per frequency band.
    const double freq = 2.0 + 2.0 * static_cast<double>(cls / 5);
    const double theta = static_cast<double>(cls % 5) * (kTau / 2.0) / 5.0;
    const double dir_x = std::cos(theta), dir_y = std::sin(theta);
    for (std::size_t k = 0; k < per_class; ++k) {
      const double phase = kTau * rng.uniform01();  // per-sample random phase
      Sample s;
      s.label = static_cast<int>(cls);
      s.pixels.resize(shape.numel());
      for (std::size_t c = 0; c < kChannels; ++c) {
        const double channel_shift = static_cast<double>(c) * kTau / 3.0;
        for (std::size_t y = 0; y < image_size; ++y)
          for (std::size_t x = 0; x < image_size; ++x) {
            const double u = (dir_x * static_cast<double>(x) + dir_y * static_cast<double>(y)) /
                             static_cast<double>(image_size);
            s.pixels[(c * image_size + y) * image_size + x] =
                std::sin(kTau * freq * u + phase + channel_shift) + 0.3 * rng.normal();
          }
      }
      all.push_back(std::move(s));
    }
  }
  return all;
}

SplitDataset synth_identity_dataset(std::size_t n_classes, std::size_t per_class,
                                    std::size_t image_size, std::uint64_t seed) {
  return split_and_normalize(synth_identity_samples(n_classes, per_class, image_size, seed),
                             {3, image_size, image_size}, n_classes, 0.8, 0.1, seed);
}

Batch make_batch(const std::vector<Sample>& split, const std::vector<std::size_t>& indices,
                 const DataShape& shape) {
  NAS_CHECK(!indices.empty(), ContractError, "make_batch: empty index list");
  std::vector<double> data;
  data.reserve(indices.size() * shape.numel());
  Batch batch;
  for (std::size_t idx : indices) {
    NAS_CHECK(idx < split.size(), ContractError, "make_batch: index out of range");
    const Sample& s = split[idx];
    NAS_CHECK(s.pixels.size() == shape.numel(), ContractError,
              "make_batch: sample pixel count mismatch");
    data.insert(data.end(), s.pixels.begin(), s.pixels.end());
    batch.labels.push_back(s.label);
  }
  batch.images =
      Tensor::from_data({indices.size(), shape.c, shape.h, shape.w}, std::move(data));
  return batch;
}

Batch make_augmented_batch(const std::vector<Sample>& split,
                           const std::vector<std::size_t>& indices, const DataShape& shape,
                           const AugmentConfig& cfg, Rng& rng) {
  NAS_CHECK(!indices.empty(), ContractError, "make_batch: empty index list");
  std::vector<double> data;
  data.reserve(indices.size() * shape.c * cfg.crop_size * cfg.crop_size);
  Batch batch;
  for (std::size_t idx : indices) {
    NAS_CHECK(idx < split.size(), ContractError, "make_batch: index out of range");
    const Sample& s = split[idx];
    const std::vector<double> img = augment(s.pixels, shape, cfg, rng);
    data.insert(data.end(), img.begin(), img.end());
    batch.labels.push_back(s.label);
  }
  batch.images = Tensor::from_data({indices.size(), shape.c, cfg.crop_size, cfg.crop_size},
                                   std::move(data));
  return batch;
}

}  // namespace nas
