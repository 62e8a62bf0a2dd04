#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nas/data.hpp"
#include "nas/engine.hpp"

namespace nas {

// Dataset selection: the built-in synthetic set or a directory of raw
// shards.  The synthetic path always splits 8:1:1; shard loading uses the
// configured ratios.
struct DataConfig {
  std::string source = "synth";  // "synth" | "shards"
  std::size_t synth_classes = 10;
  std::size_t synth_per_class = 200;
  std::size_t synth_image_size = 32;
  std::string shard_dir;
  double train_ratio = 0.8;
  double val_ratio = 0.1;

  void validate() const;
};

struct ExperimentConfig {
  RunConfig run;
  DataConfig data;
  std::string cost_table_path;  // empty: unit costs (latency == MACs)
};

// Declarative key-value text with sections:
//   [search]
//   epochs = 30      # comment
// Unknown keys, duplicates, and malformed lines raise ConfigError naming the
// offender.  Required fields: search.epochs, search.seed, data.source.
// `overrides` are "section.key=value" assignments applied after the file;
// they win and also satisfy requiredness.
ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});

// One "section.key=value" assignment against an existing config.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Canonical flat view, every knob as "section.key" -> value text.  The
// manifest stores this map, so a run is reproducible from the manifest
// alone; config_from_flat inverts it.
std::map<std::string, std::string> flatten_config(const ExperimentConfig& cfg);
ExperimentConfig config_from_flat(const std::map<std::string, std::string>& flat);

SplitDataset load_experiment_data(const DataConfig& cfg, std::uint64_t seed);

}  // namespace nas
