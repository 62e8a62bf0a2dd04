#include "nas/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "nas/common.hpp"

namespace nas {

namespace {

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  NAS_CHECK(res.ec == std::errc() && res.ptr == v.data() + v.size(), ConfigError,
            key + ": expected a non-negative integer, got \"" + v + "\"");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  NAS_CHECK(res.ec == std::errc() && res.ptr == v.data() + v.size(), ConfigError,
            key + ": expected a non-negative integer, got \"" + v + "\"");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  NAS_CHECK(!v.empty(), ConfigError, key + ": expected a number, got an empty value");
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  NAS_CHECK(end == v.c_str() + v.size(), ConfigError,
            key + ": expected a number, got \"" + v + "\"");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got \"" + v + "\"");
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(key, item));
  }
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out += ',';
    out += format_double(v[i]);
  }
  return out;
}

struct Field {
  const char* key;
  bool required;
  std::function<void(ExperimentConfig&, const std::string&)> set;  // value text
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& field_registry() {
  using C = ExperimentConfig;
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    auto size_field = [&](const char* key, auto member, bool required = false) {
      f.push_back({key, required,
                   [key, member](C& c, const std::string& v) { member(c) = to_size(key, v); },
                   [member](const C& c) { return std::to_string(member(const_cast<C&>(c))); }});
    };
    auto double_field = [&](const char* key, auto member) {
      f.push_back({key, false,
                   [key, member](C& c, const std::string& v) { member(c) = to_double(key, v); },
                   [member](const C& c) { return format_double(member(const_cast<C&>(c))); }});
    };
    auto bool_field = [&](const char* key, auto member) {
      f.push_back({key, false,
                   [key, member](C& c, const std::string& v) { member(c) = to_bool(key, v); },
                   [member](const C& c) {
                     return member(const_cast<C&>(c)) ? std::string("true") : std::string("false");
                   }});
    };

    size_field("supernet.nodes", [](C& c) -> std::size_t& { return c.run.supernet.num_nodes; });
    size_field("supernet.stem_channels",
               [](C& c) -> std::size_t& { return c.run.supernet.stem_channels; });
    double_field("supernet.bn_momentum", [](C& c) -> double& { return c.run.supernet.bn_momentum; });
    double_field("supernet.bn_epsilon", [](C& c) -> double& { return c.run.supernet.bn_epsilon; });
    size_field("supernet.dropblock_size",
               [](C& c) -> std::size_t& { return c.run.supernet.dropblock_size; });
    double_field("supernet.dropblock_keep",
                 [](C& c) -> double& { return c.run.supernet.dropblock_keep; });

    size_field("controller.hidden_size",
               [](C& c) -> std::size_t& { return c.run.controller.hidden_size; });
    size_field("controller.embed_size",
               [](C& c) -> std::size_t& { return c.run.controller.embed_size; });
    double_field("controller.temperature",
                 [](C& c) -> double& { return c.run.controller.temperature; });
    double_field("controller.entropy_weight",
                 [](C& c) -> double& { return c.run.controller.entropy_weight; });
    double_field("controller.baseline_decay",
                 [](C& c) -> double& { return c.run.controller.baseline_decay; });
    bool_field("controller.averaged_reward",
               [](C& c) -> bool& { return c.run.controller.averaged_reward; });

    double_field("schedule.lr_min", [](C& c) -> double& { return c.run.child_schedule.lr_min; });
    double_field("schedule.lr_max", [](C& c) -> double& { return c.run.child_schedule.lr_max; });
    double_field("schedule.warmup_epochs",
                 [](C& c) -> double& { return c.run.child_schedule.warmup_epochs; });
    double_field("schedule.total_epochs",
                 [](C& c) -> double& { return c.run.child_schedule.total_epochs; });
    f.push_back({"schedule.restart_periods", false,
                 [](C& c, const std::string& v) {
                   c.run.child_schedule.restart_periods =
                       to_double_list("schedule.restart_periods", v);
                 },
                 [](const C& c) { return join_doubles(c.run.child_schedule.restart_periods); }});
    double_field("schedule.restart_decay",
                 [](C& c) -> double& { return c.run.child_schedule.restart_decay; });

    f.push_back({"latency.mode", false,
                 [](C& c, const std::string& v) {
                   if (v == "analytic")
                     c.run.latency.mode = LatencyMode::kAnalytic;
                   else if (v == "wallclock")
                     c.run.latency.mode = LatencyMode::kWallclock;
                   else
                     throw ConfigError("latency.mode: expected analytic or wallclock, got \"" +
                                       v + "\"");
                 },
                 [](const C& c) {
                   return std::string(c.run.latency.mode == LatencyMode::kAnalytic ? "analytic"
                                                                                   : "wallclock");
                 }});
    double_field("latency.target", [](C& c) -> double& { return c.run.latency.target; });
    double_field("latency.q", [](C& c) -> double& { return c.run.latency.q; });
    f.push_back({"latency.cost_table", false,
                 [](C& c, const std::string& v) {
                   c.cost_table_path = v;
                   c.run.latency.cost_table = v.empty() ? std::map<std::string, CostCoeffs>{}
                                                        : load_cost_table(v);
                 },
                 [](const C& c) { return c.cost_table_path; }});

    f.push_back({"loss.kind", false,
                 [](C& c, const std::string& v) { c.run.loss = loss_kind_from_key(v); },
                 [](const C& c) { return std::string(loss_key(c.run.loss)); }});
    double_field("loss.margin_m", [](C& c) -> double& { return c.run.margin.m; });
    double_field("loss.margin_s", [](C& c) -> double& { return c.run.margin.s; });

    bool_field("augment.enabled", [](C& c) -> bool& { return c.run.augment.enabled; });
    double_field("augment.flip_prob", [](C& c) -> double& { return c.run.augment.flip_prob; });
    size_field("augment.pad_pixels",
               [](C& c) -> std::size_t& { return c.run.augment.pad_pixels; });
    size_field("augment.cutout_size",
               [](C& c) -> std::size_t& { return c.run.augment.cutout_size; });

    size_field("search.q_samples", [](C& c) -> std::size_t& { return c.run.q_samples; });
    size_field("search.steps", [](C& c) -> std::size_t& { return c.run.controller_steps; });
    size_field("search.epochs", [](C& c) -> std::size_t& { return c.run.search_epochs; },
               /*required=*/true);
    size_field("search.batch_size", [](C& c) -> std::size_t& { return c.run.batch_size; });
    size_field("search.eval_batch", [](C& c) -> std::size_t& { return c.run.eval_batch; });
    size_field("search.top_k", [](C& c) -> std::size_t& { return c.run.top_k; });
    f.push_back({"search.seed", /*required=*/true,
                 [](C& c, const std::string& v) { c.run.seed = to_u64("search.seed", v); },
                 [](const C& c) { return std::to_string(c.run.seed); }});
    bool_field("search.rank_by_mean", [](C& c) -> bool& { return c.run.rank_by_mean; });
    double_field("search.child_momentum", [](C& c) -> double& { return c.run.child_momentum; });
    double_field("search.child_weight_decay",
                 [](C& c) -> double& { return c.run.child_weight_decay; });

    size_field("retrain.epochs", [](C& c) -> std::size_t& { return c.run.retrain_epochs; });

    f.push_back({"data.source", /*required=*/true,
                 [](C& c, const std::string& v) {
                   NAS_CHECK(v == "synth" || v == "shards", ConfigError,
                             "data.source: expected synth or shards, got \"" + v + "\"");
                   c.data.source = v;
                 },
                 [](const C& c) { return c.data.source; }});
    size_field("data.synth_classes", [](C& c) -> std::size_t& { return c.data.synth_classes; });
    size_field("data.synth_per_class",
               [](C& c) -> std::size_t& { return c.data.synth_per_class; });
    size_field("data.synth_image_size",
               [](C& c) -> std::size_t& { return c.data.synth_image_size; });
    f.push_back({"data.shard_dir", false,
                 [](C& c, const std::string& v) { c.data.shard_dir = v; },
                 [](const C& c) { return c.data.shard_dir; }});
    double_field("data.train_ratio", [](C& c) -> double& { return c.data.train_ratio; });
    double_field("data.val_ratio", [](C& c) -> double& { return c.data.val_ratio; });
    return f;
  }();
  return fields;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : field_registry())
    if (key == f.key) return f;
  throw ConfigError("unknown config key: " + key);
}

void check_required(const std::set<std::string>& seen) {
  for (const Field& f : field_registry())
    if (f.required && seen.count(f.key) == 0)
      throw ConfigError("missing required field: " + std::string(f.key));
}

void parse_into(ExperimentConfig& cfg, const std::string& text, std::set<std::string>& seen) {
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      NAS_CHECK(line.back() == ']' && line.size() > 2, ConfigError,
                "config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    NAS_CHECK(eq != std::string::npos, ConfigError,
              "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    NAS_CHECK(!name.empty(), ConfigError,
              "config line " + std::to_string(lineno) + ": empty key");
    NAS_CHECK(!section.empty(), ConfigError,
              "config line " + std::to_string(lineno) + ": key \"" + name +
                  "\" appears before any [section]");
    const std::string key = section + "." + name;
    NAS_CHECK(seen.insert(key).second, ConfigError, "duplicate config key: " + key);
    find_field(key).set(cfg, value);
  }
}

}  // namespace

void DataConfig::validate() const {
  NAS_CHECK(source == "synth" || source == "shards", ConfigError,
            "data.source: expected synth or shards, got \"" + source + "\"");
  if (source == "synth") {
    NAS_CHECK(synth_classes > 0 && synth_per_class > 0 && synth_image_size > 0, ConfigError,
              "data.synth_*: synthetic dataset sizes must be positive");
  } else {
    NAS_CHECK(!shard_dir.empty(), ConfigError, "data.shard_dir: required when source = shards");
    NAS_CHECK(train_ratio > 0.0 && val_ratio > 0.0 && train_ratio + val_ratio < 1.0,
              ConfigError, "data.train_ratio/val_ratio: must be positive and sum below 1");
  }
}

ExperimentConfig parse_experiment_config(const std::string& text,
                                         const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  parse_into(cfg, text, seen);
  for (const std::string& assignment : overrides) {
    const std::size_t eq = assignment.find('=');
    NAS_CHECK(eq != std::string::npos, ConfigError,
              "override \"" + assignment + "\": expected section.key=value");
    const std::string key = trim(assignment.substr(0, eq));
    find_field(key).set(cfg, trim(assignment.substr(eq + 1)));
    seen.insert(key);
  }
  check_required(seen);
  cfg.data.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  NAS_CHECK(in.is_open(), DataError, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), overrides);
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  NAS_CHECK(eq != std::string::npos, ConfigError,
            "override \"" + assignment + "\": expected section.key=value");
  find_field(trim(assignment.substr(0, eq))).set(cfg, trim(assignment.substr(eq + 1)));
}

std::map<std::string, std::string> flatten_config(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> flat;
  for (const Field& f : field_registry()) flat[f.key] = f.get(cfg);
  return flat;
}

ExperimentConfig config_from_flat(const std::map<std::string, std::string>& flat) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : flat) find_field(key).set(cfg, value);
  cfg.data.validate();
  return cfg;
}

SplitDataset load_experiment_data(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.source == "synth")
    return synth_identity_dataset(cfg.synth_classes, cfg.synth_per_class, cfg.synth_image_size,
                                  seed);
  std::vector<std::string> paths;
  try {
    for (const auto& entry : std::filesystem::directory_iterator(cfg.shard_dir))
      if (entry.path().extension() == ".shard") paths.push_back(entry.path().string());
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError("cannot list shard directory " + cfg.shard_dir + ": " + e.what());
  }
  std::sort(paths.begin(), paths.end());
  NAS_CHECK(!paths.empty(), DataError, "no .shard files in " + cfg.shard_dir);
  return load_dataset(paths, cfg.train_ratio, cfg.val_ratio, seed);
}

}  // namespace nas
