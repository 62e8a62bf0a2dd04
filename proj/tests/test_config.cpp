#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nas/common.hpp"
#include "nas/config.hpp"

using namespace nas;

namespace {

const char* kFullText = R"(# experiment knobs
[supernet]
nodes = 3
stem_channels = 8
bn_momentum = 0.8
dropblock_size = 2
dropblock_keep = 0.85

[controller]
hidden_size = 64     # comment after value
embed_size = 16
temperature = 1.5
averaged_reward = true

[schedule]
lr_min = 0.001
lr_max = 0.05
warmup_epochs = 5
total_epochs = 30
restart_periods = 10, 20, 40
restart_decay = 0.5

[latency]
mode = wallclock
target = 123.5
q = -0.05

[loss]
kind = arcface
margin_m = 0.3
margin_s = 12

[augment]
enabled = false
flip_prob = 0
pad_pixels = 2
cutout_size = 0

[search]
q_samples = 4
steps = 2
epochs = 7
batch_size = 32
eval_batch = 16
top_k = 2
seed = 42
rank_by_mean = true
child_momentum = 0.8
child_weight_decay = 0.0001

[retrain]
epochs = 11

[data]
source = synth
synth_classes = 4
synth_per_class = 50
synth_image_size = 16
)";

std::string temp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() /
             (std::string("nas_config_test_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("every key in the full sample lands on its field") {
  const ExperimentConfig cfg = parse_experiment_config(kFullText);

  CHECK(cfg.run.supernet.num_nodes == 3);
  CHECK(cfg.run.supernet.stem_channels == 8);
  CHECK(cfg.run.supernet.bn_momentum == doctest::Approx(0.8));
  CHECK(cfg.run.supernet.dropblock_size == 2);
  CHECK(cfg.run.supernet.dropblock_keep == doctest::Approx(0.85));

  CHECK(cfg.run.controller.hidden_size == 64);
  CHECK(cfg.run.controller.embed_size == 16);
  CHECK(cfg.run.controller.temperature == doctest::Approx(1.5));
  CHECK(cfg.run.controller.averaged_reward);

  CHECK(cfg.run.child_schedule.lr_min == doctest::Approx(0.001));
  CHECK(cfg.run.child_schedule.lr_max == doctest::Approx(0.05));
  CHECK(cfg.run.child_schedule.warmup_epochs == doctest::Approx(5.0));
  CHECK(cfg.run.child_schedule.total_epochs == doctest::Approx(30.0));
  REQUIRE(cfg.run.child_schedule.restart_periods.size() == 3);
  CHECK(cfg.run.child_schedule.restart_periods[1] == doctest::Approx(20.0));
  CHECK(cfg.run.child_schedule.restart_decay == doctest::Approx(0.5));

  CHECK(cfg.run.latency.mode == LatencyMode::kWallclock);
  CHECK(cfg.run.latency.target == doctest::Approx(123.5));
  CHECK(cfg.run.latency.q == doctest::Approx(-0.05));

  CHECK(cfg.run.loss == LossKind::kArcFace);
  CHECK(cfg.run.margin.m == doctest::Approx(0.3));
  CHECK(cfg.run.margin.s == doctest::Approx(12.0));

  CHECK_FALSE(cfg.run.augment.enabled);
  CHECK(cfg.run.augment.flip_prob == doctest::Approx(0.0));
  CHECK(cfg.run.augment.pad_pixels == 2);
  CHECK(cfg.run.augment.cutout_size == 0);

  CHECK(cfg.run.q_samples == 4);
  CHECK(cfg.run.controller_steps == 2);
  CHECK(cfg.run.search_epochs == 7);
  CHECK(cfg.run.batch_size == 32);
  CHECK(cfg.run.eval_batch == 16);
  CHECK(cfg.run.top_k == 2);
  CHECK(cfg.run.seed == 42);
  CHECK(cfg.run.rank_by_mean);
  CHECK(cfg.run.child_momentum == doctest::Approx(0.8));
  CHECK(cfg.run.child_weight_decay == doctest::Approx(0.0001));
  CHECK(cfg.run.retrain_epochs == 11);

  CHECK(cfg.data.source == "synth");
  CHECK(cfg.data.synth_classes == 4);
  CHECK(cfg.data.synth_per_class == 50);
  CHECK(cfg.data.synth_image_size == 16);
}

TEST_CASE("missing required fields are named") {
  CHECK_THROWS_WITH_AS(
      parse_experiment_config("[search]\nseed = 1\n\n[data]\nsource = synth\n"),
      "missing required field: search.epochs", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config("[search]\nepochs = 2\n\n[data]\nsource = synth\n"),
      "missing required field: search.seed", ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("[search]\nepochs = 2\nseed = 1\n"),
                       "missing required field: data.source", ConfigError);
}

TEST_CASE("unknown keys, duplicates, and malformed lines are rejected") {
  const std::string base = "[search]\nepochs = 2\nseed = 1\n[data]\nsource = synth\n";

  CHECK_THROWS_WITH_AS(parse_experiment_config(base + "[search]\nbogus = 1\n"),
                       "unknown config key: search.bogus", ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config(base + "[search]\nepochs = 3\n"),
                       "duplicate config key: search.epochs", ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("[search]\nepochs\n"),
                       "config line 2: expected key = value", ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("epochs = 2\n"),
                       "config line 1: key \"epochs\" appears before any [section]",
                       ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[search\nepochs = 2\n"), ConfigError);
}

TEST_CASE("value errors name the offending key") {
  const std::string base = "[search]\nepochs = 2\nseed = 1\n[data]\nsource = synth\n";

  CHECK_THROWS_WITH_AS(
      parse_experiment_config(base + "[supernet]\nnodes = three\n"),
      "supernet.nodes: expected a non-negative integer, got \"three\"", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(base + "[schedule]\nlr_max = fast\n"),
      "schedule.lr_max: expected a number, got \"fast\"", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(base + "[augment]\nenabled = yes\n"),
      "augment.enabled: expected true or false, got \"yes\"", ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(base + "[latency]\nmode = magic\n"),
      "latency.mode: expected analytic or wallclock, got \"magic\"", ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(base + "[loss]\nkind = nonsense\n"),
                  ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config("[search]\nepochs = 2\nseed = 1\n[data]\nsource = files\n"),
      "data.source: expected synth or shards, got \"files\"", ConfigError);
}

TEST_CASE("overrides win over file values and satisfy requiredness") {
  const ExperimentConfig cfg = parse_experiment_config(
      "[search]\nepochs = 2\n",
      {"search.seed=7", "data.source=synth", "search.epochs=9"});
  CHECK(cfg.run.search_epochs == 9);
  CHECK(cfg.run.seed == 7);

  CHECK_THROWS_WITH_AS(parse_experiment_config("", {"search.epochs"}),
                       "override \"search.epochs\": expected section.key=value",
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("", {"search.what=1"}),
                       "unknown config key: search.what", ConfigError);

  ExperimentConfig edited = cfg;
  apply_override(edited, "search.top_k=1");
  CHECK(edited.run.top_k == 1);
}

TEST_CASE("flatten and from-flat invert each other") {
  const ExperimentConfig cfg = parse_experiment_config(kFullText);
  const auto flat = flatten_config(cfg);

  CHECK(flat.at("search.epochs") == "7");
  CHECK(flat.at("search.seed") == "42");
  CHECK(flat.at("latency.mode") == "wallclock");
  CHECK(flat.at("loss.kind") == "arcface");
  CHECK(flat.at("schedule.restart_periods") == "10,20,40");
  CHECK(flat.at("controller.averaged_reward") == "true");
  CHECK(flat.at("data.shard_dir").empty());

  const ExperimentConfig back = config_from_flat(flat);
  CHECK(flatten_config(back) == flat);

  // Defaults flatten too: every registered key is present.
  ExperimentConfig defaults;
  const auto flat_defaults = flatten_config(defaults);
  CHECK(flat_defaults.size() == flat.size());
  CHECK(flat_defaults.count("supernet.nodes") == 1);
}

TEST_CASE("load_experiment_config reads files and reports missing ones") {
  const std::string dir = temp_dir("file");
  const std::string path = dir + "/exp.ini";
  {
    std::ofstream out(path);
    out << kFullText;
  }
  const ExperimentConfig cfg = load_experiment_config(path, {"search.seed=99"});
  CHECK(cfg.run.seed == 99);
  CHECK(cfg.run.search_epochs == 7);

  CHECK_THROWS_AS(load_experiment_config(dir + "/missing.ini"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic data loading honors the size knobs") {
  DataConfig dc;
  dc.source = "synth";
  dc.synth_classes = 4;
  dc.synth_per_class = 30;
  dc.synth_image_size = 16;
  const SplitDataset data = load_experiment_data(dc, 5);
  CHECK(data.n_classes == 4);
  CHECK(data.shape == DataShape{3, 16, 16});
  CHECK(data.train.size() + data.validation.size() + data.test.size() == 120);
  CHECK(data.train.size() == 96);  // fixed 8:1:1 split

  // Same knobs and seed give the same bytes.
  const SplitDataset again = load_experiment_data(dc, 5);
  REQUIRE(again.train.size() == data.train.size());
  CHECK(again.train[0].pixels == data.train[0].pixels);
  CHECK(again.train[0].label == data.train[0].label);
}

TEST_CASE("shard data loading scans the directory and validates it") {
  const std::string dir = temp_dir("shards");
  const DataShape shape{1, 4, 4};
  std::vector<Sample> samples;
  for (int i = 0; i < 40; ++i) {
    Sample s;
    s.pixels.assign(shape.numel(), 0.1 * (i % 7));
    s.label = i % 2;
    samples.push_back(s);
  }
  save_shard(dir + "/b.shard", samples, shape, 2);
  save_shard(dir + "/a.shard", samples, shape, 2);
  {
    std::ofstream out(dir + "/notes.txt");
    out << "ignored\n";
  }

  DataConfig dc;
  dc.source = "shards";
  dc.shard_dir = dir;
  dc.train_ratio = 0.5;
  dc.val_ratio = 0.25;
  const SplitDataset data = load_experiment_data(dc, 3);
  CHECK(data.n_classes == 2);
  CHECK(data.shape == shape);
  CHECK(data.train.size() == 40);  // both shards, ratio 0.5
  CHECK(data.validation.size() == 20);
  CHECK(data.test.size() == 20);

  dc.shard_dir = dir + "/nope";
  CHECK_THROWS_AS(load_experiment_data(dc, 3), DataError);

  const std::string empty = temp_dir("empty");
  dc.shard_dir = empty;
  CHECK_THROWS_WITH_AS(load_experiment_data(dc, 3), ("no .shard files in " + empty).c_str(),
                       DataError);

  dc.shard_dir.clear();
  CHECK_THROWS_WITH_AS(load_experiment_data(dc, 3),
                       "data.shard_dir: required when source = shards", ConfigError);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(empty);
}

TEST_CASE("a flattened config reconstructs the run it came from") {
  // The manifest path: parse -> flatten -> from_flat must preserve every
  // value that shapes a run, including overrides applied along the way.
  ExperimentConfig cfg = parse_experiment_config(
      kFullText, {"search.batch_size=16", "schedule.restart_periods=3.5,7"});
  const auto flat = flatten_config(cfg);
  const ExperimentConfig back = config_from_flat(flat);

  CHECK(back.run.batch_size == 16);
  REQUIRE(back.run.child_schedule.restart_periods.size() == 2);
  CHECK(back.run.child_schedule.restart_periods[0] == doctest::Approx(3.5));
  CHECK(back.run.child_schedule.restart_periods[1] == doctest::Approx(7.0));
  CHECK(back.run.seed == cfg.run.seed);
  CHECK(back.run.loss == cfg.run.loss);
  CHECK(back.data.synth_per_class == cfg.data.synth_per_class);
}
