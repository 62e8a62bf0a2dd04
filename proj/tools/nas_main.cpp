// Command-line driver: search, retrain, plot-data export, gradient checking,
// and synthetic-shard generation.  Every run lives in its own directory under
// the output root and is fully described by the manifest.json written there.
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nas/arch.hpp"
#include "nas/common.hpp"
#include "nas/config.hpp"
#include "nas/data.hpp"
#include "nas/engine.hpp"
#include "nas/gradsweep.hpp"
#include "nas/reward.hpp"
#include "nas/schedules.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nas;

namespace {

constexpr const char* kCodeVersion = "nas-engine 1.0.0";

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string default_output_root() {
  if (const char* env = std::getenv("NAS_OUTPUT_ROOT"); env && *env) return env;
  return "./runs";
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  NAS_CHECK(out.is_open(), DataError, "cannot write " + path.string());
  out << content;
}

json load_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  std::ifstream in(path);
  NAS_CHECK(in.is_open(), DataError, "cannot open manifest: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

void store_manifest(const fs::path& run_dir, const json& manifest) {
  write_text_file(run_dir / "manifest.json", manifest.dump(2) + "\n");
}

// Parameter count and analytic cost of one architecture, computed on a
// scratch parameter store so reporting never touches trained state.
struct SizeRow {
  std::size_t params = 0;
  double macs = 0.0;
  double latency = 0.0;
};

SizeRow size_row(const ArchEncoding& arch, const RunConfig& cfg, const SplitDataset& data) {
  SharedParams scratch(cfg.supernet, /*seed=*/0);
  const NetworkPlan plan = compile(arch, scratch, {data.shape.c, data.shape.h, data.shape.w},
                                   data.n_classes);
  SizeRow row;
  row.params = plan.total_params;
  row.macs = static_cast<double>(plan.total_macs);
  row.latency = analytic_latency(plan, cfg.latency);
  return row;
}

struct SearchArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  bool seed_set = false;
  std::string output_root;
  std::string name;
};

int cmd_search(const SearchArgs& args) {
  ExperimentConfig cfg = load_experiment_config(args.config_path, args.overrides);
  if (args.seed_set) cfg.run.seed = static_cast<std::uint64_t>(args.seed);

  const SplitDataset data = load_experiment_data(cfg.data, cfg.run.seed);
  SearchEngine engine(cfg.run, data);
  const std::vector<RankedArch> ranked = engine.search();

  const fs::path root = args.output_root.empty() ? default_output_root() : args.output_root;
  const std::string name =
      args.name.empty() ? "run-seed" + std::to_string(cfg.run.seed) : args.name;
  const fs::path dir = root / name;
  fs::create_directories(dir);

  engine.write_metrics_csv((dir / "metrics.csv").string());
  engine.write_traces_jsonl((dir / "traces.jsonl").string());
  engine.save_checkpoint((dir / "search.ckpt").string());

  // The manifest snapshots the *synced* run config (derived values like the
  // latency target frozen in), so a re-run from the manifest alone
  // reproduces this run byte-for-byte.
  ExperimentConfig snapshot = cfg;
  snapshot.run = engine.config();
  json manifest;
  manifest["code_version"] = kCodeVersion;
  manifest["seed"] = cfg.run.seed;
  manifest["config"] = flatten_config(snapshot);
  manifest["files"] = {{"metrics", "metrics.csv"},
                       {"traces", "traces.jsonl"},
                       {"checkpoint", "search.ckpt"}};
  json table = json::array();
  const std::size_t shown = std::min<std::size_t>(cfg.run.top_k, ranked.size());
  for (std::size_t i = 0; i < shown; ++i) {
    const RankedArch& r = ranked[i];
    const SizeRow size = size_row(r.arch, engine.config(), data);
    table.push_back({{"rank", r.rank},
                     {"arch", r.arch.encode()},
                     {"val_accuracy", r.val_accuracy},
                     {"latency", r.latency},
                     {"params", size.params},
                     {"macs", size.macs}});
  }
  manifest["ranked"] = std::move(table);
  manifest["retrain_results"] = json::array();
  store_manifest(dir, manifest);

  std::cout << "search complete: " << engine.epoch() << " epochs, "
            << engine.history().size() << " sampled architectures\n";
  std::cout << "run directory: " << dir.string() << "\n\n";
  std::cout << "rank  val_acc  latency      params    arch\n";
  for (const auto& row : manifest["ranked"]) {
    std::printf("%4d  %7.4f  %11.4g  %8zu  %s\n", row["rank"].get<int>(),
                row["val_accuracy"].get<double>(), row["latency"].get<double>(),
                row["params"].get<std::size_t>(), row["arch"].get<std::string>().c_str());
  }
  return 0;
}

struct RetrainArgs {
  std::string run_dir;
  std::size_t rank = 1;
  std::int64_t seed = -1;
  bool seed_set = false;
};

int cmd_retrain(const RetrainArgs& args) {
  const fs::path dir = args.run_dir;
  json manifest = load_manifest(dir);

  ExperimentConfig cfg =
      config_from_flat(manifest["config"].get<std::map<std::string, std::string>>());
  const auto manifest_seed = manifest["seed"].get<std::uint64_t>();
  cfg.run.seed = args.seed_set ? static_cast<std::uint64_t>(args.seed) : manifest_seed;

  const json& ranked = manifest["ranked"];
  NAS_CHECK(args.rank >= 1 && args.rank <= ranked.size(), ConfigError,
            "rank " + std::to_string(args.rank) + " out of range: manifest ranks 1.." +
                std::to_string(ranked.size()));
  const std::string arch_text = ranked[args.rank - 1]["arch"].get<std::string>();

  // The dataset identity (shuffle + splits) always follows the manifest seed;
  // --seed only reseeds the retraining itself.
  const SplitDataset data = load_experiment_data(cfg.data, manifest_seed);
  const RetrainResult result = retrain_fixed(ArchEncoding::decode(arch_text), cfg.run, data);

  json entry;
  entry["rank"] = args.rank;
  entry["arch"] = result.arch.encode();
  entry["seed"] = cfg.run.seed;
  entry["final_test_accuracy"] = result.final_test_accuracy;
  entry["params"] = result.param_count;
  entry["cost"] = result.cost;
  entry["test_curve"] = result.test_curve;
  manifest["retrain_results"].push_back(std::move(entry));
  store_manifest(dir, manifest);

  std::cout << "retrained rank " << args.rank << " (" << arch_text << "), seed "
            << cfg.run.seed << "\n";
  std::cout << "test accuracy by epoch:";
  for (double a : result.test_curve) std::printf(" %.4f", a);
  std::printf("\nfinal test accuracy %.4f, %zu parameters, cost %s\n",
              result.final_test_accuracy, result.param_count, fmt(result.cost).c_str());
  return 0;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  NAS_CHECK(in.is_open(), DataError, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_export_plots(const std::string& run_dir) {
  const fs::path dir = run_dir;
  const json manifest = load_manifest(dir);
  const ExperimentConfig cfg =
      config_from_flat(manifest["config"].get<std::map<std::string, std::string>>());

  // Child learning-rate schedule, one row per epoch from 0 to the schedule
  // horizon inclusive: the warmup ramp then the annealed cosine.
  {
    std::string csv = "epoch,lr\n";
    const auto total = static_cast<std::size_t>(cfg.run.child_schedule.total_epochs);
    for (std::size_t e = 0; e <= total; ++e)
      csv += std::to_string(e) + "," +
             fmt(warmup_then_cosine(cfg.run.child_schedule, static_cast<double>(e))) + "\n";
    write_text_file(dir / "lr_curve.csv", csv);
  }

  const auto rows = read_csv(dir / (manifest["files"]["metrics"].get<std::string>()));
  NAS_CHECK(!rows.empty(), DataError, "metrics file is empty");
  {
    std::string csv = "step,reward,clamp_count\n";
    std::size_t step = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i][1] == "2")
        csv += std::to_string(step++) + "," + rows[i][5] + "," + rows[i][7] + "\n";
    write_text_file(dir / "reward_vs_step.csv", csv);
  }
  {
    std::string csv = "epoch,val_acc\n";
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i][1] == "1") csv += rows[i][0] + "," + rows[i][3] + "\n";
    write_text_file(dir / "accuracy_vs_epoch.csv", csv);
  }

  // Latency histogram over every sampled architecture in the trace log.
  {
    std::ifstream in(dir / (manifest["files"]["traces"].get<std::string>()));
    NAS_CHECK(in.is_open(), DataError, "cannot open traces");
    std::vector<double> latencies;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      latencies.push_back(json::parse(line)["latency"].get<double>());
    }
    NAS_CHECK(!latencies.empty(), DataError, "trace log is empty");
    const auto [lo_it, hi_it] = std::minmax_element(latencies.begin(), latencies.end());
    const double lo = *lo_it, hi = *hi_it;
    constexpr std::size_t kBins = 20;
    std::vector<std::size_t> counts(kBins, 0);
    const double width = (hi - lo) / kBins;
    for (double v : latencies) {
      std::size_t b = width > 0 ? static_cast<std::size_t>((v - lo) / width) : 0;
      counts[std::min(b, kBins - 1)]++;
    }
    std::string csv = "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < kBins; ++b)
      csv += fmt(lo + width * static_cast<double>(b)) + "," +
             fmt(b + 1 == kBins ? hi : lo + width * static_cast<double>(b + 1)) + "," +
             std::to_string(counts[b]) + "\n";
    write_text_file(dir / "latency_histogram.csv", csv);
  }

  std::cout << "wrote lr_curve.csv, reward_vs_step.csv, accuracy_vs_epoch.csv, "
               "latency_histogram.csv to "
            << dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(std::size_t seeds) {
  const std::vector<GradSweepItem> items = run_gradient_sweep(seeds);
  std::size_t failures = 0;
  for (const GradSweepItem& item : items) {
    std::printf("%-22s max_rel_err %.3e  tolerance %.0e  trials %zu  %s\n",
                item.name.c_str(), item.max_rel_err, item.tolerance, item.trials,
                item.ok() ? "ok" : "FAIL");
    if (!item.ok()) ++failures;
  }
  if (failures) {
    std::cout << failures << " of " << items.size() << " gradient checks failed\n";
    return 4;
  }
  std::cout << "all " << items.size() << " gradient checks passed\n";
  return 0;
}

struct SynthArgs {
  std::string out_path;
  std::string output_root;
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t image_size = 32;
  std::uint64_t seed = 1;
};

int cmd_synth_data(const SynthArgs& args) {
  fs::path out = args.out_path;
  if (out.empty()) {
    const fs::path root =
        args.output_root.empty() ? default_output_root() : args.output_root;
    fs::create_directories(root);
    out = root / ("synth_" + std::to_string(args.classes) + "x" +
                  std::to_string(args.per_class) + "_" + std::to_string(args.image_size) +
                  ".shard");
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  const std::vector<Sample> samples =
      synth_identity_samples(args.classes, args.per_class, args.image_size, args.seed);
  save_shard(out.string(), samples, {3, args.image_size, args.image_size}, args.classes);
  std::cout << "wrote " << samples.size() << " samples (" << args.classes << " classes, "
            << args.image_size << "x" << args.image_size << ") to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural architecture search over separable-conv cells: alternating "
               "weight-sharing search, latency-aware reward, from-scratch retraining."};
  app.require_subcommand(1);

  SearchArgs search_args;
  CLI::App* search = app.add_subcommand("search", "Run the architecture search");
  search->add_option("--config", search_args.config_path, "Experiment config file")
      ->required();
  search->add_option("--override", search_args.overrides,
                     "Config override section.key=value (repeatable)");
  CLI::Option* search_seed =
      search->add_option("--seed", search_args.seed, "Replace search.seed");
  search->add_option("--output", search_args.output_root,
                     "Output root (default $NAS_OUTPUT_ROOT, else ./runs)");
  search->add_option("--name", search_args.name,
                     "Run directory name (default run-seed<seed>)");

  RetrainArgs retrain_args;
  CLI::App* retrain =
      app.add_subcommand("retrain", "Retrain a ranked architecture from scratch");
  retrain->add_option("--run", retrain_args.run_dir, "Run directory with manifest.json")
      ->required();
  retrain->add_option("--rank", retrain_args.rank, "1-based rank in the manifest table");
  CLI::Option* retrain_seed =
      retrain->add_option("--seed", retrain_args.seed, "Reseed the retraining");

  std::string plots_run_dir;
  CLI::App* plots =
      app.add_subcommand("export-plots", "Write plot-ready CSVs for a finished run");
  plots->add_option("--run", plots_run_dir, "Run directory with manifest.json")->required();

  std::size_t gradcheck_seeds = 20;
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  gradcheck->add_option("--seeds", gradcheck_seeds, "Random trials per item (default 20)");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth-data", "Write a synthetic dataset shard");
  synth->add_option("--out", synth_args.out_path, "Shard path (default under output root)");
  synth->add_option("--output", synth_args.output_root,
                    "Output root (default $NAS_OUTPUT_ROOT, else ./runs)");
  synth->add_option("--classes", synth_args.classes, "Number of classes");
  synth->add_option("--per-class", synth_args.per_class, "Samples per class");
  synth->add_option("--image-size", synth_args.image_size, "Square image size");
  synth->add_option("--seed", synth_args.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;  // bad usage is a configuration error
  }

  search_args.seed_set = search_seed->count() > 0;
  retrain_args.seed_set = retrain_seed->count() > 0;

  try {
    if (*search) return cmd_search(search_args);
    if (*retrain) return cmd_retrain(retrain_args);
    if (*plots) return cmd_export_plots(plots_run_dir);
    if (*gradcheck) return cmd_gradcheck(gradcheck_seeds);
    if (*synth) return cmd_synth_data(synth_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
