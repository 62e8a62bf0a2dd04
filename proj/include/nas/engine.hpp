#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nas/arch.hpp"
#include "nas/controller.hpp"
#include "nas/data.hpp"
#include "nas/losses.hpp"
#include "nas/reward.hpp"
#include "nas/schedules.hpp"

namespace nas {

struct RunConfig {
  SupernetConfig supernet;        // input geometry is synced to the dataset
  ControllerConfig controller;    // node count must match the supernet
  ScheduleConfig child_schedule;  // warmup + modified cosine decay
  LatencyModel latency;           // target <= 0: derived from the reference arch
  AugmentConfig augment;          // crop size must equal the image size
  LossKind loss = LossKind::kCrossEntropy;
  MarginConfig margin;            // ignored by plain cross-entropy

  std::size_t q_samples = 8;          // architectures per controller step
  std::size_t controller_steps = 30;  // controller steps per epoch
  std::size_t search_epochs = 100;
  std::size_t retrain_epochs = 150;
  std::size_t batch_size = 128;
  std::size_t eval_batch = 0;  // validation minibatch size; 0 = batch_size
  std::size_t top_k = 3;
  std::uint64_t seed = 1;
  double child_momentum = 0.9;
  double child_weight_decay = 1e-4;
  bool rank_by_mean = false;  // rank on mean accuracy instead of best seen

  void validate() const;
};

// One controller sample evaluated during the search.
struct SampleRecord {
  std::size_t epoch = 0, step = 0;
  std::string arch;
  double log_prob = 0.0, entropy = 0.0;
  double accuracy = 0.0, latency = 0.0, reward = 0.0;
  bool clamped = false;
};

struct RankedArch {
  ArchEncoding arch;
  double val_accuracy = 0.0;
  double latency = 0.0;
  int rank = 0;                // 1-based
  std::size_t first_seen = 0;  // index of the earliest trace sampling it
};

// One line of the run metrics: phase 1 rows carry the epoch's mean child
// loss plus an argmax-architecture probe; phase 2 rows carry per-step means
// over the sampled architectures.
struct MetricsRow {
  std::size_t epoch = 0;
  int phase = 1;
  double loss = 0.0, val_acc = 0.0, latency = 0.0, reward = 0.0, lr = 0.0;
  std::size_t clamp_count = 0;
};

// Per-epoch proof that the alternation never leaks: the controller is
// untouched by phase 1 and the shared weights are untouched by phase 2.
struct PhaseAudit {
  std::size_t epoch = 0;
  std::uint64_t controller_before = 0, controller_after = 0;
  std::uint64_t shared_before = 0, shared_after = 0;
};

// Deduplicates by encoding (keeping the best or mean accuracy), sorts by
// accuracy descending, breaks ties by first-seen order.
std::vector<RankedArch> rank_architectures(const std::vector<SampleRecord>& history,
                                           bool by_mean = false);

struct RetrainResult {
  ArchEncoding arch;
  std::vector<double> test_curve;  // whole-test accuracy, one entry per epoch
  double final_test_accuracy = 0.0;
  std::size_t param_count = 0;
  double cost = 0.0;  // analytic latency of the trained network
};

// Trains one fixed architecture from scratch on train+validation and
// evaluates the whole test set every epoch.
RetrainResult retrain_fixed(const ArchEncoding& arch, const RunConfig& cfg,
                            const SplitDataset& data);

class SearchEngine {
 public:
  SearchEngine(RunConfig cfg, const SplitDataset& data);

  void run_epoch();
  std::vector<RankedArch> search();  // runs the remaining epochs, then ranks

  std::size_t epoch() const { return epoch_; }
  const RunConfig& config() const { return cfg_; }
  const std::vector<SampleRecord>& history() const { return history_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const std::vector<PhaseAudit>& audits() const { return audits_; }
  SharedParams& shared() { return shared_; }
  Controller& controller() { return controller_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  void write_metrics_csv(const std::string& path) const;
  void write_traces_jsonl(const std::string& path) const;

  // Test hook: replaces minibatch evaluation with a fixed accuracy function
  // (rigged environments for controller-convergence tests).
  std::function<double(const ArchEncoding&)> accuracy_override;

 private:
  void train_children_one_epoch(double lr);
  void train_controller_one_epoch(double lr);
  double eval_on_validation(const NetworkPlan& plan, std::size_t begin, std::size_t count,
                            double* mean_loss);

  RunConfig cfg_;
  const SplitDataset& data_;
  std::size_t eval_batch_ = 0;  // resolved size
  SharedParams shared_;
  Controller controller_;
  OptimState child_opt_;
  std::size_t epoch_ = 0;
  std::size_t val_cursor_ = 0;
  std::vector<SampleRecord> history_;
  std::vector<MetricsRow> metrics_;
  std::vector<PhaseAudit> audits_;
};

}  // namespace nas
