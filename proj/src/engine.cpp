#include "nas/engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <utility>

#include "json.hpp"
#include "nas/common.hpp"
#include "nas/serialize.hpp"

namespace nas {

namespace {

// Seed salt separating retraining streams from search streams.
constexpr std::uint64_t kRetrainSalt = 0x7265747261696eULL;

std::vector<std::size_t> to_labels(const std::vector<int>& labels) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(static_cast<std::size_t>(l));
  return out;
}

std::size_t count_hits(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = j;
    hits += best == static_cast<std::size_t>(labels[i]);
  }
  return hits;
}

// The sampled network's trainable tensors, keyed for the optimizer.  Only
// these take the momentum step: branches outside the sampled architecture
// must neither decay nor accumulate velocity, and restricting the step to
// the plan keeps the stepped set reconstructible from a checkpoint, which
// exact resume depends on.
std::map<std::string, Tensor> plan_parameters(const NetworkPlan& plan,
                                              const SharedParams& shared) {
  std::map<std::string, Tensor> out;
  for (const std::string& key : plan.param_keys) out.emplace(key, shared.param(key));
  return out;
}

// Shortest round-trip decimal form: deterministic and compact.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Fits the run configuration to the dataset: the supernet consumes images
// exactly as stored (augmentation jitters but never resizes), and the
// controller must describe the same node count as the supernet.
void sync_to_data(RunConfig& cfg, const SplitDataset& data) {
  NAS_CHECK(data.shape.h == data.shape.w, ConfigError, "images must be square");
  cfg.supernet.in_channels = data.shape.c;
  cfg.supernet.input_size = data.shape.h;
  cfg.supernet.num_classes = data.n_classes;
  cfg.controller.num_nodes = cfg.supernet.num_nodes;
  cfg.augment.crop_size = data.shape.h;
  if (cfg.loss != LossKind::kCrossEntropy && cfg.margin.m == 0.0 && cfg.margin.s == 1.0)
    cfg.margin = default_margin_config(cfg.loss);
}

// When no target is configured, one is derived from the cost of the
// controller's untrained argmax network so rewards start on a natural scale.
void resolve_target(RunConfig& cfg, const Controller& controller, const SharedParams& shared) {
  if (cfg.latency.target > 0.0) return;
  const ArchEncoding reference = controller.argmax_decode();
  const NetworkPlan plan =
      compile(reference, shared,
              {cfg.supernet.in_channels, cfg.supernet.input_size, cfg.supernet.input_size},
              cfg.supernet.num_classes);
  cfg.latency.target = analytic_latency(plan, cfg.latency);
}

}  // namespace

void RunConfig::validate() const {
  supernet.validate();
  controller.validate();
  latency.validate();
  NAS_CHECK(controller.num_nodes == supernet.num_nodes, ConfigError,
            "controller and supernet disagree on the node count");
  NAS_CHECK(q_samples >= 1, ConfigError, "q_samples must be positive");
  NAS_CHECK(controller_steps >= 1, ConfigError, "controller_steps must be positive");
  NAS_CHECK(search_epochs >= 1, ConfigError, "search_epochs must be positive");
  NAS_CHECK(retrain_epochs >= 1, ConfigError, "retrain_epochs must be positive");
  NAS_CHECK(batch_size >= 2, ConfigError,
            "batch_size must be at least 2 (batch norm needs batch statistics)");
  NAS_CHECK(top_k >= 1, ConfigError, "top_k must be positive");
  NAS_CHECK(child_schedule.warmup_epochs < child_schedule.total_epochs, ConfigError,
            "warmup must end before the schedule horizon");
  NAS_CHECK(child_momentum >= 0.0 && child_momentum < 1.0, ConfigError,
            "child momentum must lie in [0, 1)");
  NAS_CHECK(child_weight_decay >= 0.0, ConfigError, "weight decay must be non-negative");
}

std::vector<RankedArch> rank_architectures(const std::vector<SampleRecord>& history,
                                           bool by_mean) {
  NAS_CHECK(!history.empty(), ContractError, "ranking needs at least one sampled architecture");
  struct Agg {
    double best = 0.0, sum = 0.0, latency = 0.0;
    std::size_t n = 0, first = 0;
  };
  std::map<std::string, Agg> agg;
  for (std::size_t i = 0; i < history.size(); ++i) {
    const SampleRecord& rec = history[i];
    auto [it, inserted] = agg.try_emplace(rec.arch);
    Agg& a = it->second;
    if (inserted) {
      a.first = i;
      a.latency = rec.latency;
    }
    a.best = std::max(a.best, rec.accuracy);
    a.sum += rec.accuracy;
    a.n += 1;
  }
  std::vector<RankedArch> ranked;
  ranked.reserve(agg.size());
  for (const auto& [encoding, a] : agg) {
    RankedArch r;
    r.arch = ArchEncoding::decode(encoding);
    r.val_accuracy = by_mean ? a.sum / static_cast<double>(a.n) : a.best;
    r.latency = a.latency;
    r.first_seen = a.first;
    ranked.push_back(std::move(r));
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedArch& x, const RankedArch& y) {
    if (x.val_accuracy != y.val_accuracy) return x.val_accuracy > y.val_accuracy;
    return x.first_seen < y.first_seen;
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) ranked[i].rank = static_cast<int>(i) + 1;
  return ranked;
}

SearchEngine::SearchEngine(RunConfig cfg, const SplitDataset& data)
    : cfg_((sync_to_data(cfg, data), std::move(cfg))),
      data_(data),
      shared_(cfg_.supernet, cfg_.seed),
      controller_(cfg_.controller, cfg_.seed),
      child_opt_{cfg_.child_momentum, cfg_.child_weight_decay, {}} {
  NAS_CHECK(!data_.train.empty(), ConfigError, "training split is empty");
  NAS_CHECK(!data_.validation.empty(), ConfigError, "validation split is empty");
  NAS_CHECK(!data_.test.empty(), ConfigError, "test split is empty");
  NAS_CHECK(cfg_.batch_size <= data_.train.size(), ConfigError,
            "batch size exceeds the training split");
  resolve_target(cfg_, controller_, shared_);
  cfg_.validate();
  eval_batch_ = std::min(cfg_.eval_batch ? cfg_.eval_batch : cfg_.batch_size,
                         data_.validation.size());
}

double SearchEngine::eval_on_validation(const NetworkPlan& plan, std::size_t begin,
                                        std::size_t count, double* mean_loss) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = (begin + i) % data_.validation.size();
  const Batch batch = make_batch(data_.validation, idx, data_.shape);
  Graph g;
  NoGradGuard guard(g);
  const ForwardResult out = forward_plan(g, plan, shared_, batch.images, false);
  if (mean_loss != nullptr) {
    const LossInput in{out.features, to_labels(batch.labels), shared_.param(kFcWeightKey),
                       shared_.param(kFcBiasKey)};
    *mean_loss = compute_loss(g, cfg_.loss, in, cfg_.margin).data()[0];
  }
  return static_cast<double>(count_hits(out.logits, batch.labels)) /
         static_cast<double>(count);
}

void SearchEngine::train_children_one_epoch(double lr) {
  const std::vector<std::size_t> input_shape{data_.shape.c, data_.shape.h, data_.shape.w};
  std::vector<std::size_t> perm(data_.train.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng shuffle_rng = derive_stream(cfg_.seed, StreamPurpose::kShuffle, epoch_);
  shuffle_rng.shuffle(perm.data(), perm.size());

  const std::size_t n_batches = data_.train.size() / cfg_.batch_size;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    // Even tags for phase 1, odd for phase 2: the two phases never share a
    // controller sampling stream within an epoch.
    Rng sample_rng = derive_stream(cfg_.seed, StreamPurpose::kControllerSample, epoch_, 2 * b);
    const SampleTrace trace = controller_.sample(sample_rng);

    const std::vector<std::size_t> idx(
        perm.begin() + static_cast<std::ptrdiff_t>(b * cfg_.batch_size),
        perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg_.batch_size));
    Rng aug_rng = derive_stream(cfg_.seed, StreamPurpose::kAugment, epoch_, b);
    const Batch batch =
        make_augmented_batch(data_.train, idx, data_.shape, cfg_.augment, aug_rng);

    const NetworkPlan plan = compile(trace.arch, shared_, input_shape, data_.n_classes);
    Graph g;
    Rng db_rng = derive_stream(cfg_.seed, StreamPurpose::kDropBlock, epoch_, b);
    const ForwardResult out = forward_plan(g, plan, shared_, batch.images, true, &db_rng);
    const LossInput in{out.features, to_labels(batch.labels), shared_.param(kFcWeightKey),
                       shared_.param(kFcBiasKey)};
    const Tensor loss = compute_loss(g, cfg_.loss, in, cfg_.margin);
    zero_gradients(shared_.trainable());
    g.backward(loss);
    momentum_step(plan_parameters(plan, shared_), child_opt_, lr);
    loss_sum += loss.data()[0];
  }

  // Probe the controller's current argmax network on a fixed validation
  // window so the metrics track what the search would deliver right now.
  const ArchEncoding probe = controller_.argmax_decode();
  const NetworkPlan plan = compile(probe, shared_, input_shape, data_.n_classes);
  double probe_loss = 0.0;
  const double acc = accuracy_override ? accuracy_override(probe)
                                       : eval_on_validation(plan, 0, eval_batch_, &probe_loss);
  const double latency = measure_latency(plan, cfg_.latency, &shared_);
  const RewardRecord rec = compute_reward(acc, latency, cfg_.latency);
  metrics_.push_back({epoch_, 1, n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0,
                      acc, latency, rec.reward, lr, rec.clamped ? 1u : 0u});
}

void SearchEngine::train_controller_one_epoch(double lr) {
  const std::vector<std::size_t> input_shape{data_.shape.c, data_.shape.h, data_.shape.w};
  for (std::size_t step = 0; step < cfg_.controller_steps; ++step) {
    Rng rng =
        derive_stream(cfg_.seed, StreamPurpose::kControllerSample, epoch_, 2 * step + 1);
    std::vector<SampleTrace> traces;
    std::vector<double> rewards;
    double loss_sum = 0.0, acc_sum = 0.0, lat_sum = 0.0, reward_sum = 0.0;
    std::size_t clamps = 0;
    for (std::size_t q = 0; q < cfg_.q_samples; ++q) {
      traces.push_back(controller_.sample(rng));
      const SampleTrace& trace = traces.back();
      const NetworkPlan plan = compile(trace.arch, shared_, input_shape, data_.n_classes);
      double eval_loss = 0.0;
      double acc;
      if (accuracy_override) {
        acc = accuracy_override(trace.arch);
      } else {
        acc = eval_on_validation(plan, val_cursor_, eval_batch_, &eval_loss);
        val_cursor_ = (val_cursor_ + eval_batch_) % data_.validation.size();
      }
      const double latency = measure_latency(plan, cfg_.latency, &shared_);
      const RewardRecord rec = compute_reward(acc, latency, cfg_.latency);
      rewards.push_back(rec.reward);
      history_.push_back({epoch_, step, trace.arch.encode(), trace.log_prob.data()[0],
                          trace.entropy.data()[0], acc, latency, rec.reward, rec.clamped});
      loss_sum += eval_loss;
      acc_sum += acc;
      lat_sum += latency;
      reward_sum += rec.reward;
      clamps += rec.clamped ? 1 : 0;
    }
    controller_.reinforce_update(traces, rewards, lr);
    const double q = static_cast<double>(cfg_.q_samples);
    metrics_.push_back(
        {epoch_, 2, loss_sum / q, acc_sum / q, lat_sum / q, reward_sum / q, lr, clamps});
  }
}

void SearchEngine::run_epoch() {
  NAS_CHECK(epoch_ < cfg_.search_epochs, ContractError, "search horizon already reached");
  PhaseAudit audit;
  audit.epoch = epoch_;

  audit.controller_before = controller_.content_hash();
  train_children_one_epoch(warmup_then_cosine(cfg_.child_schedule, static_cast<double>(epoch_)));
  audit.controller_after = controller_.content_hash();
  NAS_CHECK(audit.controller_before == audit.controller_after, ContractError,
            "phase 1 must not touch the controller");

  audit.shared_before = shared_.content_hash();
  train_controller_one_epoch(piecewise_controller_lr(static_cast<long>(epoch_)));
  audit.shared_after = shared_.content_hash();
  NAS_CHECK(audit.shared_before == audit.shared_after, ContractError,
            "phase 2 must not touch the shared weights");

  audits_.push_back(audit);
  ++epoch_;
}

std::vector<RankedArch> SearchEngine::search() {
  while (epoch_ < cfg_.search_epochs) run_epoch();
  return rank_architectures(history_, cfg_.rank_by_mean);
}

void SearchEngine::save_checkpoint(const std::string& path) const {
  std::map<std::string, Tensor> entries = shared_.all_entries();
  for (const auto& [key, tensor] : controller_.all_entries()) entries[key] = tensor;
  for (const auto& [key, tensor] : child_opt_.velocity) entries["optim/" + key] = tensor;
  entries["engine/epoch"] = Tensor::from_data({1}, {static_cast<double>(epoch_)});
  entries["engine/val_cursor"] = Tensor::from_data({1}, {static_cast<double>(val_cursor_)});
  nas::save_checkpoint(path, entries);
}

void SearchEngine::load_checkpoint(const std::string& path) {
  const std::map<std::string, Tensor> entries = nas::load_checkpoint(path);
  std::map<std::string, Tensor> shared_entries, controller_entries, velocity;
  for (const auto& [key, tensor] : entries) {
    if (key.rfind("controller/", 0) == 0) {
      controller_entries[key] = tensor;
    } else if (key.rfind("optim/", 0) == 0) {
      velocity[key.substr(6)] = tensor;
    } else if (key == "engine/epoch") {
      epoch_ = static_cast<std::size_t>(std::llround(tensor.data()[0]));
    } else if (key == "engine/val_cursor") {
      val_cursor_ = static_cast<std::size_t>(std::llround(tensor.data()[0]));
    } else {
      shared_entries[key] = tensor;
    }
  }
  shared_.load_entries(shared_entries);
  controller_.load_entries(controller_entries);
  child_opt_.velocity = std::move(velocity);
}

void SearchEngine::write_metrics_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  NAS_CHECK(out.is_open(), DataError, "cannot open metrics file: " + path);
  out << "epoch,phase,loss,val_acc,latency,reward,lr,clamp_count\n";
  for (const MetricsRow& r : metrics_)
    out << r.epoch << ',' << r.phase << ',' << fmt(r.loss) << ',' << fmt(r.val_acc) << ','
        << fmt(r.latency) << ',' << fmt(r.reward) << ',' << fmt(r.lr) << ',' << r.clamp_count
        << '\n';
  NAS_CHECK(out.good(), DataError, "failed writing metrics file: " + path);
}

void SearchEngine::write_traces_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  NAS_CHECK(out.is_open(), DataError, "cannot open trace file: " + path);
  for (const SampleRecord& r : history_) {
    nlohmann::json j;
    j["arch"] = r.arch;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["log_prob"] = r.log_prob;
    j["entropy"] = r.entropy;
    j["accuracy"] = r.accuracy;
    j["latency"] = r.latency;
    j["reward"] = r.reward;
    j["clamped"] = r.clamped;
    out << j.dump() << '\n';
  }
  NAS_CHECK(out.good(), DataError, "failed writing trace file: " + path);
}

RetrainResult retrain_fixed(const ArchEncoding& arch, const RunConfig& cfg_in,
                            const SplitDataset& data) {
  RunConfig cfg = cfg_in;
  sync_to_data(cfg, data);
  NAS_CHECK(arch.nodes.size() == cfg.supernet.num_nodes, ConfigError,
            "architecture node count does not match the configured supernet");
  arch.validate();

  const std::uint64_t rseed = mix64(cfg.seed ^ kRetrainSalt);
  SharedParams params(cfg.supernet, rseed);
  const Controller reference(cfg.controller, rseed);
  resolve_target(cfg, reference, params);
  cfg.validate();

  ScheduleConfig sched = cfg.child_schedule;
  sched.total_epochs = static_cast<double>(cfg.retrain_epochs);
  NAS_CHECK(sched.warmup_epochs < sched.total_epochs, ConfigError,
            "retrain horizon must extend past the warmup");

  // Algorithm 2 trains on everything the search consumed: train plus
  // validation, freshly shuffled every epoch.
  std::vector<Sample> train = data.train;
  train.insert(train.end(), data.validation.begin(), data.validation.end());
  NAS_CHECK(cfg.batch_size <= train.size(), ConfigError,
            "batch size exceeds the retraining split");
  NAS_CHECK(!data.test.empty(), ConfigError, "test split is empty");

  const std::vector<std::size_t> input_shape{data.shape.c, data.shape.h, data.shape.w};
  const NetworkPlan plan = compile(arch, params, input_shape, data.n_classes);
  const std::map<std::string, Tensor> stepped = plan_parameters(plan, params);
  OptimState opt{cfg.child_momentum, cfg.child_weight_decay, {}};
  const std::size_t chunk =
      std::min(cfg.eval_batch ? cfg.eval_batch : cfg.batch_size, data.test.size());

  RetrainResult result;
  result.arch = arch;
  for (std::size_t epoch = 0; epoch < cfg.retrain_epochs; ++epoch) {
    const double lr = warmup_then_cosine(sched, static_cast<double>(epoch));
    std::vector<std::size_t> perm(train.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng shuffle_rng = derive_stream(rseed, StreamPurpose::kShuffle, epoch);
    shuffle_rng.shuffle(perm.data(), perm.size());

    const std::size_t n_batches = train.size() / cfg.batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::vector<std::size_t> idx(
          perm.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
          perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
      Rng aug_rng = derive_stream(rseed, StreamPurpose::kAugment, epoch, b);
      const Batch batch = make_augmented_batch(train, idx, data.shape, cfg.augment, aug_rng);
      Graph g;
      Rng db_rng = derive_stream(rseed, StreamPurpose::kDropBlock, epoch, b);
      const ForwardResult out = forward_plan(g, plan, params, batch.images, true, &db_rng);
      const LossInput in{out.features, to_labels(batch.labels), params.param(kFcWeightKey),
                         params.param(kFcBiasKey)};
      const Tensor loss = compute_loss(g, cfg.loss, in, cfg.margin);
      zero_gradients(params.trainable());
      g.backward(loss);
      momentum_step(stepped, opt, lr);
    }

    // Whole-test accuracy, remainder chunk included.
    std::size_t hits = 0;
    for (std::size_t start = 0; start < data.test.size(); start += chunk) {
      const std::size_t n = std::min(chunk, data.test.size() - start);
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = start + i;
      const Batch batch = make_batch(data.test, idx, data.shape);
      Graph g;
      NoGradGuard guard(g);
      const ForwardResult out = forward_plan(g, plan, params, batch.images, false);
      hits += count_hits(out.logits, batch.labels);
    }
    result.test_curve.push_back(static_cast<double>(hits) /
                                static_cast<double>(data.test.size()));
  }
  result.final_test_accuracy = result.test_curve.back();
  result.param_count = plan.total_params;
  result.cost = analytic_latency(plan, cfg.latency);
  return result;
}

}  // namespace nas
