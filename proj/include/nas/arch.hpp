#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nas/nn_ops.hpp"
#include "nas/rng.hpp"
#include "nas/tensor.hpp"

namespace nas {

// Node operation ids, fixed by the search space.
inline constexpr int kOpSep3 = 0;
inline constexpr int kOpSep5 = 1;
inline constexpr int kOpAvgPool = 2;
inline constexpr int kOpMaxPool = 3;
inline constexpr int kNumOps = 4;

struct NodeSpec {
  int op_id = 0;                    // in [0, kNumOps)
  std::vector<std::size_t> skips;   // strictly ascending, each < node index

  bool operator==(const NodeSpec&) const = default;
};

// One sampled architecture: a DAG over L nodes.  String form (bit-exact):
// nodes joined by "|", each node "op_id" or "op_id:skip,skip,..." with skips
// ascending, e.g. "0|1:0|3:0,2|2|0:1,3".
struct ArchEncoding {
  std::vector<NodeSpec> nodes;

  std::string encode() const;
  static ArchEncoding decode(const std::string& s);  // ParseError names the position
  void validate() const;                             // DAG/range invariants

  bool operator==(const ArchEncoding&) const = default;
};

// Geometry of the supernetwork.  Nodes live in stages: stage(i) = min(i, 3);
// a factor-reduction module sits after each of the first three nodes (when a
// later node exists), halving spatial dims and doubling channels.
struct SupernetConfig {
  std::size_t num_nodes = 5;     // L
  std::size_t in_channels = 3;
  std::size_t input_size = 32;   // square inputs
  std::size_t stem_channels = 16;
  std::size_t num_classes = 10;
  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;
  std::size_t dropblock_size = 3;
  double dropblock_keep = 0.9;

  std::size_t stage_of_node(std::size_t i) const;  // min(i, 3), capped by L
  std::size_t num_reductions() const;              // min(3, L-1)
  std::size_t channels_at_stage(std::size_t s) const { return stem_channels << s; }
  std::size_t size_at_stage(std::size_t s) const { return input_size >> s; }
  void validate() const;
};

// The supernetwork's single weight store.  Every tensor any sampled
// architecture can touch is allocated once here, keyed by a stable path
// string; batch-norm running statistics live beside their gamma/beta as
// non-trainable buffers.
class SharedParams {
 public:
  SharedParams(const SupernetConfig& cfg, std::uint64_t seed);

  const SupernetConfig& config() const { return cfg_; }
  Tensor param(const std::string& key) const;
  bool has_param(const std::string& key) const { return trainable_.count(key) != 0; }
  BatchNormState& bn_state(const std::string& prefix);

  const std::map<std::string, Tensor>& trainable() const { return trainable_; }

  // Checkpoint view: trainable parameters plus running-stat buffers.
  std::map<std::string, Tensor> all_entries() const;
  void load_entries(const std::map<std::string, Tensor>& entries);

  // FNV-1a over the bytes of every entry in key order; used by the
  // phase-separation audit.
  std::uint64_t content_hash() const;

 private:
  void register_conv(const std::string& key, std::size_t c_out, std::size_t c_in,
                     std::size_t k);
  void register_depthwise(const std::string& key, std::size_t c, std::size_t k);
  void register_bn(const std::string& prefix, std::size_t c);
  void build();

  SupernetConfig cfg_;
  std::uint64_t seed_;
  std::map<std::string, Tensor> trainable_;
  std::map<std::string, Tensor> buffers_;
  std::map<std::string, BatchNormState> bn_;
};

// A compiled architecture: a linear program over tensor slots.  The same
// plan serves the forward pass, the shape audit, the analytic latency model,
// and the parameter-count report.
enum class PlanOpKind {
  kConv,       // 1x1 or full conv, weight w_key
  kDepthwise,  // depthwise conv, weight w_key
  kPool,
  kBatchNorm,
  kRelu,
  kAdd,        // two inputs, elementwise
  kConcatC,    // two inputs, channel concat
  kOddSample,  // x[..., 2a+1, 2b+1]: the lower-right path of factor reduction
  kDropBlock,
  kGap,
  kFc,         // weight w_key [C,n], bias b_key [n]
};

struct PlanOp {
  PlanOpKind kind;
  std::vector<int> inputs;  // slot indices; slot -1 is the network input
  std::string name;
  std::string cost_key;     // latency cost-table row
  std::string w_key, b_key, bn_prefix;
  PoolKind pool_kind = PoolKind::kAvg;
  std::size_t k = 1, stride = 1, padding = 0;
  std::vector<std::size_t> out_shape;  // per-sample shape this op must produce
  std::size_t macs = 0;                // per-sample work count
  std::size_t param_count = 0;
};

struct NetworkPlan {
  ArchEncoding arch;
  std::vector<std::size_t> input_shape;  // per-sample [C,H,W]
  std::size_t n_classes = 0;
  std::vector<PlanOp> ops;
  int features_slot = -1;  // pooled feature vector, input to the classifier
  int logits_slot = -1;
  std::size_t total_macs = 0;
  std::size_t total_params = 0;
  std::vector<std::string> param_keys;  // unique keys in first-use order
};

NetworkPlan compile(const ArchEncoding& arch, const SharedParams& shared,
                    const std::vector<std::size_t>& input_shape, std::size_t n_classes);

struct ForwardResult {
  Tensor features;  // [N, C_final]
  Tensor logits;    // [N, n_classes]
};

// Executes a plan on a batch [N,C,H,W].  In training mode the dropblock rng
// must be supplied when the keep probability is below 1.  Every op's output
// shape is checked against the plan's declared shape.
ForwardResult forward_plan(Graph& g, const NetworkPlan& plan, SharedParams& shared,
                           const Tensor& batch, bool training, Rng* dropblock_rng = nullptr);

// The classifier weights double as the loss module's class-weight matrix.
inline constexpr const char* kFcWeightKey = "head/fc_w";
inline constexpr const char* kFcBiasKey = "head/fc_b";

}  // namespace nas
