#include "nas/arch.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace nas {

// ---------------------------------------------------------------------------
// Architecture encoding

std::string ArchEncoding::encode() const {
  std::string s;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i) s += '|';
    s += std::to_string(nodes[i].op_id);
    if (!nodes[i].skips.empty()) {
      s += ':';
      for (std::size_t j = 0; j < nodes[i].skips.size(); ++j) {
        if (j) s += ',';
        s += std::to_string(nodes[i].skips[j]);
      }
    }
  }
  return s;
}

namespace {

[[noreturn]] void parse_fail(std::size_t pos, const std::string& why) {
  throw ParseError("malformed architecture string at position " + std::to_string(pos) + ": " +
                   why);
}

// Parses a decimal integer starting at `pos`, advancing it.
std::size_t parse_number(const std::string& s, std::size_t& pos) {
  const std::size_t start = pos;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos == start) parse_fail(start, "expected a number");
  NAS_CHECK(pos - start <= 6, ParseError, "number too long at position " + std::to_string(start));
  return static_cast<std::size_t>(std::stoul(s.substr(start, pos - start)));
}

}  // namespace

ArchEncoding ArchEncoding::decode(const std::string& s) {
  ArchEncoding arch;
  if (s.empty()) parse_fail(0, "empty string");
  std::size_t pos = 0;
  while (true) {
    NodeSpec node;
    const std::size_t op = parse_number(s, pos);
    if (op >= kNumOps) parse_fail(pos, "op id " + std::to_string(op) + " out of range");
    node.op_id = static_cast<int>(op);
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      // An empty skip field ("0:") is tolerated and means no skips.
      while (pos < s.size() && s[pos] != '|') {
        node.skips.push_back(parse_number(s, pos));
        if (pos < s.size() && s[pos] == ',')
          ++pos;
        else
          break;
      }
    }
    arch.nodes.push_back(std::move(node));
    if (pos == s.size()) break;
    if (s[pos] != '|') parse_fail(pos, std::string("unexpected character '") + s[pos] + "'");
    ++pos;
    if (pos == s.size()) parse_fail(pos, "trailing separator");
  }
  arch.validate();
  return arch;
}

void ArchEncoding::validate() const {
  NAS_CHECK(!nodes.empty(), ParseError, "architecture must have at least one node");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    NAS_CHECK(nodes[i].op_id >= 0 && nodes[i].op_id < kNumOps, ParseError,
              "node " + std::to_string(i) + ": op id out of range");
    const auto& sk = nodes[i].skips;
    for (std::size_t j = 0; j < sk.size(); ++j) {
      NAS_CHECK(sk[j] < i, ParseError,
                "node " + std::to_string(i) + ": skip must reference an earlier node");
      NAS_CHECK(j == 0 || sk[j] > sk[j - 1], ParseError,
                "node " + std::to_string(i) + ": skips must be strictly ascending");
    }
  }
}

// ---------------------------------------------------------------------------
// Supernet geometry

std::size_t SupernetConfig::stage_of_node(std::size_t i) const {
  NAS_CHECK(i < num_nodes, ContractError, "stage_of_node: node index out of range");
  return std::min<std::size_t>(i, 3);
}

std::size_t SupernetConfig::num_reductions() const {
  return std::min<std::size_t>(3, num_nodes - 1);
}

void SupernetConfig::validate() const {
  NAS_CHECK(num_nodes >= 1, ConfigError, "net.nodes must be >= 1");
  NAS_CHECK(in_channels >= 1 && stem_channels >= 1 && num_classes >= 2, ConfigError,
            "net: channels and class count must be positive (>= 2 classes)");
  NAS_CHECK(input_size % (std::size_t{1} << num_reductions()) == 0, ConfigError,
            "net.input_size must be divisible by 2^" + std::to_string(num_reductions()));
  const std::size_t head = size_at_stage(stage_of_node(num_nodes - 1));
  NAS_CHECK(head >= 1, ConfigError, "net.input_size too small for this depth");
  NAS_CHECK(dropblock_size >= 1 && dropblock_size <= head, ConfigError,
            "net.dropblock_size must fit the " + std::to_string(head) + "x" +
                std::to_string(head) + " pre-head feature map");
  NAS_CHECK(dropblock_keep > 0.0 && dropblock_keep <= 1.0, ConfigError,
            "net.dropblock_keep must lie in (0, 1]");
  NAS_CHECK(bn_momentum > 0.0 && bn_momentum < 1.0 && bn_epsilon > 0.0, ConfigError,
            "net: batch-norm momentum in (0,1), epsilon > 0");
}

// ---------------------------------------------------------------------------
// SharedParams

namespace {

std::string node_prefix(std::size_t i, int op) {
  return "node" + std::to_string(i) + "/op" + std::to_string(op);
}

std::string skip_prefix(std::size_t src, std::size_t dst) {
  return "skip" + std::to_string(src) + "to" + std::to_string(dst);
}

double he_std(std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

Tensor init_normal(std::uint64_t seed, const std::string& key,
                   std::vector<std::size_t> shape, double stddev) {
  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(StreamPurpose::kParamInit),
                               hash_str(key.c_str())});
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

SharedParams::SharedParams(const SupernetConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  build();
}

void SharedParams::register_conv(const std::string& key, std::size_t c_out, std::size_t c_in,
                                 std::size_t k) {
  trainable_.emplace(key, init_normal(seed_, key, {c_out, c_in, k, k}, he_std(c_in * k * k)));
}

void SharedParams::register_depthwise(const std::string& key, std::size_t c, std::size_t k) {
  trainable_.emplace(key, init_normal(seed_, key, {c, k, k}, he_std(k * k)));
}

void SharedParams::register_bn(const std::string& prefix, std::size_t c) {
  BatchNormState s = BatchNormState::make(c);
  s.momentum = cfg_.bn_momentum;
  s.epsilon = cfg_.bn_epsilon;
  trainable_.emplace(prefix + "/gamma", s.gamma);
  trainable_.emplace(prefix + "/beta", s.beta);
  buffers_.emplace(prefix + "/running_mean", s.running_mean);
  buffers_.emplace(prefix + "/running_var", s.running_var);
  bn_.emplace(prefix, std::move(s));
}

void SharedParams::build() {
  const std::size_t L = cfg_.num_nodes;

  register_conv("stem/conv_w", cfg_.stem_channels, cfg_.in_channels, 3);
  register_bn("stem/bn", cfg_.stem_channels);

  for (std::size_t i = 0; i < L; ++i) {
    const std::size_t c = cfg_.channels_at_stage(cfg_.stage_of_node(i));
    for (int op = 0; op < kNumOps; ++op) {
      const std::string p = node_prefix(i, op);
      if (op == kOpSep3 || op == kOpSep5) {
        const std::size_t k = op == kOpSep3 ? 3 : 5;
        register_conv(p + "/pre_w", c, c, 1);
        register_depthwise(p + "/dw", c, k);
        register_conv(p + "/pw", c, c, 1);
      } else {
        register_conv(p + "/pw", c, c, 1);
      }
      register_bn(p + "/bn", c);
    }
  }

  // Main-path reductions after each of the first three nodes (when a later
  // node exists).
  for (std::size_t r = 0; r < cfg_.num_reductions(); ++r) {
    const std::size_t c = cfg_.channels_at_stage(r);
    register_conv("reduce" + std::to_string(r) + "/path1_w", c, c, 1);
    register_conv("reduce" + std::to_string(r) + "/path2_w", c, c, 1);
  }

  // Skip branches: a nonlinear module at the source stage, then one
  // reduction instance per stage boundary the branch crosses.
  for (std::size_t dst = 1; dst < L; ++dst)
    for (std::size_t src = 0; src < dst; ++src) {
      const std::string p = skip_prefix(src, dst);
      const std::size_t s_src = cfg_.stage_of_node(src);
      const std::size_t s_dst = cfg_.stage_of_node(dst);
      const std::size_t c_src = cfg_.channels_at_stage(s_src);
      register_conv(p + "/nl/w", c_src, c_src, 1);
      register_bn(p + "/nl/bn", c_src);
      for (std::size_t j = 0; j < s_dst - s_src; ++j) {
        const std::size_t c = cfg_.channels_at_stage(s_src + j);
        register_conv(p + "/red" + std::to_string(j) + "/path1_w", c, c, 1);
        register_conv(p + "/red" + std::to_string(j) + "/path2_w", c, c, 1);
      }
    }

  const std::size_t c_final = cfg_.channels_at_stage(cfg_.stage_of_node(L - 1));
  register_conv("merge/w", c_final, c_final, 1);
  trainable_.emplace(kFcWeightKey,
                     init_normal(seed_, kFcWeightKey, {c_final, cfg_.num_classes},
                                 std::sqrt(1.0 / static_cast<double>(c_final))));
  trainable_.emplace(kFcBiasKey, Tensor::zeros({cfg_.num_classes}, true));
}

Tensor SharedParams::param(const std::string& key) const {
  auto it = trainable_.find(key);
  NAS_CHECK(it != trainable_.end(), ContractError, "unknown parameter key: " + key);
  return it->second;
}

BatchNormState& SharedParams::bn_state(const std::string& prefix) {
  auto it = bn_.find(prefix);
  NAS_CHECK(it != bn_.end(), ContractError, "unknown batch-norm key: " + prefix);
  return it->second;
}

std::map<std::string, Tensor> SharedParams::all_entries() const {
  std::map<std::string, Tensor> all = trainable_;
  all.insert(buffers_.begin(), buffers_.end());
  return all;
}

void SharedParams::load_entries(const std::map<std::string, Tensor>& entries) {
  auto restore = [&](const std::string& key, Tensor dst) {
    auto it = entries.find(key);
    NAS_CHECK(it != entries.end(), ParseError, "checkpoint is missing entry: " + key);
    NAS_CHECK(it->second.shape() == dst.shape(), ParseError,
              "checkpoint entry " + key + " has shape " + it->second.shape_str() +
                  ", expected " + dst.shape_str());
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  };
  for (auto& [key, t] : trainable_) restore(key, t);
  for (auto& [key, t] : buffers_) restore(key, t);
}

namespace {

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::uint64_t SharedParams::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto fold = [&](const std::map<std::string, Tensor>& m) {
    for (const auto& [key, t] : m) {
      h = fnv1a_bytes(h, key.data(), key.size());
      h = fnv1a_bytes(h, t.data().data(), t.numel() * sizeof(double));
    }
  };
  fold(trainable_);
  fold(buffers_);
  return h;
}

// ---------------------------------------------------------------------------
// Plan construction

namespace {

struct PlanBuilder {
  const SharedParams& shared;
  NetworkPlan plan;
  std::set<std::string> seen_keys;

  const std::vector<std::size_t>& shape_of(int slot) const {
    return slot < 0 ? plan.input_shape : plan.ops[static_cast<std::size_t>(slot)].out_shape;
  }

  void count_key(const std::string& key, std::size_t n, PlanOp& op) {
    op.param_count += n;
    if (seen_keys.insert(key).second) plan.total_params += n;
  }

  int push(PlanOp op) {
    plan.total_macs += op.macs;
    plan.ops.push_back(std::move(op));
    return static_cast<int>(plan.ops.size()) - 1;
  }

  int conv(int in, const std::string& w_key, std::size_t stride, std::size_t padding,
           const std::string& name) {
    const auto& s = shape_of(in);
    const Tensor w = shared.param(w_key);
    NAS_CHECK(w.dim(1) == s[0], ContractError, "compile: channel mismatch at " + name);
    const std::size_t k = w.dim(2);
    const std::size_t oh = conv_out_size(s[1], k, stride, padding);
    const std::size_t ow = conv_out_size(s[2], k, stride, padding);
    PlanOp op{PlanOpKind::kConv, {in}, name, "conv", w_key, "", "", PoolKind::kAvg,
              k,                 stride, padding, {w.dim(0), oh, ow}};
    op.macs = w.dim(0) * w.dim(1) * k * k * oh * ow;
    count_key(w_key, w.numel(), op);
    return push(std::move(op));
  }

  int depthwise(int in, const std::string& w_key, std::size_t padding, const std::string& name) {
    const auto& s = shape_of(in);
    const Tensor w = shared.param(w_key);
    NAS_CHECK(w.dim(0) == s[0], ContractError, "compile: channel mismatch at " + name);
    const std::size_t k = w.dim(1);
    const std::size_t oh = conv_out_size(s[1], k, 1, padding);
    const std::size_t ow = conv_out_size(s[2], k, 1, padding);
    PlanOp op{PlanOpKind::kDepthwise, {in}, name, "depthwise", w_key, "", "",
              PoolKind::kAvg,         k,    1,    padding,     {s[0], oh, ow}};
    op.macs = s[0] * k * k * oh * ow;
    count_key(w_key, w.numel(), op);
    return push(std::move(op));
  }

  int batch_norm(int in, const std::string& prefix, const std::string& name) {
    const auto& s = shape_of(in);
    PlanOp op{PlanOpKind::kBatchNorm, {in}, name, "batchnorm", "", "", prefix,
              PoolKind::kAvg,         1,    1,    0,           s};
    op.macs = 2 * s[0] * s[1] * s[2];
    count_key(prefix + "/gamma", s[0], op);
    count_key(prefix + "/beta", s[0], op);
    return push(std::move(op));
  }

  int relu(int in, const std::string& name) {
    const auto& s = shape_of(in);
    PlanOp op{PlanOpKind::kRelu, {in}, name, "relu", "", "", "", PoolKind::kAvg, 1, 1, 0, s};
    op.macs = s[0] * s[1] * s[2];
    return push(std::move(op));
  }

  int add(int a, int b, const std::string& name) {
    NAS_CHECK(shape_of(a) == shape_of(b), ContractError, "compile: add shape mismatch at " + name);
    const auto& s = shape_of(a);
    PlanOp op{PlanOpKind::kAdd, {a, b}, name, "add", "", "", "", PoolKind::kAvg, 1, 1, 0, s};
    op.macs = s[0] * s[1] * s[2];
    return push(std::move(op));
  }

  int pool_op(int in, PoolKind kind, std::size_t k, std::size_t stride, std::size_t padding,
              const std::string& name) {
    const auto& s = shape_of(in);
    const std::size_t oh = conv_out_size(s[1], k, stride, padding);
    const std::size_t ow = conv_out_size(s[2], k, stride, padding);
    PlanOp op{PlanOpKind::kPool,
              {in},
              name,
              kind == PoolKind::kAvg ? "avgpool" : "maxpool",
              "",
              "",
              "",
              kind,
              k,
              stride,
              padding,
              {s[0], oh, ow}};
    op.macs = s[0] * k * k * oh * ow;
    return push(std::move(op));
  }

  int odd_sample(int in, const std::string& name) {
    const auto& s = shape_of(in);
    NAS_CHECK(s[1] % 2 == 0 && s[2] % 2 == 0, DimensionError,
              "factor reduction requires even spatial dims at " + name);
    PlanOp op{PlanOpKind::kOddSample, {in}, name, "subsample", "", "", "",
              PoolKind::kAvg,         1,    2,    0,           {s[0], s[1] / 2, s[2] / 2}};
    return push(std::move(op));
  }

  int concat_c(int a, int b, const std::string& name) {
    const auto& sa = shape_of(a);
    const auto& sb = shape_of(b);
    NAS_CHECK(sa[1] == sb[1] && sa[2] == sb[2], ContractError,
              "compile: concat spatial mismatch at " + name);
    PlanOp op{PlanOpKind::kConcatC, {a, b}, name, "concat", "", "", "", PoolKind::kAvg,
              1,                    1,      0,    {sa[0] + sb[0], sa[1], sa[2]}};
    return push(std::move(op));
  }

  // Two-path downsampling: even-grid samples and odd-shifted samples, each
  // through a 1x1 conv, concatenated to double the channels.
  int factor_reduction(int in, const std::string& prefix, const std::string& name) {
    const auto& s = shape_of(in);
    NAS_CHECK(s[1] % 2 == 0 && s[2] % 2 == 0, DimensionError,
              "factor reduction requires even spatial dims at " + name);
    int p1 = pool_op(in, PoolKind::kAvg, 1, 2, 0, name + "/path1_pool");
    p1 = conv(p1, prefix + "/path1_w", 1, 0, name + "/path1_conv");
    int p2 = odd_sample(in, name + "/path2_shift");
    p2 = conv(p2, prefix + "/path2_w", 1, 0, name + "/path2_conv");
    return concat_c(p1, p2, name + "/concat");
  }
};

}  // namespace

NetworkPlan compile(const ArchEncoding& arch, const SharedParams& shared,
                    const std::vector<std::size_t>& input_shape, std::size_t n_classes) {
  arch.validate();
  const SupernetConfig& cfg = shared.config();
  NAS_CHECK(arch.nodes.size() == cfg.num_nodes, ContractError,
            "architecture has " + std::to_string(arch.nodes.size()) + " nodes, store expects " +
                std::to_string(cfg.num_nodes));
  NAS_CHECK(input_shape.size() == 3 && input_shape[0] == cfg.in_channels &&
                input_shape[1] == cfg.input_size && input_shape[2] == cfg.input_size,
            ContractError, "compile: input shape does not match the parameter store");
  NAS_CHECK(n_classes == cfg.num_classes, ContractError,
            "compile: class count does not match the parameter store");

  PlanBuilder b{shared, {}, {}};
  b.plan.arch = arch;
  b.plan.input_shape = input_shape;
  b.plan.n_classes = n_classes;

  // Stem: full 3x3 conv, same padding, then batch norm.
  int chain = b.conv(-1, "stem/conv_w", 1, 1, "stem/conv");
  chain = b.batch_norm(chain, "stem/bn", "stem/bn");

  std::vector<int> node_out(cfg.num_nodes, -1);
  for (std::size_t i = 0; i < cfg.num_nodes; ++i) {
    const std::string ni = "node" + std::to_string(i);
    // Node input: chain predecessor plus every selected skip branch, where a
    // branch is relu -> 1x1 conv -> batch norm at the source stage followed
    // by one reduction per stage boundary it crosses.
    int node_in = chain;
    for (std::size_t src : arch.nodes[i].skips) {
      const std::string sp = skip_prefix(src, i);
      int t = b.relu(node_out[static_cast<std::size_t>(src)], sp + "/nl/relu");
      t = b.conv(t, sp + "/nl/w", 1, 0, sp + "/nl/conv");
      t = b.batch_norm(t, sp + "/nl/bn", sp + "/nl/bn");
      const std::size_t hops = cfg.stage_of_node(i) - cfg.stage_of_node(src);
      for (std::size_t j = 0; j < hops; ++j)
        t = b.factor_reduction(t, sp + "/red" + std::to_string(j), sp + "/red" + std::to_string(j));
      node_in = b.add(node_in, t, ni + "/skip_sum" + std::to_string(src));
    }

    // The node operation itself.
    const int op_id = arch.nodes[i].op_id;
    const std::string p = node_prefix(i, op_id);
    int t = node_in;
    if (op_id == kOpSep3 || op_id == kOpSep5) {
      const std::size_t k = op_id == kOpSep3 ? 3 : 5;
      t = b.conv(t, p + "/pre_w", 1, 0, p + "/pre");
      t = b.depthwise(t, p + "/dw", (k - 1) / 2, p + "/dw");
      t = b.conv(t, p + "/pw", 1, 0, p + "/pw");
    } else {
      t = b.pool_op(t, op_id == kOpAvgPool ? PoolKind::kAvg : PoolKind::kMax, 3, 1, 1,
                    p + "/pool");
      t = b.conv(t, p + "/pw", 1, 0, p + "/pw");
    }
    t = b.batch_norm(t, p + "/bn", p + "/bn");
    if (op_id == kOpSep3 || op_id == kOpSep5) t = b.relu(t, p + "/relu");
    node_out[i] = t;

    chain = t;
    if (i < cfg.num_reductions())
      chain = b.factor_reduction(chain, "reduce" + std::to_string(i),
                                 "reduce" + std::to_string(i));
  }

  // Head: the last node is the only loose end (every other node feeds its
  // chain successor), so the merge conv sees exactly its output.
  int t = b.conv(node_out[cfg.num_nodes - 1], "merge/w", 1, 0, "merge");
  {
    const auto& s = b.shape_of(t);
    PlanOp op{PlanOpKind::kDropBlock, {t}, "head/dropblock", "dropblock", "", "", "",
              PoolKind::kAvg,         cfg.dropblock_size, 1, 0, s};
    t = b.push(std::move(op));
  }
  {
    const auto& s = b.shape_of(t);
    PlanOp op{PlanOpKind::kGap, {t}, "head/gap", "gap", "", "", "", PoolKind::kAvg,
              1,                1,   0,          {s[0]}};
    op.macs = s[0] * s[1] * s[2];
    b.plan.features_slot = b.push(std::move(op));
    t = b.plan.features_slot;
  }
  {
    const Tensor w = b.shared.param(kFcWeightKey);
    PlanOp op{PlanOpKind::kFc, {t}, "head/fc", "fc", kFcWeightKey, kFcBiasKey, "",
              PoolKind::kAvg,  1,   1,         0,    {w.dim(1)}};
    op.macs = w.dim(0) * w.dim(1) + w.dim(1);
    b.count_key(kFcWeightKey, w.numel(), op);
    b.count_key(kFcBiasKey, w.dim(1), op);
    b.plan.logits_slot = b.push(std::move(op));
  }

  for (const auto& op : b.plan.ops) {
    if (!op.w_key.empty() &&
        std::find(b.plan.param_keys.begin(), b.plan.param_keys.end(), op.w_key) ==
            b.plan.param_keys.end())
      b.plan.param_keys.push_back(op.w_key);
    if (!op.b_key.empty() &&
        std::find(b.plan.param_keys.begin(), b.plan.param_keys.end(), op.b_key) ==
            b.plan.param_keys.end())
      b.plan.param_keys.push_back(op.b_key);
    if (!op.bn_prefix.empty()) {
      for (const char* suffix : {"/gamma", "/beta"}) {
        const std::string k = op.bn_prefix + suffix;
        if (std::find(b.plan.param_keys.begin(), b.plan.param_keys.end(), k) ==
            b.plan.param_keys.end())
          b.plan.param_keys.push_back(k);
      }
    }
  }
  return b.plan;
}

// ---------------------------------------------------------------------------
// Plan execution

namespace {

void check_slot_shape(const Tensor& t, const PlanOp& op, std::size_t batch) {
  std::vector<std::size_t> expect;
  expect.reserve(op.out_shape.size() + 1);
  expect.push_back(batch);
  expect.insert(expect.end(), op.out_shape.begin(), op.out_shape.end());
  NAS_CHECK(t.shape() == expect, ContractError,
            "plan op " + op.name + " produced " + t.shape_str() + ", plan declared " +
                Tensor::zeros(expect).shape_str());
}

}  // namespace

ForwardResult forward_plan(Graph& g, const NetworkPlan& plan, SharedParams& shared,
                           const Tensor& batch, bool training, Rng* dropblock_rng) {
  NAS_CHECK(batch.rank() == 4, DimensionError, "forward: batch must be [N,C,H,W]");
  NAS_CHECK(batch.dim(1) == plan.input_shape[0] && batch.dim(2) == plan.input_shape[1] &&
                batch.dim(3) == plan.input_shape[2],
            DimensionError, "forward: batch shape " + batch.shape_str() +
                                " does not match the plan input");
  const std::size_t n = batch.dim(0);
  std::vector<Tensor> slots(plan.ops.size());
  auto in = [&](const PlanOp& op, std::size_t idx) -> const Tensor& {
    const int s = op.inputs[idx];
    return s < 0 ? batch : slots[static_cast<std::size_t>(s)];
  };

  for (std::size_t i = 0; i < plan.ops.size(); ++i) {
    const PlanOp& op = plan.ops[i];
    Tensor r;
    switch (op.kind) {
      case PlanOpKind::kConv:
        r = conv2d(g, in(op, 0), shared.param(op.w_key), op.stride, op.padding);
        break;
      case PlanOpKind::kDepthwise:
        r = depthwise_conv2d(g, in(op, 0), shared.param(op.w_key), op.stride, op.padding);
        break;
      case PlanOpKind::kPool:
        r = pool(g, in(op, 0), op.pool_kind, op.k, op.stride, op.padding);
        break;
      case PlanOpKind::kBatchNorm:
        r = batch_norm(g, in(op, 0), shared.bn_state(op.bn_prefix), training);
        break;
      case PlanOpKind::kRelu:
        r = g.relu(in(op, 0));
        break;
      case PlanOpKind::kAdd:
        r = g.add(in(op, 0), in(op, 1));
        break;
      case PlanOpKind::kConcatC:
        r = g.concat_axis1({in(op, 0), in(op, 1)});
        break;
      case PlanOpKind::kOddSample:
        r = odd_shift_downsample(g, in(op, 0));
        break;
      case PlanOpKind::kDropBlock: {
        const double keep = shared.config().dropblock_keep;
        NAS_CHECK(!training || keep >= 1.0 || dropblock_rng != nullptr, ContractError,
                  "forward: training with dropblock requires an rng stream");
        Rng fallback(0);
        r = dropblock(g, in(op, 0), op.k, keep, training,
                      dropblock_rng ? *dropblock_rng : fallback);
        break;
      }
      case PlanOpKind::kGap:
        r = global_avg_pool(g, in(op, 0));
        break;
      case PlanOpKind::kFc: {
        Tensor logits = g.matmul(in(op, 0), shared.param(op.w_key));
        r = g.add_rowvec(logits, shared.param(op.b_key));
        break;
      }
    }
    check_slot_shape(r, op, n);
    slots[i] = std::move(r);
  }

  NAS_CHECK(plan.features_slot >= 0 && plan.logits_slot >= 0, ContractError,
            "forward: plan has no head");
  return {slots[static_cast<std::size_t>(plan.features_slot)],
          slots[static_cast<std::size_t>(plan.logits_slot)]};
}

}  // namespace nas
