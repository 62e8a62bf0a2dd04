#include "nas/controller.hpp"

#include <algorithm>
#include <cmath>

#include "nas/schedules.hpp"

namespace nas {

namespace {

// Token vocabulary fed back through the embedding table: a start-of-sequence
// token, one token per op choice, and one per skip-bit value.
constexpr std::size_t kStartToken = 0;
constexpr std::size_t kOpTokenBase = 1;                    // ops 0..3 -> 1..4
constexpr std::size_t kSkipTokenBase = 1 + kNumOps;        // bits 0/1 -> 5/6
constexpr std::size_t kVocabSize = kSkipTokenBase + 2;     // 7

Tensor init_uniform(std::uint64_t seed, const std::string& key,
                    std::vector<std::size_t> shape, double bound) {
  Rng rng = Rng::derive(seed, {static_cast<std::uint64_t>(StreamPurpose::kParamInit),
                               hash_str(key.c_str())});
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

std::uint64_t fnv1a_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void ControllerConfig::validate() const {
  NAS_CHECK(num_nodes >= 1, ConfigError, "controller: num_nodes must be >= 1");
  NAS_CHECK(hidden_size >= 1 && embed_size >= 1, ConfigError,
            "controller: hidden/embed sizes must be positive");
  NAS_CHECK(temperature > 0.0, ConfigError, "controller: temperature must be > 0");
  NAS_CHECK(entropy_weight >= 0.0, ConfigError, "controller: entropy weight must be >= 0");
  NAS_CHECK(baseline_decay >= 0.0 && baseline_decay < 1.0, ConfigError,
            "controller: baseline decay must lie in [0, 1)");
}

Controller::Controller(const ControllerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden_size, e = cfg_.embed_size;
  // Recurrent cell and embeddings start small-uniform; both projection heads
  // start at zero so the untrained policy is exactly uniform and the greedy
  // decode's tie-break is well-defined.
  params_["controller/embed"] = init_uniform(seed, "controller/embed", {kVocabSize, e}, 0.1);
  params_["controller/lstm/w_ih"] =
      init_uniform(seed, "controller/lstm/w_ih", {e, 4 * h}, 0.1);
  params_["controller/lstm/w_hh"] =
      init_uniform(seed, "controller/lstm/w_hh", {h, 4 * h}, 0.1);
  params_["controller/lstm/b"] = Tensor::zeros({4 * h}, true);
  params_["controller/op_head/w"] = Tensor::zeros({h, kNumOps}, true);
  params_["controller/op_head/b"] = Tensor::zeros({kNumOps}, true);
  params_["controller/skip_head/w"] = Tensor::zeros({h, 2}, true);
  params_["controller/skip_head/b"] = Tensor::zeros({2}, true);
}

SampleTrace Controller::decode_loop(Graph& g, DecodeMode mode, Rng* rng,
                                    const ArchEncoding* forced) const {
  const std::size_t hsz = cfg_.hidden_size;
  const Tensor embed = params_.at("controller/embed");
  const Tensor w_ih = params_.at("controller/lstm/w_ih");
  const Tensor w_hh = params_.at("controller/lstm/w_hh");
  const Tensor b = params_.at("controller/lstm/b");

  Tensor h = Tensor::zeros({1, hsz});
  Tensor c = Tensor::zeros({1, hsz});
  Tensor x = g.row(embed, kStartToken);

  Tensor log_prob = Tensor::zeros({1});
  Tensor entropy = Tensor::zeros({1});

  auto lstm_step = [&]() {
    Tensor z = g.add_rowvec(g.add(g.matmul(x, w_ih), g.matmul(h, w_hh)), b);
    Tensor in_gate = g.sigmoid_(g.slice_axis1(z, 0, hsz));
    Tensor forget_gate = g.sigmoid_(g.slice_axis1(z, hsz, 2 * hsz));
    Tensor cell_cand = g.tanh_(g.slice_axis1(z, 2 * hsz, 3 * hsz));
    Tensor out_gate = g.sigmoid_(g.slice_axis1(z, 3 * hsz, 4 * hsz));
    c = g.add(g.mul(forget_gate, c), g.mul(in_gate, cell_cand));
    h = g.mul(out_gate, g.tanh_(c));
  };

  // Emits one decision from the current hidden state: computes head
  // log-probabilities, picks a token, and accumulates log_prob/entropy.
  auto decide = [&](const Tensor& head_w, const Tensor& head_b,
                    std::size_t forced_choice) -> std::size_t {
    Tensor logits = g.add_rowvec(g.matmul(h, head_w), head_b);
    if (cfg_.temperature != 1.0) logits = g.scale(logits, 1.0 / cfg_.temperature);
    Tensor logp = g.sub_colvec(logits, g.logsumexp_rows(logits));
    const std::size_t n = logp.dim(1);

    std::size_t choice = 0;
    switch (mode) {
      case DecodeMode::kSample: {
        const double u = rng->uniform01();
        double cdf = 0.0;
        choice = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          cdf += std::exp(logp.at({0, i}));
          if (u < cdf) {
            choice = i;
            break;
          }
        }
        break;
      }
      case DecodeMode::kForce:
        choice = forced_choice;
        break;
      case DecodeMode::kArgmax: {
        double best = logp.at({0, 0});
        for (std::size_t i = 1; i < n; ++i)
          if (logp.at({0, i}) > best) {  // strict: ties keep the lowest index
            best = logp.at({0, i});
            choice = i;
          }
        break;
      }
    }

    log_prob = g.add(log_prob, g.gather_cols(logp, {choice}));
    entropy = g.add(entropy, g.neg(g.sum(g.mul(g.exp_(logp), logp))));
    return choice;
  };

  const Tensor op_w = params_.at("controller/op_head/w");
  const Tensor op_b = params_.at("controller/op_head/b");
  const Tensor skip_w = params_.at("controller/skip_head/w");
  const Tensor skip_b = params_.at("controller/skip_head/b");

  SampleTrace trace;
  for (std::size_t i = 0; i < cfg_.num_nodes; ++i) {
    lstm_step();
    const std::size_t forced_op =
        forced ? static_cast<std::size_t>(forced->nodes[i].op_id) : 0;
    const std::size_t op = decide(op_w, op_b, forced_op);
    NodeSpec node{static_cast<int>(op), {}};
    x = g.row(embed, kOpTokenBase + op);

    for (std::size_t p = 0; p < i; ++p) {
      lstm_step();
      std::size_t forced_bit = 0;
      if (forced) {
        const auto& sk = forced->nodes[i].skips;
        forced_bit = std::binary_search(sk.begin(), sk.end(), p) ? 1 : 0;
      }
      const std::size_t bit = decide(skip_w, skip_b, forced_bit);
      if (bit == 1) node.skips.push_back(p);
      x = g.row(embed, kSkipTokenBase + bit);
    }
    trace.arch.nodes.push_back(std::move(node));
  }

  trace.log_prob = log_prob;
  trace.entropy = entropy;
  return trace;
}

SampleTrace Controller::sample(Rng& rng) {
  auto graph = std::make_shared<Graph>();
  SampleTrace trace = decode_loop(*graph, DecodeMode::kSample, &rng, nullptr);
  trace.graph = std::move(graph);
  return trace;
}

SampleTrace Controller::trace_for(const ArchEncoding& arch, Graph& g) {
  arch.validate();
  NAS_CHECK(arch.nodes.size() == cfg_.num_nodes, ContractError,
            "controller: architecture node count does not match the policy");
  return decode_loop(g, DecodeMode::kForce, nullptr, &arch);
}

ArchEncoding Controller::argmax_decode() const {
  Graph g;
  NoGradGuard guard(g);
  return decode_loop(g, DecodeMode::kArgmax, nullptr, nullptr).arch;
}

double Controller::reinforce_update(const std::vector<SampleTrace>& traces,
                                    const std::vector<double>& rewards, double lr) {
  NAS_CHECK(!traces.empty() && traces.size() == rewards.size(), ContractError,
            "reinforce_update: need equally many traces and rewards");
  const double q = static_cast<double>(traces.size());
  double mean_reward = 0.0;
  for (double r : rewards) mean_reward += r;
  mean_reward /= q;

  zero_gradients(params_);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    NAS_CHECK(traces[i].graph != nullptr, ContractError,
              "reinforce_update: trace does not own a graph (was it sampled?)");
    const double reward = cfg_.averaged_reward ? mean_reward : rewards[i];
    const double advantage = reward - baseline_;
    // Ascent on (advantage * log_prob + w * entropy) / Q, expressed as a
    // weighted descent seed.
    traces[i].graph->backward_weighted({{traces[i].log_prob, -advantage / q},
                                        {traces[i].entropy, -cfg_.entropy_weight / q}});
  }
  sgd_step(params_, lr, 0.0);
  baseline_ = cfg_.baseline_decay * baseline_ + (1.0 - cfg_.baseline_decay) * mean_reward;
  return mean_reward;
}

std::map<std::string, Tensor> Controller::all_entries() const {
  std::map<std::string, Tensor> all = params_;
  all.emplace("controller/state/baseline", Tensor::from_data({1}, {baseline_}));
  return all;
}

void Controller::load_entries(const std::map<std::string, Tensor>& entries) {
  for (auto& [key, t] : params_) {
    auto it = entries.find(key);
    NAS_CHECK(it != entries.end(), ParseError, "checkpoint is missing entry: " + key);
    NAS_CHECK(it->second.shape() == t.shape(), ParseError,
              "checkpoint entry " + key + " has shape " + it->second.shape_str() +
                  ", expected " + t.shape_str());
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
  }
  auto it = entries.find("controller/state/baseline");
  NAS_CHECK(it != entries.end() && it->second.numel() == 1, ParseError,
            "checkpoint is missing the controller baseline");
  baseline_ = it->second.data()[0];
}

std::uint64_t Controller::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [key, t] : params_) {
    h = fnv1a_bytes(h, key.data(), key.size());
    h = fnv1a_bytes(h, t.data().data(), t.numel() * sizeof(double));
  }
  h = fnv1a_bytes(h, &baseline_, sizeof(baseline_));
  return h;
}

}  // namespace nas
