#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "nas/arch.hpp"
#include "nas/rng.hpp"
#include "nas/tensor.hpp"

namespace nas {

// Recurrent architecture policy: an LSTM decodes one op decision per node
// followed by one binary skip decision per (predecessor, node) pair, feeding
// each chosen token's embedding back as the next input.
struct ControllerConfig {
  std::size_t num_nodes = 5;
  std::size_t hidden_size = 100;
  std::size_t embed_size = 32;
  double temperature = 1.0;      // divides logits before softmax
  double entropy_weight = 1e-4;  // exploration bonus in the policy objective
  double baseline_decay = 0.95;  // reward moving-average decay
  bool averaged_reward = false;  // credit every trace with the step-mean reward

  // One op decision per node plus one skip bit per earlier node.
  std::size_t num_decisions() const {
    return num_nodes + num_nodes * (num_nodes - 1) / 2;
  }
  void validate() const;
};

// One sampled architecture with the differentiable quantities the policy
// gradient needs.  The trace owns the graph its scalars are attached to, so
// a batch of traces can be replayed independently during the update.
struct SampleTrace {
  ArchEncoding arch;
  std::shared_ptr<Graph> graph;
  Tensor log_prob;  // scalar, <= 0
  Tensor entropy;   // scalar, >= 0
};

class Controller {
 public:
  Controller(const ControllerConfig& cfg, std::uint64_t seed);

  const ControllerConfig& config() const { return cfg_; }

  // Draws one architecture; deterministic in the rng state.
  SampleTrace sample(Rng& rng);

  // Replays a fixed architecture through the decode loop on the caller's
  // graph, producing its log-probability and entropy under current weights.
  SampleTrace trace_for(const ArchEncoding& arch, Graph& g);

  // Greedy decode, ties broken toward the lowest token index.
  ArchEncoding argmax_decode() const;

  // One ascent step on mean((reward - baseline) * log_prob) plus the entropy
  // bonus, then a baseline update b <- decay*b + (1-decay)*mean(reward).
  // Returns the step's mean reward.
  double reinforce_update(const std::vector<SampleTrace>& traces,
                          const std::vector<double>& rewards, double lr);

  double baseline() const { return baseline_; }
  void set_baseline(double b) { baseline_ = b; }

  const std::map<std::string, Tensor>& trainable() const { return params_; }

  // Checkpoint view: parameters plus the baseline scalar.
  std::map<std::string, Tensor> all_entries() const;
  void load_entries(const std::map<std::string, Tensor>& entries);
  std::uint64_t content_hash() const;

 private:
  enum class DecodeMode { kSample, kForce, kArgmax };
  SampleTrace decode_loop(Graph& g, DecodeMode mode, Rng* rng,
                          const ArchEncoding* forced) const;

  ControllerConfig cfg_;
  std::map<std::string, Tensor> params_;
  double baseline_ = 0.0;
};

}  // namespace nas
