#pragma once

#include <string>
#include <vector>

#include "nas/tensor.hpp"

namespace nas {

// L2-norm guard applied before any normalization or angle computation.
inline constexpr double kNormEps = 1e-12;
// Cosines are pulled into the open interval before arccos so the angle and
// its gradient stay finite at the |cos| = 1 boundaries.
inline constexpr double kCosGuard = 1e-7;

struct LossInput {
  Tensor embeddings;                // [N, d]
  std::vector<std::size_t> labels;  // one label per sample, each < n
  Tensor class_weights;             // [d, n]
  Tensor bias;                      // [n]; consumed by cross_entropy only, may be undefined
};

struct MarginConfig {
  double m = 0.0;  // margin; integer-valued >= 1 for the angular-power loss
  double s = 1.0;  // logit scale (> 0)
};

// Mean negative log-softmax of W^T x + b at the true class, log-sum-exp
// stabilized.
Tensor cross_entropy(Graph& g, const LossInput& in);

// Angular-power margin: target logit ||x|| * psi(theta_y) with
// psi(theta) = (-1)^k cos(m*theta) - 2k on [k*pi/m, (k+1)*pi/m]; weight
// columns normalized, embeddings kept at full norm.  Requires integer m >= 1.
Tensor a_softmax(Graph& g, const LossInput& in, const MarginConfig& cfg);

// Additive cosine margin: target logit s*(cos theta_y - m), others s*cos.
// Both embeddings and weight columns normalized.
Tensor am_softmax(Graph& g, const LossInput& in, const MarginConfig& cfg);

// Additive angular margin: target logit s*cos(theta_y + m); requires
// 0 <= m < pi.  Cosine clamped and theta_y limited to [0, pi - m] so the
// target logit stays monotone in theta.
Tensor arcface(Graph& g, const LossInput& in, const MarginConfig& cfg);

enum class LossKind { kCrossEntropy, kASoftmax, kAmSoftmax, kArcFace };

// Config keys: "cross_entropy", "a_softmax", "am_softmax", "arcface".
LossKind loss_kind_from_key(const std::string& key);
const char* loss_key(LossKind kind);

// Per-loss default margin/scale used when the config does not override them.
MarginConfig default_margin_config(LossKind kind);

Tensor compute_loss(Graph& g, LossKind kind, const LossInput& in, const MarginConfig& cfg);

}  // namespace nas
