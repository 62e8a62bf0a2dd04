#include "nas/losses.hpp"

#include <cmath>

namespace nas {

namespace {

void check_input(const LossInput& in) {
  NAS_CHECK(in.embeddings.defined() && in.embeddings.rank() == 2, DimensionError,
            "loss: embeddings must be [N, d]");
  NAS_CHECK(in.class_weights.defined() && in.class_weights.rank() == 2, DimensionError,
            "loss: class weights must be [d, n]");
  NAS_CHECK(in.embeddings.dim(1) == in.class_weights.dim(0), DimensionError,
            "loss: embedding width " + in.embeddings.shape_str() + " vs weights " +
                in.class_weights.shape_str());
  const std::size_t n_samples = in.embeddings.dim(0);
  const std::size_t n_classes = in.class_weights.dim(1);
  NAS_CHECK(n_samples >= 1, DimensionError, "loss: empty batch");
  NAS_CHECK(in.labels.size() == n_samples, DimensionError, "loss: one label per sample");
  for (std::size_t y : in.labels)
    NAS_CHECK(y < n_classes, DimensionError, "loss: label out of class range");
}

// Mean over samples of log-sum-exp(row) - row[label].
Tensor mean_neg_log_softmax(Graph& g, const Tensor& logits,
                            const std::vector<std::size_t>& labels) {
  Tensor lse = g.logsumexp_rows(logits);
  Tensor target = g.gather_cols(logits, labels);
  return g.mean(g.sub(lse, target));
}

// Piecewise angular-power margin function applied elementwise to angles in
// [0, pi]: psi(theta) = (-1)^k cos(m*theta) - 2k with k = floor(theta*m/pi)
// capped at m-1 (the cap makes psi(pi) well-defined).  dpsi/dtheta =
// -(-1)^k * m * sin(m*theta); continuous across interval boundaries.
Tensor psi_margin(Graph& g, const Tensor& theta, int m) {
  bool rec = false;
  Tensor out = g.make_op_output(theta.shape(), {theta}, &rec);
  const double md = static_cast<double>(m);
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const double t = theta.data()[i];
    NAS_CHECK(t >= 0.0 && t <= M_PI, DomainError, "psi_margin: angle outside [0, pi]");
    const int k = std::min(m - 1, static_cast<int>(std::floor(t * md / M_PI)));
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    out.data()[i] = sign * std::cos(md * t) - 2.0 * k;
  }
  if (rec)
    g.record([theta, out, m, md](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      auto& gt = ctx.sink(theta);
      for (std::size_t i = 0; i < gop->size(); ++i) {
        const double t = theta.data()[i];
        const int k = std::min(m - 1, static_cast<int>(std::floor(t * md / M_PI)));
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        gt[i] += (*gop)[i] * (-sign * md * std::sin(md * t));
      }
    });
  return out;
}

}  // namespace

Tensor cross_entropy(Graph& g, const LossInput& in) {
  check_input(in);
  Tensor logits = g.matmul(in.embeddings, in.class_weights);
  if (in.bias.defined()) {
    NAS_CHECK(in.bias.rank() == 1 && in.bias.dim(0) == in.class_weights.dim(1),
              DimensionError, "cross_entropy: bias length must equal class count");
    logits = g.add_rowvec(logits, in.bias);
  }
  return mean_neg_log_softmax(g, logits, in.labels);
}

Tensor a_softmax(Graph& g, const LossInput& in, const MarginConfig& cfg) {
  check_input(in);
  NAS_CHECK(cfg.m >= 1.0 && cfg.m == std::floor(cfg.m), ConfigError,
            "a_softmax: margin must be an integer >= 1");
  const int m = static_cast<int>(cfg.m);
  Tensor wn = g.l2_normalize_cols(in.class_weights, kNormEps);
  // raw[i][j] = x_i . w_j / ||w_j|| = ||x_i|| cos(theta_{j,i})
  Tensor raw = g.matmul(in.embeddings, wn);
  Tensor norms = g.norm_rows(in.embeddings, kNormEps);
  Tensor target_raw = g.gather_cols(raw, in.labels);
  Tensor cos_y = g.clamp(g.mul(target_raw, g.pow_(norms, -1.0)), -1.0 + kCosGuard,
                         1.0 - kCosGuard);
  Tensor theta = g.acos_(cos_y);
  Tensor target_logit = g.mul(norms, psi_margin(g, theta, m));
  Tensor logits = g.set_cols(raw, in.labels, target_logit);
  return mean_neg_log_softmax(g, logits, in.labels);
}

Tensor am_softmax(Graph& g, const LossInput& in, const MarginConfig& cfg) {
  check_input(in);
  NAS_CHECK(cfg.m >= 0.0, ConfigError, "am_softmax: margin must be >= 0");
  NAS_CHECK(cfg.s > 0.0, ConfigError, "am_softmax: scale must be positive");
  Tensor xn = g.l2_normalize_rows(in.embeddings, kNormEps);
  Tensor wn = g.l2_normalize_cols(in.class_weights, kNormEps);
  Tensor cosines = g.matmul(xn, wn);
  Tensor target = g.add_scalar(g.gather_cols(cosines, in.labels), -cfg.m);
  Tensor logits = g.scale(g.set_cols(cosines, in.labels, target), cfg.s);
  return mean_neg_log_softmax(g, logits, in.labels);
}

Tensor arcface(Graph& g, const LossInput& in, const MarginConfig& cfg) {
  check_input(in);
  NAS_CHECK(cfg.m >= 0.0 && cfg.m < M_PI, ConfigError, "arcface: margin must lie in [0, pi)");
  NAS_CHECK(cfg.s > 0.0, ConfigError, "arcface: scale must be positive");
  Tensor xn = g.l2_normalize_rows(in.embeddings, kNormEps);
  Tensor wn = g.l2_normalize_cols(in.class_weights, kNormEps);
  Tensor cosines = g.matmul(xn, wn);
  Tensor cos_y = g.clamp(g.gather_cols(cosines, in.labels), -1.0 + kCosGuard, 1.0 - kCosGuard);
  Tensor theta = g.clamp(g.acos_(cos_y), 0.0, M_PI - cfg.m);
  Tensor target = g.cos_(g.add_scalar(theta, cfg.m));
  Tensor logits = g.scale(g.set_cols(cosines, in.labels, target), cfg.s);
  return mean_neg_log_softmax(g, logits, in.labels);
}

LossKind loss_kind_from_key(const std::string& key) {
  if (key == "cross_entropy") return LossKind::kCrossEntropy;
  if (key == "a_softmax") return LossKind::kASoftmax;
  if (key == "am_softmax") return LossKind::kAmSoftmax;
  if (key == "arcface") return LossKind::kArcFace;
  throw ConfigError("unknown loss key: \"" + key +
                    "\" (expected cross_entropy, a_softmax, am_softmax, or arcface)");
}

const char* loss_key(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kASoftmax: return "a_softmax";
    case LossKind::kAmSoftmax: return "am_softmax";
    case LossKind::kArcFace: return "arcface";
  }
  throw ContractError("loss_key: invalid kind");
}

MarginConfig default_margin_config(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return {0.0, 1.0};
    case LossKind::kASoftmax: return {4.0, 1.0};
    case LossKind::kAmSoftmax: return {0.35, 30.0};
    case LossKind::kArcFace: return {0.5, 30.0};
  }
  throw ContractError("default_margin_config: invalid kind");
}

Tensor compute_loss(Graph& g, LossKind kind, const LossInput& in, const MarginConfig& cfg) {
  switch (kind) {
    case LossKind::kCrossEntropy: return cross_entropy(g, in);
    case LossKind::kASoftmax: return a_softmax(g, in, cfg);
    case LossKind::kAmSoftmax: return am_softmax(g, in, cfg);
    case LossKind::kArcFace: return arcface(g, in, cfg);
  }
  throw ContractError("compute_loss: invalid kind");
}

}  // namespace nas
