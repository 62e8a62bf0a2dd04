#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "nas/gradcheck.hpp"
#include "nas/losses.hpp"
#include "nas/rng.hpp"
#include "nas/tensor.hpp"

using namespace nas;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Unstabilized softmax cross entropy, safe only for small logits; used as an
// independent reference for the stabilized implementation.
double direct_cross_entropy(const Tensor& x, const Tensor& w, const Tensor& b,
                            const std::vector<std::size_t>& labels) {
  const std::size_t n = x.dim(0), d = x.dim(1), classes = w.dim(1);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t j = 0; j < d; ++j) logits[c] += x.at({i, j}) * w.at({j, c});
      logits[c] += b.data()[c];
    }
    double denom = 0;
    for (double z : logits) denom += std::exp(z);
    total += -std::log(std::exp(logits[labels[i]]) / denom);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("uniform logits give log of the class count") {
  Graph g;
  // Orthogonal embedding against zero weights: every logit is zero.
  Tensor x = Tensor::from_data({1, 3}, {0.3, -0.2, 0.9});
  Tensor w = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4});
  LossInput in{x, {2}, w, b};
  Tensor loss = cross_entropy(g, in);
  CHECK(loss.value() == doctest::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("saturated true-class logit drives the loss to zero") {
  Graph g;
  Tensor x = Tensor::from_data({1, 1}, {1.0});
  Tensor w = Tensor::from_data({1, 3}, {1000.0, 0.0, 0.0});
  Tensor b = Tensor::zeros({3});
  LossInput in{x, {0}, w, b};
  Tensor loss = cross_entropy(g, in);
  CHECK(loss.value() >= 0.0);
  CHECK(loss.value() < 1e-12);
}

TEST_CASE("stabilized cross entropy matches the direct formula at small logits") {
  Rng rng(41);
  Graph g;
  Tensor x = random_tensor({8, 16}, rng, false, -0.5, 0.5);
  Tensor w = random_tensor({16, 10}, rng, false, -0.5, 0.5);
  Tensor b = random_tensor({10}, rng, false, -0.1, 0.1);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 8; ++i) labels.push_back(rng.uniform_int(10));
  LossInput in{x, labels, w, b};
  Tensor loss = cross_entropy(g, in);
  CHECK(loss.value() == doctest::Approx(direct_cross_entropy(x, w, b, labels)).epsilon(1e-10));
}

TEST_CASE("cross entropy gradient passes finite differences") {
  Rng rng(42);
  Tensor x = random_tensor({4, 6}, rng, true);
  Tensor w = random_tensor({6, 5}, rng, true);
  Tensor b = random_tensor({5}, rng, true);
  std::vector<std::size_t> labels = {1, 0, 4, 2};
  auto build = [&](Graph& g) {
    LossInput in{x, labels, w, b};
    return cross_entropy(g, in);
  };
  GradCheckReport rep = check_gradients(build, {x, w, b});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("angular-power margin at m=1 reduces to cross entropy on norm-cosine logits") {
  Rng rng(43);
  Graph g;
  Tensor x = random_tensor({4, 8}, rng, false, -1.0, 1.0);
  Tensor w = random_tensor({8, 5}, rng, false, -1.0, 1.0);
  std::vector<std::size_t> labels = {0, 2, 4, 1};
  LossInput in{x, labels, w, Tensor()};
  Tensor loss = a_softmax(g, in, {1.0, 1.0});

  // Reference: plain cross entropy on ||x|| cos(theta) = x . w_col/||w_col||.
  Graph g2;
  Tensor wn = g2.l2_normalize_cols(w, kNormEps);
  LossInput ref_in{x, labels, wn, Tensor::zeros({5})};
  Tensor ref = cross_entropy(g2, ref_in);
  CHECK(loss.value() == doctest::Approx(ref.value()).epsilon(1e-9));
}

TEST_CASE("angular-power margin function agrees with its closed form at pi over three") {
  // psi(pi/3) at m=2 lies on the k=0 interval: cos(2*pi/3) = -0.5.  Set up
  // one sample whose target angle is exactly pi/3 and read the logit back.
  Graph g;
  Tensor x = Tensor::from_data({1, 2}, {std::cos(M_PI / 3), std::sin(M_PI / 3)});
  Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});  // columns e1, e2
  LossInput in{x, {0}, w, Tensor()};
  // Loss = -log softmax over logits [psi(pi/3), cos(pi/3 - pi/2)... ]; verify
  // through the loss value computed from known logits.
  Tensor loss = a_softmax(g, in, {2.0, 1.0});
  const double target = -0.5;                        // psi(pi/3), ||x|| = 1
  const double other = std::cos(M_PI / 6);           // angle to e2 is pi/6
  const double expect = std::log(1.0 + std::exp(other - target));
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("angular-power margin is continuous at every interval boundary") {
  const double eps = 1e-9;
  for (int m : {2, 3, 4}) {
    for (int k = 1; k < m; ++k) {
      const double boundary = k * M_PI / m;
      auto psi = [&](double theta) {
        const int kk = std::min(m - 1, static_cast<int>(std::floor(theta * m / M_PI)));
        return (kk % 2 == 0 ? 1.0 : -1.0) * std::cos(m * theta) - 2.0 * kk;
      };
      const double left = psi(boundary - eps);
      const double right = psi(boundary + eps);
      CHECK(std::abs(left - right) < 1e-6);

      // The library path: evaluate the loss at angles straddling the
      // boundary and confirm the target logits drift continuously.
      auto loss_at = [&](double theta) {
        Graph g;
        Tensor x = Tensor::from_data({1, 2}, {std::cos(theta), std::sin(theta)});
        Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
        LossInput in{x, {0}, w, Tensor()};
        return a_softmax(g, in, {static_cast<double>(m), 1.0}).value();
      };
      const double dl = boundary < 1e-6 ? 0.0 : loss_at(boundary - 1e-7);
      const double dr = loss_at(std::min(M_PI - 1e-7, boundary + 1e-7));
      CHECK(std::abs(dl - dr) < 1e-5);
    }
  }
}

TEST_CASE("angular-power margin rejects non-integer or non-positive m") {
  Graph g;
  Tensor x = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  LossInput in{x, {0}, w, Tensor()};
  CHECK_THROWS_AS(a_softmax(g, in, {2.5, 1.0}), ConfigError);
  CHECK_THROWS_AS(a_softmax(g, in, {0.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(a_softmax(g, in, {-1.0, 1.0}), ConfigError);
}

TEST_CASE("angular-power margin gradient passes finite differences") {
  Rng rng(44);
  Tensor x = random_tensor({3, 6}, rng, true, -0.9, 0.9);
  Tensor w = random_tensor({6, 4}, rng, true, -0.9, 0.9);
  std::vector<std::size_t> labels = {0, 3, 2};
  auto build = [&](Graph& g) {
    LossInput in{x, labels, w, Tensor()};
    return a_softmax(g, in, {4.0, 1.0});
  };
  GradCheckReport rep = check_gradients(build, {x, w});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("cosine margin at m=0 equals cross entropy on scaled cosines") {
  Rng rng(45);
  Graph g;
  Tensor x = random_tensor({4, 8}, rng, false);
  Tensor w = random_tensor({8, 5}, rng, false);
  std::vector<std::size_t> labels = {0, 1, 2, 3};
  LossInput in{x, labels, w, Tensor()};
  Tensor loss = am_softmax(g, in, {0.0, 7.0});

  Graph g2;
  Tensor xn = g2.l2_normalize_rows(x, kNormEps);
  Tensor wn = g2.l2_normalize_cols(w, kNormEps);
  Tensor cosines = g2.matmul(xn, wn);
  Tensor logits = g2.scale(cosines, 7.0);
  Tensor lse = g2.logsumexp_rows(logits);
  Tensor picked = g2.gather_cols(logits, labels);
  Tensor ref = g2.mean(g2.sub(lse, picked));
  CHECK(loss.value() == doctest::Approx(ref.value()).epsilon(1e-10));
}

TEST_CASE("cosine margin single-sample value is frozen") {
  // Two classes whose cosines to the sample are equal; margin 0.35, scale 1.
  // The loss reduces to ln(1 + e^m); frozen from a high-precision
  // evaluation: 0.8833821554187770.
  Graph g;
  const double c = std::cos(M_PI / 4), s = std::sin(M_PI / 4);
  Tensor x = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor w = Tensor::from_data({2, 2}, {c, c, s, -s});  // both columns at 45 degrees
  LossInput in{x, {0}, w, Tensor()};
  Tensor loss = am_softmax(g, in, {0.35, 1.0});
  CHECK(loss.value() == doctest::Approx(0.8833821554187770).epsilon(1e-12));
  CHECK(loss.value() == doctest::Approx(std::log(1.0 + std::exp(0.35))).epsilon(1e-12));
}

TEST_CASE("cosine margin gradient passes finite differences") {
  Rng rng(46);
  Tensor x = random_tensor({4, 6}, rng, true, -0.9, 0.9);
  Tensor w = random_tensor({6, 5}, rng, true, -0.9, 0.9);
  std::vector<std::size_t> labels = {4, 0, 2, 1};
  auto build = [&](Graph& g) {
    LossInput in{x, labels, w, Tensor()};
    return am_softmax(g, in, {0.35, 30.0});
  };
  GradCheckReport rep = check_gradients(build, {x, w});
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("angular margin at m=0 equals the cosine margin at m=0") {
  Rng rng(47);
  Graph g1, g2;
  Tensor x = random_tensor({3, 5}, rng, false);
  Tensor w = random_tensor({5, 4}, rng, false);
  std::vector<std::size_t> labels = {1, 3, 0};
  LossInput in{x, labels, w, Tensor()};
  const double a = arcface(g1, in, {0.0, 30.0}).value();
  const double b = am_softmax(g2, in, {0.0, 30.0}).value();
  CHECK(a == doctest::Approx(b).epsilon(1e-10));
}

TEST_CASE("angular margin produces an exactly zero target logit at complementary angles") {
  // theta_y = pi/3 with margin pi/6 lands on cos(pi/2) = 0.  Verify through
  // the loss: with the other class at angle pi/6 the logits are known.
  Graph g;
  Tensor x = Tensor::from_data({1, 2}, {std::cos(M_PI / 3), std::sin(M_PI / 3)});
  Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  LossInput in{x, {0}, w, Tensor()};
  const double s = 2.0;
  Tensor loss = arcface(g, in, {M_PI / 6, s});
  const double target = 0.0;                      // s * cos(pi/3 + pi/6) = 0
  const double other = s * std::cos(M_PI / 6);    // unmargined cosine to e2
  const double expect = std::log(1.0 + std::exp(other - target));
  CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("angular margin gradient passes finite differences in the interior") {
  Rng rng(48);
  Tensor x = random_tensor({4, 7}, rng, true, -0.9, 0.9);
  Tensor w = random_tensor({7, 5}, rng, true, -0.9, 0.9);
  std::vector<std::size_t> labels = {2, 4, 0, 3};
  auto build = [&](Graph& g) {
    LossInput in{x, labels, w, Tensor()};
    return arcface(g, in, {0.5, 30.0});
  };
  GradCheckReport rep = check_gradients(build, {x, w});
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("angular margin rejects out-of-range margins and scales") {
  Graph g;
  Tensor x = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor w = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  LossInput in{x, {0}, w, Tensor()};
  CHECK_THROWS_AS(arcface(g, in, {-0.1, 30.0}), ConfigError);
  CHECK_THROWS_AS(arcface(g, in, {M_PI, 30.0}), ConfigError);
  CHECK_THROWS_AS(arcface(g, in, {0.5, 0.0}), ConfigError);
}

TEST_CASE("loss registry round-trips keys and supplies defaults") {
  for (LossKind kind : {LossKind::kCrossEntropy, LossKind::kASoftmax, LossKind::kAmSoftmax,
                        LossKind::kArcFace})
    CHECK(loss_kind_from_key(loss_key(kind)) == kind);
  CHECK_THROWS_AS(loss_kind_from_key("nonsense"), ConfigError);

  MarginConfig am = default_margin_config(LossKind::kAmSoftmax);
  CHECK(am.m == doctest::Approx(0.35));
  CHECK(am.s == doctest::Approx(30.0));
  MarginConfig arc = default_margin_config(LossKind::kArcFace);
  CHECK(arc.m == doctest::Approx(0.5));
  CHECK(arc.s == doctest::Approx(30.0));
  MarginConfig asoft = default_margin_config(LossKind::kASoftmax);
  CHECK(asoft.m == doctest::Approx(4.0));
}

TEST_CASE("dispatcher reaches every loss") {
  Rng rng(49);
  Tensor x = random_tensor({2, 4}, rng, false);
  Tensor w = random_tensor({4, 3}, rng, false);
  Tensor b = Tensor::zeros({3});
  LossInput in{x, {0, 2}, w, b};
  for (LossKind kind : {LossKind::kCrossEntropy, LossKind::kASoftmax, LossKind::kAmSoftmax,
                        LossKind::kArcFace}) {
    Graph g;
    Tensor loss = compute_loss(g, kind, in, default_margin_config(kind));
    CHECK(std::isfinite(loss.value()));
    CHECK(loss.value() > 0.0);
  }
}
