#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "nas/gradcheck.hpp"
#include "nas/nn_ops.hpp"
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

// Reference convolution written as the plainest possible nested loops with
// explicit zero padding; deliberately shares no code with the library.
Tensor naive_conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
                    std::size_t padding) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const std::size_t co = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (ww + 2 * padding - k) / stride + 1;
  Tensor out = Tensor::zeros({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < co; ++f)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = 0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t p = 0; p < k; ++p)
              for (std::size_t q = 0; q < k; ++q) {
                const long sy = static_cast<long>(y * stride + p) - static_cast<long>(padding);
                const long sx = static_cast<long>(z * stride + q) - static_cast<long>(padding);
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) ||
                    sx >= static_cast<long>(ww))
                  continue;
                acc += x.at({b, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)}) *
                       w.at({f, c, p, q});
              }
          out.at({b, f, y, z}) = acc;
        }
  return out;
}

Tensor naive_depthwise(const Tensor& x, const Tensor& w, std::size_t stride,
                       std::size_t padding) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), ww = x.dim(3);
  const std::size_t k = w.dim(1);
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (ww + 2 * padding - k) / stride + 1;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = 0;
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = 0; q < k; ++q) {
              const long sy = static_cast<long>(y * stride + p) - static_cast<long>(padding);
              const long sx = static_cast<long>(z * stride + q) - static_cast<long>(padding);
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(ww))
                continue;
              acc += x.at({b, ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)}) *
                     w.at({ch, p, q});
            }
          out.at({b, ch, y, z}) = acc;
        }
  return out;
}

Tensor naive_pool(const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride,
                  std::size_t padding) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;
  Tensor out = Tensor::zeros({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double best = -1e300, acc = 0;
          std::size_t count = 0;
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t q = 0; q < k; ++q) {
              const long sy = static_cast<long>(y * stride + p) - static_cast<long>(padding);
              const long sx = static_cast<long>(z * stride + q) - static_cast<long>(padding);
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                continue;
              const double v =
                  x.at({b, ch, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)});
              acc += v;
              best = std::max(best, v);
              ++count;
            }
          out.at({b, ch, y, z}) = kind == PoolKind::kMax ? best : acc / static_cast<double>(count);
        }
  return out;
}

}  // namespace

TEST_CASE("separable conv preserves shape under same padding") {
  Rng rng(21);
  Graph g;
  Tensor x = random_tensor({2, 8, 16, 16}, rng, false);
  ConvParams p;
  p.depthwise_kernel = random_tensor({8, 3, 3}, rng, false);
  p.pointwise_kernel = random_tensor({8, 8, 1, 1}, rng, false);
  p.stride = 1;
  p.padding = 1;
  Tensor y = separable_conv(g, x, p);
  CHECK(y.shape() == std::vector<std::size_t>{2, 8, 16, 16});
}

TEST_CASE("delta depthwise and identity pointwise reproduce the input") {
  Rng rng(22);
  Graph g;
  Tensor x = random_tensor({1, 3, 5, 5}, rng, false);
  ConvParams p;
  p.depthwise_kernel = Tensor::zeros({3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) p.depthwise_kernel.at({c, 1, 1}) = 1.0;
  p.pointwise_kernel = Tensor::zeros({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) p.pointwise_kernel.at({c, c, 0, 0}) = 1.0;
  p.stride = 1;
  p.padding = 1;
  Tensor y = separable_conv(g, x, p);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("separable conv matches the nested-loop oracle") {
  Rng rng(23);
  Graph g;
  Tensor x = random_tensor({1, 2, 5, 5}, rng, false);
  ConvParams p;
  p.depthwise_kernel = random_tensor({2, 3, 3}, rng, false);
  p.pointwise_kernel = random_tensor({4, 2, 1, 1}, rng, false);
  p.stride = 1;
  p.padding = 1;
  Tensor y = separable_conv(g, x, p);
  Tensor ref = naive_conv2d(naive_depthwise(x, p.depthwise_kernel, 1, 1),
                            p.pointwise_kernel, 1, 0);
  REQUIRE(y.shape() == ref.shape());
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-10));
}

TEST_CASE("full conv matches the nested-loop oracle across strides and padding") {
  Rng rng(24);
  for (std::size_t stride : {std::size_t{1}, std::size_t{2}})
    for (std::size_t padding : {std::size_t{0}, std::size_t{1}, std::size_t{2}}) {
      Graph g;
      Tensor x = random_tensor({2, 3, 7, 6}, rng, false);
      Tensor w = random_tensor({4, 3, 3, 3}, rng, false);
      Tensor y = conv2d(g, x, w, stride, padding);
      Tensor ref = naive_conv2d(x, w, stride, padding);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-10));
    }
}

TEST_CASE("conv gradients match finite differences") {
  Rng rng(25);
  Tensor x = random_tensor({1, 2, 5, 5}, rng, true);
  Tensor w = random_tensor({3, 2, 3, 3}, rng, true);
  auto build = [&](Graph& g) {
    Tensor y = conv2d(g, x, w, 2, 1);
    return g.sum(g.mul(y, y));
  };
  GradCheckReport rep = check_gradients(build, {x, w}, 1e-5, 32);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("depthwise conv gradients match finite differences") {
  Rng rng(26);
  Tensor x = random_tensor({1, 3, 6, 6}, rng, true);
  Tensor w = random_tensor({3, 3, 3}, rng, true);
  auto build = [&](Graph& g) {
    Tensor y = depthwise_conv2d(g, x, w, 1, 1);
    return g.sum(g.mul(y, y));
  };
  GradCheckReport rep = check_gradients(build, {x, w}, 1e-5, 32);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("average pooling keeps constants constant even with padding") {
  Graph g;
  Tensor x = Tensor::full({1, 2, 6, 6}, 3.25);
  Tensor y = pool(g, x, PoolKind::kAvg, 3, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (double v : y.data()) CHECK(v == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("max pooling picks the maximum and routes its gradient there") {
  Graph g;
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  Tensor y = pool(g, x, PoolKind::kMax, 2, 1, 0);
  CHECK(y.numel() == 1);
  CHECK(y.value() == doctest::Approx(4.0));
  g.backward(g.sum(y));
  CHECK(x.grad() == std::vector<double>{0, 0, 0, 1});
}

TEST_CASE("pooling matches the nested-loop oracle") {
  Rng rng(27);
  Tensor x = random_tensor({1, 1, 6, 6}, rng, false);
  for (PoolKind kind : {PoolKind::kAvg, PoolKind::kMax}) {
    Graph g;
    Tensor y = pool(g, x, kind, 3, 2, 0);
    Tensor ref = naive_pool(x, kind, 3, 2, 0);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("padded pooling matches the nested-loop oracle") {
  Rng rng(28);
  Tensor x = random_tensor({2, 3, 8, 8}, rng, false);
  for (PoolKind kind : {PoolKind::kAvg, PoolKind::kMax}) {
    Graph g;
    Tensor y = pool(g, x, kind, 3, 1, 1);
    Tensor ref = naive_pool(x, kind, 3, 1, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i)
      CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("average pool gradients match finite differences") {
  Rng rng(29);
  Tensor x = random_tensor({1, 2, 6, 6}, rng, true);
  auto build = [&](Graph& g) {
    Tensor y = pool(g, x, PoolKind::kAvg, 3, 1, 1);
    return g.sum(g.mul(y, y));
  };
  GradCheckReport rep = check_gradients(build, {x}, 1e-5, 48);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("batch norm training output matches beta and gamma per channel") {
  Rng rng(30);
  Graph g;
  Tensor x = random_tensor({4, 3, 5, 5}, rng, false, -2.0, 2.0);
  BatchNormState s = BatchNormState::make(3);
  s.gamma.data() = {1.5, 0.5, 2.0};
  s.beta.data() = {0.1, -0.3, 0.7};
  Tensor y = batch_norm(g, x, s, true);
  const std::size_t plane = 4 * 5 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) mean += y.at({n, c, i / 5, i % 5});
    mean /= static_cast<double>(plane);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) {
        const double d = y.at({n, c, i / 5, i % 5}) - mean;
        var += d * d;
      }
    var /= static_cast<double>(plane);
    CHECK(mean == doctest::Approx(s.beta.data()[c]).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(s.gamma.data()[c]).epsilon(1e-4));
  }
}

TEST_CASE("batch norm with unit gamma passes standardized data through") {
  Graph g;
  // Already zero-mean unit-variance per channel (variance is the biased one).
  Tensor x = Tensor::from_data({2, 1, 1, 2}, {-1, 1, 1, -1});
  BatchNormState s = BatchNormState::make(1);
  Tensor y = batch_norm(g, x, s, true);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("batch norm gradients match finite differences in training mode") {
  Rng rng(31);
  Tensor x = random_tensor({3, 2, 4, 4}, rng, true, -1.5, 1.5);
  BatchNormState proto = BatchNormState::make(2);
  Tensor gamma = random_tensor({2}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({2}, rng, true, -0.5, 0.5);
  auto build = [&](Graph& g) {
    BatchNormState s = BatchNormState::make(2);  // fresh running stats per call
    s.gamma = gamma;
    s.beta = beta;
    Tensor y = batch_norm(g, x, s, true);
    return g.sum(g.mul(y, y));
  };
  GradCheckReport rep = check_gradients(build, {x, gamma, beta}, 1e-5, 48);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("batch norm eval mode uses running statistics") {
  Rng rng(32);
  Graph g;
  BatchNormState s = BatchNormState::make(2);
  Tensor x1 = random_tensor({4, 2, 3, 3}, rng, false);
  batch_norm(g, x1, s, true);
  std::vector<double> rm = s.running_mean.data(), rv = s.running_var.data();
  Tensor x2 = random_tensor({4, 2, 3, 3}, rng, false);
  Tensor y = batch_norm(g, x2, s, false);
  CHECK(s.running_mean.data() == rm);  // eval never touches running stats
  CHECK(s.running_var.data() == rv);
  const double expect =
      s.gamma.data()[0] * (x2.at({0, 0, 0, 0}) - rm[0]) / std::sqrt(rv[0] + s.epsilon) +
      s.beta.data()[0];
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batch norm rejects single-sample training batches") {
  Graph g;
  Tensor x = Tensor::zeros({1, 2, 3, 3});
  BatchNormState s = BatchNormState::make(2);
  CHECK_THROWS_AS(batch_norm(g, x, s, true), ContractError);
  CHECK_NOTHROW(batch_norm(g, x, s, false));
}

TEST_CASE("dropblock is the identity at full keep probability") {
  Rng rng(33);
  Graph g;
  Tensor x = random_tensor({2, 3, 8, 8}, rng, false);
  Rng stream(1);
  Tensor y = dropblock(g, x, 3, 1.0, true, stream);
  CHECK(y.data() == x.data());
}

TEST_CASE("dropblock is the identity in eval mode") {
  Rng rng(34);
  Graph g;
  Tensor x = random_tensor({2, 3, 8, 8}, rng, false);
  Rng stream(1);
  Tensor y = dropblock(g, x, 3, 0.5, false, stream);
  CHECK(y.data() == x.data());
}

TEST_CASE("dropblock zeroed fraction tracks one minus keep probability") {
  // Monte-Carlo count: average the zeroed fraction over 100 draws on an
  // 8x8 map and compare against the target drop rate.
  const double keep_prob = 0.9;
  Rng stream(4242);
  double zeroed = 0;
  const int draws = 100;
  for (int d = 0; d < draws; ++d) {
    Graph g;
    Tensor x = Tensor::full({1, 4, 8, 8}, 1.0);
    Tensor y = dropblock(g, x, 3, keep_prob, true, stream);
    std::size_t z = 0;
    for (double v : y.data())
      if (v == 0.0) ++z;
    zeroed += static_cast<double>(z) / static_cast<double>(y.numel());
  }
  zeroed /= draws;
  CHECK(std::abs(zeroed - (1.0 - keep_prob)) < 0.15);
  CHECK(zeroed > 0.0);  // something must actually drop at this rate
}

TEST_CASE("dropblock rescales survivors so the map total is preserved") {
  Rng stream(77);
  Graph g;
  Tensor x = Tensor::full({1, 1, 8, 8}, 2.0);
  Tensor y;
  // Draw until a block lands so the rescale branch is exercised.
  for (int tries = 0; tries < 200; ++tries) {
    Graph gg;
    y = dropblock(gg, x, 3, 0.7, true, stream);
    double total = 0;
    for (double v : y.data()) total += v;
    if (total != 0.0 && y.data() != x.data()) {
      CHECK(total == doctest::Approx(2.0 * 64).epsilon(1e-9));
      return;
    }
  }
  FAIL("dropblock never dropped a block in 200 draws at keep_prob 0.7");
}

TEST_CASE("dropblock gradient flows only through surviving positions") {
  Rng stream(90);
  Graph g;
  Tensor x = Tensor::full({1, 1, 8, 8}, 1.0, true);
  Tensor y = dropblock(g, x, 3, 0.6, true, stream);
  g.backward(g.sum(y));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (y.data()[i] == 0.0)
      CHECK(x.grad()[i] == 0.0);
    else
      CHECK(x.grad()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));  // scale passes through
  }
}

TEST_CASE("global average pooling reduces spatial dims and backpropagates evenly") {
  Graph g;
  Tensor x = Tensor::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40}, true);
  Tensor y = global_avg_pool(g, x);
  REQUIRE(y.shape() == std::vector<std::size_t>{1, 2});
  CHECK(y.at({0, 0}) == doctest::Approx(2.5));
  CHECK(y.at({0, 1}) == doctest::Approx(25.0));
  g.backward(g.sum(y));
  for (double v : x.grad()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}
