#include "nas/gradsweep.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>

#include "nas/gradcheck.hpp"
#include "nas/losses.hpp"
#include "nas/nn_ops.hpp"
#include "nas/rng.hpp"
#include "nas/tensor.hpp"

namespace nas {

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so kinked ops (relu, clamp edges) are never
// probed within a finite-difference step of their corner.
Tensor random_signed(std::vector<std::size_t> shape, Rng& rng, double lo_mag,
                     double hi_mag) {
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (double& v : t.data()) {
    const double mag = rng.uniform(lo_mag, hi_mag);
    v = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return t;
}

// Random fixed cotangent: loss = sum(y * K).  A uniform ones cotangent (plain
// sum) would let coordinate-mixing bugs cancel; a random one does not.
Tensor weighted_sum(Graph& g, const Tensor& y, Rng& rng) {
  std::vector<double> k(y.numel());
  for (double& v : k) v = rng.uniform(0.5, 1.5) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
  return g.sum(g.mul(y, Graph::constant(y.shape(), std::move(k))));
}

using BuildFn = std::function<Tensor(Graph&, std::vector<Tensor>&, Rng&)>;

struct SweepCase {
  const char* name;
  double tolerance;
  std::function<std::vector<Tensor>(Rng&)> make_leaves;
  BuildFn build;
};

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng.uniform_int(classes);
  return labels;
}

std::vector<SweepCase> sweep_cases() {
  std::vector<SweepCase> cases;
  auto add = [&](const char* name, double tol,
                 std::function<std::vector<Tensor>(Rng&)> leaves, BuildFn build) {
    cases.push_back({name, tol, std::move(leaves), std::move(build)});
  };

  auto one = [](Tensor t) { return std::vector<Tensor>{std::move(t)}; };

  add("matmul", 1e-5,
      [one](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.matmul(l[0], l[1]), rng);
      });
  add("add", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.add(l[0], l[1]), rng);
      });
  add("sub", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.sub(l[0], l[1]), rng);
      });
  add("mul", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 5}, rng), random_tensor({2, 5}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.mul(l[0], l[1]), rng);
      });
  add("scale", 1e-5, [one](Rng& rng) { return one(random_tensor({2, 5}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.scale(l[0], 1.7), rng);
      });
  add("add_scalar", 1e-5, [one](Rng& rng) { return one(random_tensor({2, 5}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.add_scalar(l[0], 0.3), rng);
      });
  add("relu", 1e-5,
      [one](Rng& rng) { return one(random_signed({2, 5}, rng, 0.05, 1.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.relu(l[0]), rng);
      });
  add("exp", 1e-5, [one](Rng& rng) { return one(random_tensor({2, 5}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.exp_(l[0]), rng);
      });
  add("log", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, 0.2, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.log_(l[0]), rng);
      });
  add("sin", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -2.0, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.sin_(l[0]), rng);
      });
  add("cos", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -2.0, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.cos_(l[0]), rng);
      });
  add("asin", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -0.9, 0.9)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.asin_(l[0]), rng);
      });
  add("acos", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -0.9, 0.9)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.acos_(l[0]), rng);
      });
  add("tanh", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -2.0, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.tanh_(l[0]), rng);
      });
  add("sigmoid", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, -2.0, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.sigmoid_(l[0]), rng);
      });
  add("pow", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 5}, rng, 0.2, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.pow_(l[0], 1.7), rng);
      });
  add("clamp", 1e-5,
      [one](Rng& rng) {
        // Keep every coordinate at least 0.05 from the clamp edges at ±0.5.
        Tensor t = Tensor::zeros({2, 5}, true);
        for (double& v : t.data()) {
          do {
            v = rng.uniform(-1.0, 1.0);
          } while (std::abs(std::abs(v) - 0.5) < 0.05);
        }
        return one(std::move(t));
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.clamp(l[0], -0.5, 0.5), rng);
      });
  add("sum", 1e-5, [one](Rng& rng) { return one(random_tensor({3, 4}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng&) { return g.sum(l[0]); });
  add("mean", 1e-5, [one](Rng& rng) { return one(random_tensor({3, 4}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng&) { return g.mean(l[0]); });
  add("logsumexp_rows", 1e-5,
      [one](Rng& rng) { return one(random_tensor({3, 6}, rng, -2.0, 2.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.logsumexp_rows(l[0]), rng);
      });
  add("gather_cols", 1e-5, [one](Rng& rng) { return one(random_tensor({3, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.gather_cols(l[0], {0, 2, 5}), rng);
      });
  add("set_cols", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({3, 6}, rng), random_tensor({3}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.set_cols(l[0], {1, 4, 0}, l[1]), rng);
      });
  add("l2_normalize_rows", 1e-5,
      [one](Rng& rng) { return one(random_signed({3, 4}, rng, 0.3, 1.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.l2_normalize_rows(l[0], kNormEps), rng);
      });
  add("l2_normalize_cols", 1e-5,
      [one](Rng& rng) { return one(random_signed({3, 4}, rng, 0.3, 1.0)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.l2_normalize_cols(l[0], kNormEps), rng);
      });
  add("concat_axis1", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.concat_axis1({l[0], l[1]}), rng);
      });
  add("slice_axis1", 1e-5, [one](Rng& rng) { return one(random_tensor({2, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.slice_axis1(l[0], 1, 4), rng);
      });
  add("reshape", 1e-5, [one](Rng& rng) { return one(random_tensor({2, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, g.reshape(l[0], {3, 4}), rng);
      });

  add("conv2d", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 3, 5, 5}, rng),
                                   random_tensor({4, 3, 3, 3}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, conv2d(g, l[0], l[1], 1, 1), rng);
      });
  add("depthwise_conv2d", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 3, 5, 5}, rng),
                                   random_tensor({3, 3, 3}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, depthwise_conv2d(g, l[0], l[1], 1, 1), rng);
      });
  add("separable_conv", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({2, 3, 5, 5}, rng),
                                   random_tensor({3, 3, 3}, rng),
                                   random_tensor({4, 3, 1, 1}, rng)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        ConvParams p;
        p.depthwise_kernel = l[1];
        p.pointwise_kernel = l[2];
        p.stride = 2;
        p.padding = 1;
        return weighted_sum(g, separable_conv(g, l[0], p), rng);
      });
  add("avg_pool", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 2, 6, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, pool(g, l[0], PoolKind::kAvg, 3, 2, 1), rng);
      });
  add("max_pool", 1e-5,
      [one](Rng& rng) {
        // Deterministic per-coordinate offsets keep window entries well
        // separated, so the max never switches within a difference step.
        Tensor t = random_tensor({2, 2, 6, 6}, rng, 0.0, 0.4);
        for (std::size_t i = 0; i < t.numel(); ++i)
          t.data()[i] += static_cast<double>((7 * i) % 36);
        return one(std::move(t));
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, pool(g, l[0], PoolKind::kMax, 3, 2, 1), rng);
      });
  add("batch_norm", 1e-5,
      [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({4, 3, 2, 2}, rng),
                                   random_tensor({3}, rng, 0.5, 1.5),
                                   random_tensor({3}, rng, -0.5, 0.5)};
      },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        BatchNormState s = BatchNormState::make(3);
        s.gamma = l[1];
        s.beta = l[2];
        return weighted_sum(g, batch_norm(g, l[0], s, /*training=*/true), rng);
      });
  add("dropblock", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 3, 6, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        // A fixed mask seed makes the build a pure function of the leaves.
        Rng mask_rng(1234);
        Tensor y = dropblock(g, l[0], 3, 0.9, /*training=*/true, mask_rng);
        return weighted_sum(g, y, rng);
      });
  add("global_avg_pool", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 3, 4, 4}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, global_avg_pool(g, l[0]), rng);
      });
  add("odd_shift_downsample", 1e-5,
      [one](Rng& rng) { return one(random_tensor({2, 3, 6, 6}, rng)); },
      [](Graph& g, std::vector<Tensor>& l, Rng& rng) {
        return weighted_sum(g, odd_shift_downsample(g, l[0]), rng);
      });

  // Losses run against their default (active) margins; embeddings and weights
  // are bounded away from zero so the normalization guards stay inactive.
  auto loss_leaves = [](Rng& rng) {
    return std::vector<Tensor>{random_signed({4, 6}, rng, 0.2, 1.0),
                               random_signed({6, 5}, rng, 0.2, 1.0),
                               random_tensor({5}, rng, -0.3, 0.3)};
  };
  auto loss_case = [&](const char* name, LossKind kind) {
    add(name, 1e-4, loss_leaves,
        [kind](Graph& g, std::vector<Tensor>& l, Rng& rng) {
          LossInput in;
          in.embeddings = l[0];
          in.class_weights = l[1];
          in.bias = l[2];
          in.labels = random_labels(4, 5, rng);
          return compute_loss(g, kind, in, default_margin_config(kind));
        });
  };
  loss_case("loss_cross_entropy", LossKind::kCrossEntropy);
  loss_case("loss_a_softmax", LossKind::kASoftmax);
  loss_case("loss_am_softmax", LossKind::kAmSoftmax);
  loss_case("loss_arcface", LossKind::kArcFace);

  return cases;
}

}  // namespace

std::vector<GradSweepItem> run_gradient_sweep(std::size_t seeds) {
  std::vector<GradSweepItem> items;
  for (const SweepCase& c : sweep_cases()) {
    GradSweepItem item;
    item.name = c.name;
    item.tolerance = c.tolerance;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(0x5eedULL * 1000 + s * 131 + items.size());
      std::vector<Tensor> leaves = c.make_leaves(rng);
      // The build must be deterministic across repeated calls: freeze the
      // rng state it consumes (labels, cotangent) by seeding a copy.
      const std::uint64_t build_seed = rng.uniform_int(1ull << 62);
      auto build = [&](Graph& g) {
        Rng build_rng(build_seed);
        return c.build(g, leaves, build_rng);
      };
      const GradCheckReport rep = check_gradients(build, leaves);
      item.max_rel_err = std::max(item.max_rel_err, rep.max_rel_err);
      ++item.trials;
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace nas
