#pragma once

#include <cstddef>

#include "nas/rng.hpp"
#include "nas/tensor.hpp"

namespace nas {

// Parameters of one depthwise-separable convolution: a per-channel k×k
// depthwise kernel followed by a 1×1 pointwise kernel that mixes channels.
struct ConvParams {
  Tensor depthwise_kernel;  // [C, k, k]
  Tensor pointwise_kernel;  // [C_out, C_in, 1, 1]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

enum class PoolKind { kAvg, kMax };

// Affine batch normalization with running statistics.  gamma/beta are
// trainable; running stats are plain buffers updated in training mode:
// running <- momentum * running + (1 - momentum) * batch_stat.
struct BatchNormState {
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormState make(std::size_t channels);
};

// Full convolution, kernel [C_out, C_in, kh, kw], no bias (an affine batch
// norm always follows in this architecture).
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t padding);

// Depthwise convolution, kernel [C, k, k]: channel c convolves only with
// kernel slice c.
Tensor depthwise_conv2d(Graph& g, const Tensor& x, const Tensor& w, std::size_t stride,
                        std::size_t padding);

// Depthwise followed by pointwise.  Stride/padding apply to the depthwise
// stage; the pointwise stage is always 1×1 stride 1.
Tensor separable_conv(Graph& g, const Tensor& x, const ConvParams& p);

// Window pooling.  Average pooling divides by the number of in-bounds
// positions (padding excluded), so constant inputs stay constant under
// same-padding.  Max pooling routes gradient to the first maximum in
// row-major window order.
Tensor pool(Graph& g, const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride,
            std::size_t padding = 0);

Tensor batch_norm(Graph& g, const Tensor& x, BatchNormState& s, bool training);

// Structured dropout: zeroes block_size × block_size squares around seed
// positions sampled per feature map, then rescales survivors per map by
// total/kept.  Identity in eval mode or at keep_prob = 1.
Tensor dropblock(Graph& g, const Tensor& x, std::size_t block_size, double keep_prob,
                 bool training, Rng& rng);

Tensor global_avg_pool(Graph& g, const Tensor& x);  // [N,C,H,W] -> [N,C]

// Stride-2 subsample reading odd indices only: out[a,b] = x[2a+1, 2b+1].
// The one-pixel shift toward the lower right gives a downsampling grid
// disjoint from plain stride-2 sampling.  Requires even spatial dims.
Tensor odd_shift_downsample(Graph& g, const Tensor& x);

// Output spatial size of a windowed op: floor((in + 2*padding - k)/stride) + 1.
std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding);

}  // namespace nas
