#include "nas/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

namespace nas {

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding) {
  NAS_CHECK(stride >= 1, ContractError, "window op: stride must be >= 1");
  NAS_CHECK(in + 2 * padding >= k, DimensionError,
            "window op: kernel larger than padded input");
  return (in + 2 * padding - k) / stride + 1;
}

namespace {

// For one kernel tap k_i, the output positions o whose input index
// o*stride + k_i - pad falls inside [0, in).  `off` is that signed offset.
struct TapRange {
  std::size_t lo = 0, hi = 0;
  std::ptrdiff_t off = 0;
};

TapRange tap_range(std::size_t k_i, std::size_t pad, std::size_t stride, std::size_t out,
                   std::size_t in) {
  TapRange r;
  r.off = static_cast<std::ptrdiff_t>(k_i) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  if (r.off < 0) r.lo = static_cast<std::size_t>((-r.off + s - 1) / s);
  const std::ptrdiff_t max_num = static_cast<std::ptrdiff_t>(in) - 1 - r.off;
  r.hi = max_num >= 0 ? std::min(out, static_cast<std::size_t>(max_num / s) + 1) : 0;
  r.lo = std::min(r.lo, r.hi);
  return r;
}

struct ConvDims {
  std::size_t n, c, h, w;      // input
  std::size_t co, kh, kw;      // kernel
  std::size_t oh, ow;          // output
  std::size_t stride, padding;
};

void check_4d(const Tensor& x, const char* op) {
  NAS_CHECK(x.rank() == 4, DimensionError,
            std::string(op) + ": expected [N,C,H,W], got " + x.shape_str());
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t padding) {
  check_4d(x, "conv2d");
  NAS_CHECK(w.rank() == 4, DimensionError, "conv2d: kernel must be [C_out,C_in,kh,kw]");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
             0,        0,        stride,   padding};
  NAS_CHECK(w.dim(1) == d.c, DimensionError,
            "conv2d: channel mismatch, input " + x.shape_str() + " kernel " + w.shape_str());
  d.oh = conv_out_size(d.h, d.kh, stride, padding);
  d.ow = conv_out_size(d.w, d.kw, stride, padding);
  bool rec = false;
  Tensor out = g.make_op_output({d.n, d.co, d.oh, d.ow}, {x, w}, &rec);
  {
    const double* px = x.data().data();
    const double* pw = w.data().data();
    double* po = out.data().data();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t co = 0; co < d.co; ++co) {
        double* oplane = po + (n * d.co + co) * d.oh * d.ow;
        for (std::size_t ci = 0; ci < d.c; ++ci) {
          const double* xplane = px + (n * d.c + ci) * d.h * d.w;
          const double* wplane = pw + (co * d.c + ci) * d.kh * d.kw;
          for (std::size_t ki = 0; ki < d.kh; ++ki) {
            const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
            for (std::size_t kj = 0; kj < d.kw; ++kj) {
              const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
              const double wv = wplane[ki * d.kw + kj];
              if (wv == 0.0) continue;
              for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                const double* xrow =
                    xplane + static_cast<std::size_t>(
                        static_cast<std::ptrdiff_t>(oh * d.stride) + rh.off) * d.w;
                double* orow = oplane + oh * d.ow;
                if (d.stride == 1) {
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                    orow[ow] += wv * xrow[static_cast<std::ptrdiff_t>(ow) + rw.off];
                } else {
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                    orow[ow] += wv * xrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off];
                }
              }
            }
          }
        }
      }
  }
  if (rec)
    g.record([x, w, out, d](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      const double* go = gop->data();
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        const double* pw = w.data().data();
#pragma omp parallel for schedule(static)
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t ci = 0; ci < d.c; ++ci) {
            double* gxplane = gx.data() + (n * d.c + ci) * d.h * d.w;
            for (std::size_t co = 0; co < d.co; ++co) {
              const double* goplane = go + (n * d.co + co) * d.oh * d.ow;
              const double* wplane = pw + (co * d.c + ci) * d.kh * d.kw;
              for (std::size_t ki = 0; ki < d.kh; ++ki) {
                const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
                for (std::size_t kj = 0; kj < d.kw; ++kj) {
                  const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
                  const double wv = wplane[ki * d.kw + kj];
                  if (wv == 0.0) continue;
                  for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                    double* gxrow =
                        gxplane + static_cast<std::size_t>(
                        static_cast<std::ptrdiff_t>(oh * d.stride) + rh.off) * d.w;
                    const double* gorow = goplane + oh * d.ow;
                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                      gxrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off] +=
                          wv * gorow[ow];
                  }
                }
              }
            }
          }
      }
      if (w.requires_grad()) {
        auto& gw = ctx.sink(w);
        const double* px = x.data().data();
#pragma omp parallel for schedule(static)
        for (std::size_t co = 0; co < d.co; ++co)
          for (std::size_t ci = 0; ci < d.c; ++ci) {
            double* gwplane = gw.data() + (co * d.c + ci) * d.kh * d.kw;
            for (std::size_t ki = 0; ki < d.kh; ++ki) {
              const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
              for (std::size_t kj = 0; kj < d.kw; ++kj) {
                const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
                double acc = 0.0;
                for (std::size_t n = 0; n < d.n; ++n) {
                  const double* xplane = px + (n * d.c + ci) * d.h * d.w;
                  const double* goplane = go + (n * d.co + co) * d.oh * d.ow;
                  for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                    const double* xrow =
                        xplane + static_cast<std::size_t>(
                        static_cast<std::ptrdiff_t>(oh * d.stride) + rh.off) * d.w;
                    const double* gorow = goplane + oh * d.ow;
                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                      acc += gorow[ow] *
                             xrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off];
                  }
                }
                gwplane[ki * d.kw + kj] += acc;
              }
            }
          }
      }
    });
  return out;
}

Tensor depthwise_conv2d(Graph& g, const Tensor& x, const Tensor& w, std::size_t stride,
                        std::size_t padding) {
  check_4d(x, "depthwise_conv2d");
  NAS_CHECK(w.rank() == 3, DimensionError, "depthwise_conv2d: kernel must be [C,k,k]");
  NAS_CHECK(w.dim(0) == x.dim(1), DimensionError,
            "depthwise_conv2d: channel mismatch, input " + x.shape_str() + " kernel " +
                w.shape_str());
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(1), w.dim(1), w.dim(2),
             0,        0,        stride,   padding};
  d.oh = conv_out_size(d.h, d.kh, stride, padding);
  d.ow = conv_out_size(d.w, d.kw, stride, padding);
  bool rec = false;
  Tensor out = g.make_op_output({d.n, d.c, d.oh, d.ow}, {x, w}, &rec);
  {
    const double* px = x.data().data();
    const double* pw = w.data().data();
    double* po = out.data().data();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < d.n; ++n)
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* xplane = px + (n * d.c + c) * d.h * d.w;
        const double* wplane = pw + c * d.kh * d.kw;
        double* oplane = po + (n * d.c + c) * d.oh * d.ow;
        for (std::size_t ki = 0; ki < d.kh; ++ki) {
          const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
          for (std::size_t kj = 0; kj < d.kw; ++kj) {
            const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
            const double wv = wplane[ki * d.kw + kj];
            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
              const double* xrow =
                  xplane +
                  (oh * d.stride + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(0) +
                                                            rh.off)) *
                      d.w;
              double* orow = oplane + oh * d.ow;
              for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                orow[ow] += wv * xrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off];
            }
          }
        }
      }
  }
  if (rec)
    g.record([x, w, out, d](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      const double* go = gop->data();
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        const double* pw = w.data().data();
#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t c = 0; c < d.c; ++c) {
            double* gxplane = gx.data() + (n * d.c + c) * d.h * d.w;
            const double* goplane = go + (n * d.c + c) * d.oh * d.ow;
            const double* wplane = pw + c * d.kh * d.kw;
            for (std::size_t ki = 0; ki < d.kh; ++ki) {
              const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
              for (std::size_t kj = 0; kj < d.kw; ++kj) {
                const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
                const double wv = wplane[ki * d.kw + kj];
                for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                  double* gxrow =
                      gxplane + static_cast<std::size_t>(
                        static_cast<std::ptrdiff_t>(oh * d.stride) + rh.off) * d.w;
                  const double* gorow = goplane + oh * d.ow;
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                    gxrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off] += wv * gorow[ow];
                }
              }
            }
          }
      }
      if (w.requires_grad()) {
        auto& gw = ctx.sink(w);
        const double* px = x.data().data();
#pragma omp parallel for schedule(static)
        for (std::size_t c = 0; c < d.c; ++c) {
          double* gwplane = gw.data() + c * d.kh * d.kw;
          for (std::size_t ki = 0; ki < d.kh; ++ki) {
            const TapRange rh = tap_range(ki, d.padding, d.stride, d.oh, d.h);
            for (std::size_t kj = 0; kj < d.kw; ++kj) {
              const TapRange rw = tap_range(kj, d.padding, d.stride, d.ow, d.w);
              double acc = 0.0;
              for (std::size_t n = 0; n < d.n; ++n) {
                const double* xplane = px + (n * d.c + c) * d.h * d.w;
                const double* goplane = go + (n * d.c + c) * d.oh * d.ow;
                for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                  const double* xrow =
                      xplane + static_cast<std::size_t>(
                        static_cast<std::ptrdiff_t>(oh * d.stride) + rh.off) * d.w;
                  const double* gorow = goplane + oh * d.ow;
                  for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                    acc += gorow[ow] * xrow[static_cast<std::ptrdiff_t>(ow * d.stride) + rw.off];
                }
              }
              gwplane[ki * d.kw + kj] += acc;
            }
          }
        }
      }
    });
  return out;
}

Tensor separable_conv(Graph& g, const Tensor& x, const ConvParams& p) {
  NAS_CHECK(p.depthwise_kernel.rank() == 3 && p.depthwise_kernel.dim(1) == p.depthwise_kernel.dim(2),
            DimensionError, "separable_conv: depthwise kernel must be [C,k,k]");
  const std::size_t k = p.depthwise_kernel.dim(1);
  NAS_CHECK(k % 2 == 1, ContractError, "separable_conv: kernel size must be odd");
  Tensor mid = depthwise_conv2d(g, x, p.depthwise_kernel, p.stride, p.padding);
  return conv2d(g, mid, p.pointwise_kernel, 1, 0);
}

Tensor pool(Graph& g, const Tensor& x, PoolKind kind, std::size_t k, std::size_t stride,
            std::size_t padding) {
  check_4d(x, "pool");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  NAS_CHECK(k >= 1 && k <= H + 2 * padding && k <= W + 2 * padding, DimensionError,
            "pool: window larger than padded input " + x.shape_str());
  NAS_CHECK(padding < k, DimensionError, "pool: padding must be smaller than the window");
  const std::size_t OH = conv_out_size(H, k, stride, padding);
  const std::size_t OW = conv_out_size(W, k, stride, padding);
  bool rec = false;
  Tensor out = g.make_op_output({N, C, OH, OW}, {x}, &rec);

  // For max pooling the backward pass routes each output's gradient to the
  // first maximal input position (row-major window order); remember it.
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == PoolKind::kMax) argmax->assign(out.numel(), 0);

  const double* px = x.data().data();
  double* po = out.data().data();
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* xplane = px + (n * C + c) * H * W;
      double* oplane = po + (n * C + c) * OH * OW;
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(oh * stride) -
                                    static_cast<std::ptrdiff_t>(padding);
          const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(ow * stride) -
                                    static_cast<std::ptrdiff_t>(padding);
          const std::size_t h_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(h0, 0));
          const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(w0, 0));
          const std::size_t h_hi = std::min<std::size_t>(H, static_cast<std::size_t>(
                                                                h0 + static_cast<std::ptrdiff_t>(k)));
          const std::size_t w_hi = std::min<std::size_t>(W, static_cast<std::size_t>(
                                                                w0 + static_cast<std::ptrdiff_t>(k)));
          const std::size_t oidx = (n * C + c) * OH * OW + oh * OW + ow;
          if (kind == PoolKind::kAvg) {
            double s = 0.0;
            for (std::size_t ih = h_lo; ih < h_hi; ++ih)
              for (std::size_t iw = w_lo; iw < w_hi; ++iw) s += xplane[ih * W + iw];
            const double count = static_cast<double>((h_hi - h_lo) * (w_hi - w_lo));
            oplane[oh * OW + ow] = s / count;
          } else {
            double best = xplane[h_lo * W + w_lo];
            std::size_t best_idx = h_lo * W + w_lo;
            for (std::size_t ih = h_lo; ih < h_hi; ++ih)
              for (std::size_t iw = w_lo; iw < w_hi; ++iw) {
                const double v = xplane[ih * W + iw];
                if (v > best) {
                  best = v;
                  best_idx = ih * W + iw;
                }
              }
            oplane[oh * OW + ow] = best;
            (*argmax)[oidx] = (n * C + c) * H * W + best_idx;
          }
        }
    }

  if (rec)
    g.record([x, out, argmax, kind, k, stride, padding, N, C, H, W, OH, OW](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      const double* go = gop->data();
      auto& gx = ctx.sink(x);
      if (kind == PoolKind::kMax) {
        for (std::size_t o = 0; o < gop->size(); ++o) gx[(*argmax)[o]] += go[o];
        return;
      }
#pragma omp parallel for collapse(2) schedule(static)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          double* gxplane = gx.data() + (n * C + c) * H * W;
          const double* goplane = go + (n * C + c) * OH * OW;
          for (std::size_t oh = 0; oh < OH; ++oh)
            for (std::size_t ow = 0; ow < OW; ++ow) {
              const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(oh * stride) -
                                        static_cast<std::ptrdiff_t>(padding);
              const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(ow * stride) -
                                        static_cast<std::ptrdiff_t>(padding);
              const std::size_t h_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(h0, 0));
              const std::size_t w_lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(w0, 0));
              const std::size_t h_hi = std::min<std::size_t>(
                  H, static_cast<std::size_t>(h0 + static_cast<std::ptrdiff_t>(k)));
              const std::size_t w_hi = std::min<std::size_t>(
                  W, static_cast<std::size_t>(w0 + static_cast<std::ptrdiff_t>(k)));
              const double gv = goplane[oh * OW + ow] /
                                static_cast<double>((h_hi - h_lo) * (w_hi - w_lo));
              for (std::size_t ih = h_lo; ih < h_hi; ++ih)
                for (std::size_t iw = w_lo; iw < w_hi; ++iw) gxplane[ih * W + iw] += gv;
            }
        }
    });
  return out;
}

BatchNormState BatchNormState::make(std::size_t channels) {
  BatchNormState s;
  s.gamma = Tensor::full({channels}, 1.0, true);
  s.beta = Tensor::zeros({channels}, true);
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  return s;
}

Tensor batch_norm(Graph& g, const Tensor& x, BatchNormState& s, bool training) {
  check_4d(x, "batch_norm");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  NAS_CHECK(s.gamma.numel() == C && s.beta.numel() == C && s.running_mean.numel() == C &&
                s.running_var.numel() == C,
            DimensionError, "batch_norm: state channel count mismatch");
  NAS_CHECK(!training || N >= 2, ContractError,
            "batch_norm: training mode requires batch size >= 2");
  const std::size_t M = N * H * W;  // per-channel group size
  const std::size_t plane = H * W;

  auto mean = std::make_shared<std::vector<double>>(C, 0.0);
  auto invstd = std::make_shared<std::vector<double>>(C, 0.0);
  if (training) {
#pragma omp parallel for schedule(static)
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* p = x.data().data() + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += p[i] * p[i];
        }
      }
      const double m = sum / static_cast<double>(M);
      const double var = std::max(0.0, sq / static_cast<double>(M) - m * m);
      (*mean)[c] = m;
      (*invstd)[c] = 1.0 / std::sqrt(var + s.epsilon);
      s.running_mean.data()[c] = s.momentum * s.running_mean.data()[c] + (1.0 - s.momentum) * m;
      s.running_var.data()[c] = s.momentum * s.running_var.data()[c] + (1.0 - s.momentum) * var;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = s.running_mean.data()[c];
      NAS_CHECK(s.running_var.data()[c] >= 0.0, ContractError,
                "batch_norm: negative running variance");
      (*invstd)[c] = 1.0 / std::sqrt(s.running_var.data()[c] + s.epsilon);
    }
  }

  Tensor gamma = s.gamma, beta = s.beta;
  bool rec = false;
  Tensor out = g.make_op_output({N, C, H, W}, {x, gamma, beta}, &rec);
  {
    const double* px = x.data().data();
    double* po = out.data().data();
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double scale = gamma.data()[c] * (*invstd)[c];
        const double shift = beta.data()[c] - scale * (*mean)[c];
        const double* xp = px + (n * C + c) * plane;
        double* op = po + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) op[i] = scale * xp[i] + shift;
      }
  }

  if (rec)
    g.record([x, gamma, beta, out, mean, invstd, training, N, C, plane, M](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      const double* go = gop->data();
      const double* px = x.data().data();
      // Per-channel reductions used by every input's gradient.
      std::vector<double> sum_go(C, 0.0), sum_go_xhat(C, 0.0);
#pragma omp parallel for schedule(static)
      for (std::size_t c = 0; c < C; ++c) {
        double sg = 0.0, sgx = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const double* gp = go + (n * C + c) * plane;
          const double* xp = px + (n * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            sg += gp[i];
            sgx += gp[i] * (xp[i] - (*mean)[c]) * (*invstd)[c];
          }
        }
        sum_go[c] = sg;
        sum_go_xhat[c] = sgx;
      }
      if (gamma.requires_grad()) {
        auto& gg = ctx.sink(gamma);
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_go_xhat[c];
      }
      if (beta.requires_grad()) {
        auto& gb = ctx.sink(beta);
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_go[c];
      }
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        const double invM = 1.0 / static_cast<double>(M);
#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const double gsc = gamma.data()[c] * (*invstd)[c];
            const double* gp = go + (n * C + c) * plane;
            const double* xp = px + (n * C + c) * plane;
            double* gxp = gx.data() + (n * C + c) * plane;
            if (training) {
              const double mean_go = sum_go[c] * invM;
              const double mean_go_xhat = sum_go_xhat[c] * invM;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (xp[i] - (*mean)[c]) * (*invstd)[c];
                gxp[i] += gsc * (gp[i] - mean_go - xhat * mean_go_xhat);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) gxp[i] += gsc * gp[i];
            }
          }
      }
    });
  return out;
}

Tensor dropblock(Graph& g, const Tensor& x, std::size_t block_size, double keep_prob,
                 bool training, Rng& rng) {
  check_4d(x, "dropblock");
  NAS_CHECK(keep_prob > 0.0 && keep_prob <= 1.0, ContractError,
            "dropblock: keep_prob must lie in (0, 1]");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  NAS_CHECK(block_size >= 1 && block_size <= std::min(H, W), DimensionError,
            "dropblock: block_size exceeds feature map " + x.shape_str());
  if (!training || keep_prob >= 1.0) return x;

  const std::size_t vh = H - block_size + 1, vw = W - block_size + 1;
  const double gamma = (1.0 - keep_prob) / static_cast<double>(block_size * block_size) *
                       (static_cast<double>(H * W) / static_cast<double>(vh * vw));

  // Elementwise multiplier: 0 on dropped positions, total/kept on survivors.
  auto mult = std::make_shared<std::vector<double>>(x.numel(), 1.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* map = mult->data() + (n * C + c) * H * W;
      for (std::size_t i = 0; i < vh; ++i)
        for (std::size_t j = 0; j < vw; ++j)
          if (rng.uniform01() < gamma)
            for (std::size_t bi = 0; bi < block_size; ++bi)
              for (std::size_t bj = 0; bj < block_size; ++bj) map[(i + bi) * W + (j + bj)] = 0.0;
      std::size_t kept = 0;
      for (std::size_t i = 0; i < H * W; ++i) kept += map[i] != 0.0 ? 1 : 0;
      const double scale =
          kept > 0 ? static_cast<double>(H * W) / static_cast<double>(kept) : 0.0;
      for (std::size_t i = 0; i < H * W; ++i) map[i] *= scale;
    }

  bool rec = false;
  Tensor out = g.make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] * (*mult)[i];
  if (rec)
    g.record([x, out, mult](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < gop->size(); ++i) gx[i] += (*gop)[i] * (*mult)[i];
    });
  return out;
}

Tensor global_avg_pool(Graph& g, const Tensor& x) {
  check_4d(x, "global_avg_pool");
  const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  bool rec = false;
  Tensor out = g.make_op_output({N, C}, {x}, &rec);
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double* p = x.data().data() + (n * C + c) * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.data()[n * C + c] = s * inv;
    }
  if (rec)
    g.record([x, out, N, C, plane, inv](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      auto& gx = ctx.sink(x);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const double gv = (*gop)[n * C + c] * inv;
          double* p = gx.data() + (n * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
        }
    });
  return out;
}

Tensor odd_shift_downsample(Graph& g, const Tensor& x) {
  check_4d(x, "odd_shift_downsample");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  NAS_CHECK(H % 2 == 0 && W % 2 == 0, DimensionError,
            "odd_shift_downsample: spatial dims must be even");
  const std::size_t OH = H / 2, OW = W / 2;
  bool rec = false;
  Tensor out = g.make_op_output({N, C, OH, OW}, {x}, &rec);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* xp = x.data().data() + nc * H * W;
    double* op = out.data().data() + nc * OH * OW;
    for (std::size_t a = 0; a < OH; ++a)
      for (std::size_t b = 0; b < OW; ++b)
        op[a * OW + b] = xp[(2 * a + 1) * W + (2 * b + 1)];
  }
  if (rec)
    g.record([x, out, N, C, H, W, OH, OW](BackwardCtx& ctx) {
      const std::vector<double>* gop = ctx.get(out);
      if (!gop) return;
      auto& gx = ctx.sink(x);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        double* gxp = gx.data() + nc * H * W;
        const double* gp = gop->data() + nc * OH * OW;
        for (std::size_t a = 0; a < OH; ++a)
          for (std::size_t b = 0; b < OW; ++b)
            gxp[(2 * a + 1) * W + (2 * b + 1)] += gp[a * OW + b];
      }
    });
  return out;
}

}  // namespace nas
