#include "nas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nas {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  NAS_CHECK(shape_numel(shape) == data.size(), DimensionError,
            "from_data: shape does not match data length");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() {
  NAS_CHECK(defined(), ContractError, "grad() on undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  NAS_CHECK(has_grad(), ContractError, "grad() read before any backward reached this tensor");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (defined() && !impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::value() const {
  NAS_CHECK(defined() && numel() == 1, ContractError, "value() requires a one-element tensor");
  return impl_->data[0];
}

static std::size_t flat_index(const std::vector<std::size_t>& shape,
                              std::initializer_list<std::size_t> idx) {
  NAS_CHECK(idx.size() == shape.size(), DimensionError, "at(): wrong index rank");
  std::size_t flat = 0;
  std::size_t d = 0;
  for (std::size_t i : idx) {
    NAS_CHECK(i < shape[d], DimensionError, "at(): index out of range");
    flat = flat * shape[d] + i;
    ++d;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return impl_->data[flat_index(impl_->shape, idx)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return impl_->data[flat_index(impl_->shape, idx)];
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < impl_->shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(impl_->shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// BackwardCtx

const std::vector<double>* BackwardCtx::get(const Tensor& t) const {
  auto it = slots_.find(t.impl());
  return it == slots_.end() ? nullptr : &it->second.pending;
}

std::vector<double>& BackwardCtx::sink(const Tensor& t) {
  auto& slot = slots_[t.impl()];
  if (!slot.tensor.defined()) {
    slot.tensor = t;
    slot.pending.assign(t.numel(), 0.0);
  }
  return slot.pending;
}

void BackwardCtx::seed(const Tensor& t, double weight) {
  auto& pending = sink(t);
  for (double& v : pending) v += weight;
}

void BackwardCtx::flush() {
  for (auto& [impl, slot] : slots_) {
    if (!impl->requires_grad) continue;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (std::size_t i = 0; i < slot.pending.size(); ++i)
      impl->grad[i] += slot.pending[i];
  }
  slots_.clear();
}

// ---------------------------------------------------------------------------
// Graph core

void Graph::record(std::function<void(BackwardCtx&)> fn) {
  tape_.push_back(std::move(fn));
}

void Graph::backward(const Tensor& root) {
  backward_weighted({{root, 1.0}});
}

void Graph::backward_weighted(const std::vector<std::pair<Tensor, double>>& seeds) {
  NAS_CHECK(!seeds.empty(), ContractError, "backward: no roots given");
  BackwardCtx ctx;
  for (const auto& [root, weight] : seeds) {
    NAS_CHECK(root.defined() && root.numel() == 1, ContractError,
              "backward: root must be a one-element tensor");
    NAS_CHECK(root.requires_grad(), ContractError,
              "backward: root does not require grad (was the tape recording?)");
    ctx.seed(root, weight);
  }
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)(ctx);
  ctx.flush();
}

Tensor Graph::constant(std::vector<std::size_t> shape, std::vector<double> data) {
  return Tensor::from_data(std::move(shape), std::move(data), false);
}

Tensor Graph::make_op_output(std::vector<std::size_t> shape,
                             std::initializer_list<Tensor> inputs, bool* record_tape) {
  bool any_grad = false;
  for (const Tensor& t : inputs) {
    NAS_CHECK(t.defined(), ContractError, "op input is undefined");
    any_grad = any_grad || t.requires_grad();
  }
  const bool rec = recording_ && any_grad;
  *record_tape = rec;
  return Tensor::zeros(std::move(shape), rec);
}

// ---------------------------------------------------------------------------
// Primitive ops

namespace {

// Shorthand for the common pattern: skip the closure when no gradient has
// reached the output, otherwise fetch it.
#define NAS_TAKE_OUT_GRAD(ctx, out, name)        \
  const std::vector<double>* go_ = (ctx).get(out); \
  if (go_ == nullptr) return;                      \
  const std::vector<double>& name = *go_;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  NAS_CHECK(a.shape() == b.shape(), DimensionError,
            std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  NAS_CHECK(a.rank() == 2 && b.rank() == 2, DimensionError, "matmul: inputs must be rank 2");
  NAS_CHECK(a.dim(1) == b.dim(0), DimensionError,
            "matmul: inner dimensions disagree " + a.shape_str() + " x " + b.shape_str());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  bool rec = false;
  Tensor out = make_op_output({m, n}, {a, b}, &rec);
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        const double* prow = pb + kk * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * prow[j];
      }
  }
  if (rec)
    record([a, b, out, m, k, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (a.requires_grad()) {
        auto& ga = ctx.sink(a);
        const double* pb = b.data().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = go[i * n + j];
            const double* prow = pb + j;  // column j of b, strided
            for (std::size_t kk = 0; kk < k; ++kk) ga[i * k + kk] += gv * prow[kk * n];
          }
      }
      if (b.requires_grad()) {
        auto& gb = ctx.sink(b);
        const double* pa = a.data().data();
        for (std::size_t kk = 0; kk < k; ++kk)
          for (std::size_t i = 0; i < m; ++i) {
            const double av = pa[i * k + kk];
            const double* grow = go.data() + i * n;
            double* brow = gb.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    });
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  bool rec = false;
  Tensor out = make_op_output(a.shape(), {a, b}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (rec)
    record([a, b, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (a.requires_grad()) {
        auto& ga = ctx.sink(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = ctx.sink(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  bool rec = false;
  Tensor out = make_op_output(a.shape(), {a, b}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (rec)
    record([a, b, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (a.requires_grad()) {
        auto& ga = ctx.sink(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto& gb = ctx.sink(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  bool rec = false;
  Tensor out = make_op_output(a.shape(), {a, b}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (rec)
    record([a, b, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (a.requires_grad()) {
        auto& ga = ctx.sink(a);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = ctx.sink(b);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.data()[i];
      }
    });
  return out;
}

Tensor Graph::add_rowvec(const Tensor& x, const Tensor& rowv) {
  NAS_CHECK(x.rank() == 2, DimensionError, "add_rowvec: x must be rank 2");
  NAS_CHECK(rowv.rank() == 1 && rowv.dim(0) == x.dim(1), DimensionError,
            "add_rowvec: vector length must equal column count");
  const std::size_t m = x.dim(0), n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x, rowv}, &rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = x.data()[i * n + j] + rowv.data()[j];
  if (rec)
    record([x, rowv, out, m, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (rowv.requires_grad()) {
        auto& gv = ctx.sink(rowv);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += go[i * n + j];
      }
    });
  return out;
}

Tensor Graph::sub_colvec(const Tensor& x, const Tensor& colv) {
  NAS_CHECK(x.rank() == 2, DimensionError, "sub_colvec: x must be rank 2");
  NAS_CHECK(colv.rank() == 1 && colv.dim(0) == x.dim(0), DimensionError,
            "sub_colvec: vector length must equal row count");
  const std::size_t m = x.dim(0), n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x, colv}, &rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = x.data()[i * n + j] - colv.data()[i];
  if (rec)
    record([x, colv, out, m, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (colv.requires_grad()) {
        auto& gv = ctx.sink(colv);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[i] -= go[i * n + j];
      }
    });
  return out;
}

Tensor Graph::mul_colvec(const Tensor& x, const Tensor& colv) {
  NAS_CHECK(x.rank() == 2, DimensionError, "mul_colvec: x must be rank 2");
  NAS_CHECK(colv.rank() == 1 && colv.dim(0) == x.dim(0), DimensionError,
            "mul_colvec: vector length must equal row count");
  const std::size_t m = x.dim(0), n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x, colv}, &rec);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.data()[i * n + j] = x.data()[i * n + j] * colv.data()[i];
  if (rec)
    record([x, colv, out, m, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i * n + j] * colv.data()[i];
      }
      if (colv.requires_grad()) {
        auto& gv = ctx.sink(colv);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[i] += go[i * n + j] * x.data()[i * n + j];
      }
    });
  return out;
}

Tensor Graph::scale(const Tensor& x, double s) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] * s;
  if (rec)
    record([x, out, s](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * s;
    });
  return out;
}

Tensor Graph::add_scalar(const Tensor& x, double c) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] + c;
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  return out;
}

Tensor Graph::relu(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (x.data()[i] > 0.0) gx[i] += go[i];
    });
  return out;
}

// Shared scaffold for elementwise y = f(x) ops whose derivative is computable
// from x and y.
Tensor Graph::exp_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::exp(x.data()[i]);
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * out.data()[i];
    });
  return out;
}

Tensor Graph::log_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    NAS_CHECK(x.data()[i] > 0.0, DomainError, "log: input must be positive");
    out.data()[i] = std::log(x.data()[i]);
  }
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / x.data()[i];
    });
  return out;
}

Tensor Graph::sin_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::sin(x.data()[i]);
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * std::cos(x.data()[i]);
    });
  return out;
}

Tensor Graph::cos_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::cos(x.data()[i]);
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] -= go[i] * std::sin(x.data()[i]);
    });
  return out;
}

Tensor Graph::asin_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    NAS_CHECK(std::abs(x.data()[i]) <= 1.0, DomainError, "asin: input outside [-1, 1]");
    out.data()[i] = std::asin(x.data()[i]);
  }
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double v = x.data()[i];
        gx[i] += go[i] / std::sqrt(1.0 - v * v);
      }
    });
  return out;
}

Tensor Graph::acos_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    NAS_CHECK(std::abs(x.data()[i]) <= 1.0, DomainError, "acos: input outside [-1, 1]");
    out.data()[i] = std::acos(x.data()[i]);
  }
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double v = x.data()[i];
        gx[i] -= go[i] / std::sqrt(1.0 - v * v);
      }
    });
  return out;
}

Tensor Graph::tanh_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double y = out.data()[i];
        gx[i] += go[i] * (1.0 - y * y);
      }
    });
  return out;
}

Tensor Graph::sigmoid_(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double y = out.data()[i];
        gx[i] += go[i] * y * (1.0 - y);
      }
    });
  return out;
}

Tensor Graph::pow_(const Tensor& x, double exponent) {
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    NAS_CHECK(x.data()[i] > 0.0 || exponent == std::floor(exponent), DomainError,
              "pow: non-integer exponent requires positive base");
    out.data()[i] = std::pow(x.data()[i], exponent);
  }
  if (rec)
    record([x, out, exponent](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i)
        gx[i] += go[i] * exponent * std::pow(x.data()[i], exponent - 1.0);
    });
  return out;
}

Tensor Graph::clamp(const Tensor& x, double lo, double hi) {
  NAS_CHECK(lo <= hi, ContractError, "clamp: lo must not exceed hi");
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  for (std::size_t i = 0; i < out.numel(); ++i)
    out.data()[i] = std::min(hi, std::max(lo, x.data()[i]));
  if (rec)
    record([x, out, lo, hi](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double v = x.data()[i];
        if (v >= lo && v <= hi) gx[i] += go[i];
      }
    });
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  bool rec = false;
  Tensor out = make_op_output({1}, {x}, &rec);
  out.data()[0] = std::accumulate(x.data().begin(), x.data().end(), 0.0);
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (double& g : gx) g += go[0];
    });
  return out;
}

Tensor Graph::mean(const Tensor& x) {
  NAS_CHECK(x.numel() > 0, DimensionError, "mean: empty tensor");
  bool rec = false;
  Tensor out = make_op_output({1}, {x}, &rec);
  out.data()[0] =
      std::accumulate(x.data().begin(), x.data().end(), 0.0) / static_cast<double>(x.numel());
  if (rec) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    record([x, out, inv](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (double& g : gx) g += go[0] * inv;
    });
  }
  return out;
}

Tensor Graph::logsumexp_rows(const Tensor& x) {
  NAS_CHECK(x.rank() == 2, DimensionError, "logsumexp_rows: x must be rank 2");
  const std::size_t m = x.dim(0), n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output({m}, {x}, &rec);
  for (std::size_t i = 0; i < m; ++i) {
    const double* px = x.data().data() + i * n;
    double mx = px[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, px[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(px[j] - mx);
    out.data()[i] = mx + std::log(s);
  }
  if (rec)
    record([x, out, m, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < m; ++i) {
        const double* px = x.data().data() + i * n;
        const double lse = out.data()[i];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i] * std::exp(px[j] - lse);
      }
    });
  return out;
}

Tensor Graph::gather_cols(const Tensor& x, const std::vector<std::size_t>& idx) {
  NAS_CHECK(x.rank() == 2, DimensionError, "gather_cols: x must be rank 2");
  const std::size_t m = x.dim(0), n = x.dim(1);
  NAS_CHECK(idx.size() == m, DimensionError, "gather_cols: one index per row required");
  for (std::size_t i : idx)
    NAS_CHECK(i < n, DimensionError, "gather_cols: column index out of range");
  bool rec = false;
  Tensor out = make_op_output({m}, {x}, &rec);
  for (std::size_t i = 0; i < m; ++i) out.data()[i] = x.data()[i * n + idx[i]];
  if (rec)
    record([x, out, idx, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i * n + idx[i]] += go[i];
    });
  return out;
}

Tensor Graph::set_cols(const Tensor& x, const std::vector<std::size_t>& idx,
                       const Tensor& values) {
  NAS_CHECK(x.rank() == 2, DimensionError, "set_cols: x must be rank 2");
  const std::size_t m = x.dim(0), n = x.dim(1);
  NAS_CHECK(idx.size() == m, DimensionError, "set_cols: one index per row required");
  NAS_CHECK(values.rank() == 1 && values.dim(0) == m, DimensionError,
            "set_cols: one value per row required");
  for (std::size_t i : idx)
    NAS_CHECK(i < n, DimensionError, "set_cols: column index out of range");
  bool rec = false;
  Tensor out = make_op_output({m, n}, {x, values}, &rec);
  out.data() = x.data();
  for (std::size_t i = 0; i < m; ++i) out.data()[i * n + idx[i]] = values.data()[i];
  if (rec)
    record([x, values, out, idx, m, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      if (x.requires_grad()) {
        auto& gx = ctx.sink(x);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            if (j != idx[i]) gx[i * n + j] += go[i * n + j];
      }
      if (values.requires_grad()) {
        auto& gv = ctx.sink(values);
        for (std::size_t i = 0; i < m; ++i) gv[i] += go[i * n + idx[i]];
      }
    });
  return out;
}

namespace {

// Shared forward/backward for row- and column-wise L2 normalization.
// `outer` iterates groups, `stride`/`step` address elements within a group.
struct NormalizeLayout {
  std::size_t groups;       // number of vectors to normalize
  std::size_t len;          // elements per vector
  std::size_t group_stride; // distance between consecutive vectors
  std::size_t elem_stride;  // distance between elements within a vector
};

void normalize_forward(const double* x, double* y, double* norms,
                       const NormalizeLayout& lay, double eps) {
  for (std::size_t g = 0; g < lay.groups; ++g) {
    const double* px = x + g * lay.group_stride;
    double* py = y + g * lay.group_stride;
    double ss = 0.0;
    for (std::size_t e = 0; e < lay.len; ++e) {
      const double v = px[e * lay.elem_stride];
      ss += v * v;
    }
    const double r = std::max(std::sqrt(ss), eps);
    norms[g] = r;
    for (std::size_t e = 0; e < lay.len; ++e)
      py[e * lay.elem_stride] = px[e * lay.elem_stride] / r;
  }
}

void normalize_backward(const double* y, const double* go, const double* norms,
                        double* gx, const NormalizeLayout& lay, double eps) {
  for (std::size_t g = 0; g < lay.groups; ++g) {
    const double* py = y + g * lay.group_stride;
    const double* pg = go + g * lay.group_stride;
    double* px = gx + g * lay.group_stride;
    const double r = norms[g];
    if (r <= eps) {
      // Clamped region: y = x / eps is linear.
      for (std::size_t e = 0; e < lay.len; ++e)
        px[e * lay.elem_stride] += pg[e * lay.elem_stride] / eps;
      continue;
    }
    double dot = 0.0;
    for (std::size_t e = 0; e < lay.len; ++e)
      dot += pg[e * lay.elem_stride] * py[e * lay.elem_stride];
    for (std::size_t e = 0; e < lay.len; ++e) {
      const std::size_t k = e * lay.elem_stride;
      px[k] += (pg[k] - py[k] * dot) / r;
    }
  }
}

}  // namespace

Tensor Graph::l2_normalize_rows(const Tensor& x, double eps) {
  NAS_CHECK(x.rank() == 2, DimensionError, "l2_normalize_rows: x must be rank 2");
  NAS_CHECK(eps > 0.0, ContractError, "l2_normalize_rows: eps must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const NormalizeLayout lay{m, n, n, 1};
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  auto norms = std::make_shared<std::vector<double>>(m);
  normalize_forward(x.data().data(), out.data().data(), norms->data(), lay, eps);
  if (rec)
    record([x, out, norms, lay, eps](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      normalize_backward(out.data().data(), go.data(), norms->data(), gx.data(), lay, eps);
    });
  return out;
}

Tensor Graph::l2_normalize_cols(const Tensor& x, double eps) {
  NAS_CHECK(x.rank() == 2, DimensionError, "l2_normalize_cols: x must be rank 2");
  NAS_CHECK(eps > 0.0, ContractError, "l2_normalize_cols: eps must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  const NormalizeLayout lay{n, m, 1, n};
  bool rec = false;
  Tensor out = make_op_output(x.shape(), {x}, &rec);
  auto norms = std::make_shared<std::vector<double>>(n);
  normalize_forward(x.data().data(), out.data().data(), norms->data(), lay, eps);
  if (rec)
    record([x, out, norms, lay, eps](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      normalize_backward(out.data().data(), go.data(), norms->data(), gx.data(), lay, eps);
    });
  return out;
}

Tensor Graph::norm_rows(const Tensor& x, double eps) {
  NAS_CHECK(x.rank() == 2, DimensionError, "norm_rows: x must be rank 2");
  NAS_CHECK(eps > 0.0, ContractError, "norm_rows: eps must be positive");
  const std::size_t m = x.dim(0), n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output({m}, {x}, &rec);
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = x.data()[i * n + j];
      ss += v * v;
    }
    out.data()[i] = std::max(std::sqrt(ss), eps);
  }
  if (rec)
    record([x, out, m, n, eps](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < m; ++i) {
        const double r = out.data()[i];
        if (r <= eps) continue;  // clamped: locally constant
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[i] * x.data()[i * n + j] / r;
      }
    });
  return out;
}

namespace {

// Axis-1 concatenation views a tensor of rank >= 2 as
// [outer, dim1, inner]: outer = dim0, inner = product of trailing dims.
struct Axis1View {
  std::size_t outer = 0, axis = 0, inner = 0;
};

Axis1View axis1_view(const Tensor& t) {
  NAS_CHECK(t.rank() >= 2, DimensionError, "axis-1 op requires rank >= 2");
  Axis1View v;
  v.outer = t.dim(0);
  v.axis = t.dim(1);
  v.inner = 1;
  for (std::size_t d = 2; d < t.rank(); ++d) v.inner *= t.dim(d);
  return v;
}

}  // namespace

Tensor Graph::concat_axis1(const std::vector<Tensor>& parts) {
  NAS_CHECK(!parts.empty(), ContractError, "concat_axis1: no inputs");
  const Axis1View v0 = axis1_view(parts[0]);
  std::size_t total_axis = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const Axis1View v = axis1_view(p);
    NAS_CHECK(p.rank() == parts[0].rank() && v.outer == v0.outer && v.inner == v0.inner,
              DimensionError, "concat_axis1: inputs differ outside axis 1");
    for (std::size_t d = 2; d < p.rank(); ++d)
      NAS_CHECK(p.dim(d) == parts[0].dim(d), DimensionError,
                "concat_axis1: trailing dimensions disagree");
    total_axis += v.axis;
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<std::size_t> out_shape = parts[0].shape();
  out_shape[1] = total_axis;
  const bool rec = recording_ && any_grad;
  Tensor out = Tensor::zeros(out_shape, rec);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const Axis1View v = axis1_view(p);
    for (std::size_t o = 0; o < v.outer; ++o) {
      const double* src = p.data().data() + o * v.axis * v.inner;
      double* dst = out.data().data() + (o * total_axis + offset) * v.inner;
      std::copy(src, src + v.axis * v.inner, dst);
    }
    offset += v.axis;
  }
  if (rec) {
    std::vector<Tensor> held = parts;
    record([held, out, total_axis](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      std::size_t offset = 0;
      for (const Tensor& p : held) {
        const Axis1View v = axis1_view(p);
        if (p.requires_grad()) {
          auto& gp = ctx.sink(p);
          for (std::size_t o = 0; o < v.outer; ++o) {
            const double* src = go.data() + (o * total_axis + offset) * v.inner;
            double* dst = gp.data() + o * v.axis * v.inner;
            for (std::size_t i = 0; i < v.axis * v.inner; ++i) dst[i] += src[i];
          }
        }
        offset += v.axis;
      }
    });
  }
  return out;
}

Tensor Graph::slice_axis1(const Tensor& x, std::size_t begin, std::size_t end) {
  const Axis1View v = axis1_view(x);
  NAS_CHECK(begin < end && end <= v.axis, DimensionError, "slice_axis1: bad range");
  std::vector<std::size_t> out_shape = x.shape();
  out_shape[1] = end - begin;
  bool rec = false;
  Tensor out = make_op_output(out_shape, {x}, &rec);
  const std::size_t width = end - begin;
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = x.data().data() + (o * v.axis + begin) * v.inner;
    double* dst = out.data().data() + o * width * v.inner;
    std::copy(src, src + width * v.inner, dst);
  }
  if (rec)
    record([x, out, v, begin, width](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t o = 0; o < v.outer; ++o) {
        const double* src = go.data() + o * width * v.inner;
        double* dst = gx.data() + (o * v.axis + begin) * v.inner;
        for (std::size_t i = 0; i < width * v.inner; ++i) dst[i] += src[i];
      }
    });
  return out;
}

Tensor Graph::reshape(const Tensor& x, std::vector<std::size_t> shape) {
  NAS_CHECK(shape_numel(shape) == x.numel(), DimensionError,
            "reshape: element count must be preserved");
  bool rec = false;
  Tensor out = make_op_output(std::move(shape), {x}, &rec);
  out.data() = x.data();
  if (rec)
    record([x, out](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  return out;
}

Tensor Graph::row(const Tensor& x, std::size_t i) {
  NAS_CHECK(x.rank() == 2, DimensionError, "row: x must be rank 2");
  NAS_CHECK(i < x.dim(0), DimensionError, "row: index out of range");
  const std::size_t n = x.dim(1);
  bool rec = false;
  Tensor out = make_op_output({1, n}, {x}, &rec);
  std::copy(x.data().begin() + i * n, x.data().begin() + (i + 1) * n, out.data().begin());
  if (rec)
    record([x, out, i, n](BackwardCtx& ctx) {
      NAS_TAKE_OUT_GRAD(ctx, out, go);
      auto& gx = ctx.sink(x);
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += go[j];
    });
  return out;
}

}  // namespace nas
