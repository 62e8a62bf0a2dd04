#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nas/common.hpp"

namespace nas {

// Dense row-major f64 tensor.  Cheap to copy: a Tensor is a handle onto a
// shared implementation, so passing tensors through op closures keeps the
// underlying buffers alive for the backward pass.
struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same size as data
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  // Gradient accessors.  grad() allocates a zero buffer on first use.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  void zero_grad();

  // Scalar convenience: value of a one-element tensor.
  double value() const;

  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  TensorImpl* impl() const { return impl_.get(); }

  std::string shape_str() const;

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

// Per-backward scratch: gradients propagate through "pending" buffers keyed
// by tensor identity, and are folded into each tensor's persistent grad at
// the end of the sweep.  This keeps repeated backward calls independent
// (each call adds exactly one more copy of the gradient to every leaf).
class BackwardCtx {
 public:
  // Pending gradient of `t`, or nullptr if nothing has flowed into it yet.
  const std::vector<double>* get(const Tensor& t) const;
  // Pending gradient buffer for `t`, created zero-filled on first use.
  std::vector<double>& sink(const Tensor& t);

  void seed(const Tensor& t, double weight);
  void flush();  // adds every pending buffer into its tensor's grad

 private:
  struct Slot {
    Tensor tensor;
    std::vector<double> pending;
  };
  std::unordered_map<TensorImpl*, Slot> slots_;
};

// Reverse-mode tape.  Ops append a backward closure as they execute; calling
// backward() replays the closures in reverse order.  The tape persists until
// clear(), so a training step is: clear(), forward, backward, optimizer step.
class Graph {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void record(std::function<void(BackwardCtx&)> fn);
  std::size_t tape_size() const { return tape_.size(); }
  void clear() { tape_.clear(); }

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every tensor
  // that requires grad.  Root must be a one-element tensor.
  void backward(const Tensor& root);
  // Multi-root variant: seeds each root with its weight, replays once.
  void backward_weighted(const std::vector<std::pair<Tensor, double>>& seeds);

  // ---- primitive ops (forward + recorded backward) ----
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor add_rowvec(const Tensor& x, const Tensor& row);    // [m,n] + [n]
  Tensor sub_colvec(const Tensor& x, const Tensor& col);    // [m,n] - [m] per row
  Tensor mul_colvec(const Tensor& x, const Tensor& col);    // [m,n] * [m] per row
  Tensor scale(const Tensor& x, double s);
  Tensor add_scalar(const Tensor& x, double c);
  Tensor neg(const Tensor& x) { return scale(x, -1.0); }
  Tensor relu(const Tensor& x);
  Tensor exp_(const Tensor& x);
  Tensor log_(const Tensor& x);
  Tensor sin_(const Tensor& x);
  Tensor cos_(const Tensor& x);
  Tensor asin_(const Tensor& x);
  Tensor acos_(const Tensor& x);
  Tensor tanh_(const Tensor& x);
  Tensor sigmoid_(const Tensor& x);
  Tensor pow_(const Tensor& x, double exponent);
  Tensor clamp(const Tensor& x, double lo, double hi);
  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);
  Tensor logsumexp_rows(const Tensor& x);                    // [m,n] -> [m]
  Tensor gather_cols(const Tensor& x, const std::vector<std::size_t>& idx);
  // Replaces column idx[i] of row i with values[i]; other entries pass through.
  Tensor set_cols(const Tensor& x, const std::vector<std::size_t>& idx,
                  const Tensor& values);
  Tensor l2_normalize_rows(const Tensor& x, double eps);
  Tensor l2_normalize_cols(const Tensor& x, double eps);
  Tensor norm_rows(const Tensor& x, double eps);  // [m,n] -> [m], max(||row||, eps)
  // Concatenate along axis 1 (columns of a matrix, channels of an NCHW map).
  Tensor concat_axis1(const std::vector<Tensor>& parts);
  Tensor slice_axis1(const Tensor& x, std::size_t begin, std::size_t end);
  Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
  Tensor row(const Tensor& x, std::size_t i);                // [m,n] -> [1,n]

  // Constant-folding helper: wraps a raw buffer as a non-grad tensor.
  static Tensor constant(std::vector<std::size_t> shape, std::vector<double> data);

  // Helper for composite ops defined outside this class (conv, pooling, ...):
  // creates the output tensor with requires_grad propagated from inputs and
  // returns whether a backward closure should be recorded.
  Tensor make_op_output(std::vector<std::size_t> shape,
                        std::initializer_list<Tensor> inputs, bool* record_tape);

 private:
  std::vector<std::function<void(BackwardCtx&)>> tape_;
  bool recording_ = true;
};

// RAII guard that disables tape recording for a scope (evaluation passes).
class NoGradGuard {
 public:
  explicit NoGradGuard(Graph& g) : g_(g), prev_(g.recording()) {
    g_.set_recording(false);
  }
  ~NoGradGuard() { g_.set_recording(prev_); }

 private:
  Graph& g_;
  bool prev_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace nas
