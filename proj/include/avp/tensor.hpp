// SPDX-License-Identifier: Apache-2.0
//
// Dense double-precision tensors with a reverse-mode gradient tape.
//
// Tensors are row-major, shape-fixed handles; the op API never mutates an
// existing tensor, so values can be shared freely across threads once
// created. set_data()/round_to_f32() are reserved for optimizer updates
// between training steps.
//
// Ops record a backward closure on the active GradTape (if any input wants
// gradients). GradTape::backward replays the closures in reverse and leaves
// the accumulated gradient of every participating tensor in grad().

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace avp {

enum class Mode { Train, Eval };

namespace detail {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized by GradTape::backward
  bool requires_grad = false;
};

}  // namespace detail

std::string shape_str(const std::vector<std::size_t>& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor ones(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& eng, double stddev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(std::vector<std::size_t> shape, std::mt19937_64& eng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }
  std::size_t size() const { return node_->data.size(); }
  const std::vector<double>& data() const { return node_->data; }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Value of a one-element tensor.
  double value() const;
  /// Element access by multi-index (tests and small-scale plumbing).
  double at(std::initializer_list<std::size_t> idx) const;

  /// Accumulated gradient; valid after GradTape::backward touched this tensor.
  const std::vector<double>& grad() const;

  /// Replaces the stored values (same element count). Optimizer use only.
  void set_data(const std::vector<double>& values);
  /// Rounds every element through float. Training keeps parameters and
  /// momentum in the 32-bit grid so checkpoints round-trip bit-exactly.
  void round_to_f32();

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  static Tensor make(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad);
  friend struct OpContext;
  std::shared_ptr<detail::TensorNode> node_;
};

class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Zeroes the gradients of every tensor the tape touched, seeds the scalar
  /// `loss` with 1 and replays all recorded ops in reverse.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  struct Entry {
    std::function<void()> pull;
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  };
  void push(Entry e) { entries_.push_back(std::move(e)); }

 private:
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for ops on this thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

/// Running statistics for batch_norm_1d, one entry per feature.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  explicit BatchNormState(std::size_t features)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

// ---- arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor sub_from_scalar(double c, const Tensor& x);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& x);
/// x: (..., in), w: in x out, b: out. Flattens leading axes through a matmul.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// bias over the last axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// ---- shape ----
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
/// Stacks equally-shaped tensors along a new axis at `axis`.
Tensor stack(const std::vector<Tensor>& items, std::size_t axis);
/// Selects index `index` along `axis`, dropping that axis.
Tensor index_axis(const Tensor& x, std::size_t axis, std::size_t index);
/// Keeps `len` entries of `axis` starting at `start`; axis is retained.
Tensor slice_axis(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);

// ---- elementwise ----
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double negative_slope = 0.2);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

// ---- normalization / regularization ----
/// Softmax along `axis`. With a mask (same shape, 0/1, no gradient), masked
/// entries are exactly 0 and each slice must keep at least one live entry.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_masked(const Tensor& x, const Tensor& mask, std::size_t axis);
/// Normalizes the last axis; gain/bias are rank-1 of that length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// x: rows x features. Train mode uses batch statistics (>= 2 rows) and
/// updates `state`; eval mode applies the running statistics.
Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormState& state, Mode mode, double momentum = 0.1, double eps = 1e-5);
/// Inverted dropout: train mode zeroes with probability p and rescales
/// survivors by 1/(1-p); eval mode and p=0 return x unchanged.
Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& eng);

// ---- reductions ----
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace avp
