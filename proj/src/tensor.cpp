// SPDX-License-Identifier: Apache-2.0

#include "avp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "avp/rng.hpp"

namespace avp {
namespace {

thread_local GradTape* g_tape = nullptr;

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

#ifndef NDEBUG
void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": produced a non-finite value");
    }
  }
}
#else
void check_finite(const char*, const std::vector<double>&) {}
#endif

}  // namespace

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::make(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  require(numel(shape) == data.size(), "tensor: shape " + shape_str(shape) +
                                           " does not match element count " +
                                           std::to_string(data.size()));
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = numel(shape);
  return make(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  return make(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::ones(std::vector<std::size_t> shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  return make(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, std::mt19937_64& eng, double stddev,
                     bool requires_grad) {
  std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (double& v : data) v = stddev * normal(eng);
  return make(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, std::mt19937_64& eng, double lo, double hi,
                       bool requires_grad) {
  std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (double& v : data) v = uniform_real(eng, lo, hi);
  return make(std::move(shape), std::move(data), requires_grad);
}

double Tensor::value() const {
  require(defined() && size() == 1, "value(): tensor is not a scalar");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  require(defined() && idx.size() == rank(), "at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    require(i < node_->shape[axis], "at(): index out of range");
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

const std::vector<double>& Tensor::grad() const {
  require(defined(), "grad(): undefined tensor");
  if (node_->grad.size() != node_->data.size()) {
    throw std::runtime_error("grad(): no gradient recorded for this tensor");
  }
  return node_->grad;
}

void Tensor::set_data(const std::vector<double>& values) {
  require(defined() && values.size() == node_->data.size(),
          "set_data(): element count mismatch");
  node_->data = values;
}

void Tensor::round_to_f32() {
  for (double& v : node_->data) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Tape

void GradTape::backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1, "backward: loss must be a scalar tensor");
  std::unordered_set<detail::TensorNode*> seen;
  for (auto& e : entries_) {
    for (auto& n : e.nodes) {
      if (seen.insert(n.get()).second) n->grad.assign(n->data.size(), 0.0);
    }
  }
  auto ln = loss.node();
  if (ln->grad.size() != 1) ln->grad.assign(1, 0.0);
  ln->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->pull();
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = previous_; }

GradTape* active_tape() { return g_tape; }

// ---------------------------------------------------------------------------
// Op plumbing

struct OpContext {
  static Tensor make(std::vector<std::size_t> shape, std::vector<double> data, bool track) {
    return Tensor::make(std::move(shape), std::move(data), track);
  }
};

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!g_tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_out(const char* op, std::vector<std::size_t> shape, std::vector<double> data,
                bool track) {
  check_finite(op, data);
  return OpContext::make(std::move(shape), std::move(data), track);
}

void record(std::vector<NodePtr> nodes, std::function<void()> pull) {
  g_tape->push({std::move(pull), std::move(nodes)});
}

// Nodes whose grads must be zeroed: differentiable inputs plus the output.
std::vector<NodePtr> touched(std::initializer_list<NodePtr> grads_in, const NodePtr& out) {
  std::vector<NodePtr> v;
  for (const NodePtr& n : grads_in) {
    if (n->requires_grad) v.push_back(n);
  }
  v.push_back(out);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  bool track = tracking({&a, &b});
  Tensor y = make_out("add", a.shape(), std::move(out), track);
  if (track) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    record(touched({an, bn}, yn), [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i];
      }
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  bool track = tracking({&a, &b});
  Tensor y = make_out("sub", a.shape(), std::move(out), track);
  if (track) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    record(touched({an, bn}, yn), [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i];
        if (bn->requires_grad) bn->grad[i] -= yn->grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  bool track = tracking({&a, &b});
  Tensor y = make_out("mul", a.shape(), std::move(out), track);
  if (track) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    record(touched({an, bn}, yn), [an, bn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += yn->grad[i] * bn->data[i];
        if (bn->requires_grad) bn->grad[i] += yn->grad[i] * an->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  bool track = tracking({&x});
  Tensor y = make_out("scale", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, c] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * c;
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + c;
  bool track = tracking({&x});
  Tensor y = make_out("add_scalar", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor sub_from_scalar(double c, const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c - x.data()[i];
  bool track = tracking({&x});
  Tensor y = make_out("sub_from_scalar", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] -= yn->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// c (n x m) += a (n x k) * b (k x m)
void matmul_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (n x m) += a (n x k) * b^T (m x k)
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c (k x m) += a^T (n x k) * b (n x m)
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                   std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expects rank-2 operands, got " +
                                              shape_str(a.shape()) + " and " +
                                              shape_str(b.shape()));
  const std::size_t n = a.extent(0), k = a.extent(1), m = b.extent(1);
  require(b.extent(0) == k, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  std::vector<double> out(n * m, 0.0);
  matmul_acc(a.data().data(), b.data().data(), out.data(), n, k, m);
  bool track = tracking({&a, &b});
  Tensor y = make_out("matmul", {n, m}, std::move(out), track);
  if (track) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    record(touched({an, bn}, yn), [an, bn, yn, n, k, m] {
      if (an->requires_grad) {
        matmul_nt_acc(yn->grad.data(), bn->data.data(), an->grad.data(), n, m, k);
      }
      if (bn->requires_grad) {
        matmul_tn_acc(an->data.data(), yn->grad.data(), bn->grad.data(), n, k, m);
      }
    });
  }
  return y;
}

Tensor transpose2d(const Tensor& x) {
  require(x.rank() == 2, "transpose2d: expects rank-2, got " + shape_str(x.shape()));
  const std::size_t n = x.extent(0), m = x.extent(1);
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x.data()[i * m + j];
  }
  bool track = tracking({&x});
  Tensor y = make_out("transpose2d", {m, n}, std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, n, m] {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) xn->grad[i * m + j] += yn->grad[j * n + i];
      }
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && bias.extent(0) == x.shape().back(),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
              shape_str(x.shape()));
  const std::size_t last = bias.extent(0);
  const std::size_t rows = x.size() / last;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < last; ++j) out[r * last + j] = x.data()[r * last + j] + bias.data()[j];
  }
  bool track = tracking({&x, &bias});
  Tensor y = make_out("add_bias", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), bn = bias.node(), yn = y.node();
    record(touched({xn, bn}, yn), [xn, bn, yn, rows, last] {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < last; ++j) {
          const double g = yn->grad[r * last + j];
          if (xn->requires_grad) xn->grad[r * last + j] += g;
          if (bn->requires_grad) bn->grad[j] += g;
        }
      }
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.rank() == 2, "linear: weight must be rank-2, got " + shape_str(w.shape()));
  require(x.rank() >= 1 && x.shape().back() == w.extent(0),
          "linear: input " + shape_str(x.shape()) + " does not match weight " +
              shape_str(w.shape()));
  const std::size_t in = w.extent(0), out_dim = w.extent(1);
  const std::size_t rows = x.size() / in;
  Tensor flat = reshape(x, {rows, in});
  Tensor y = add_bias(matmul(flat, w), b);
  std::vector<std::size_t> out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(out_dim);
  return reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " +
                                        shape_str(shape) + " changes element count");
  bool track = tracking({&x});
  Tensor y = make_out("reshape", std::move(shape), x.data(), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i];
    });
  }
  return y;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && a.rank() >= 1,
          "concat_lastdim: rank mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    require(a.extent(i) == b.extent(i), "concat_lastdim: leading axes disagree, " +
                                            shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  }
  const std::size_t la = a.shape().back(), lb = b.shape().back();
  const std::size_t rows = a.size() / la;
  std::vector<std::size_t> shape = a.shape();
  shape.back() = la + lb;
  std::vector<double> out(rows * (la + lb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * la, la, out.begin() + r * (la + lb));
    std::copy_n(b.data().begin() + r * lb, lb, out.begin() + r * (la + lb) + la);
  }
  bool track = tracking({&a, &b});
  Tensor y = make_out("concat_lastdim", std::move(shape), std::move(out), track);
  if (track) {
    NodePtr an = a.node(), bn = b.node(), yn = y.node();
    record(touched({an, bn}, yn), [an, bn, yn, rows, la, lb] {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* g = yn->grad.data() + r * (la + lb);
        if (an->requires_grad) {
          for (std::size_t j = 0; j < la; ++j) an->grad[r * la + j] += g[j];
        }
        if (bn->requires_grad) {
          for (std::size_t j = 0; j < lb; ++j) bn->grad[r * lb + j] += g[la + j];
        }
      }
    });
  }
  return y;
}

Tensor stack(const std::vector<Tensor>& items, std::size_t axis) {
  require(!items.empty(), "stack: no tensors given");
  const std::vector<std::size_t>& s0 = items.front().shape();
  require(axis <= s0.size(), "stack: axis out of range");
  for (const Tensor& t : items) {
    require(t.shape() == s0, "stack: all tensors must share shape " + shape_str(s0));
  }
  const std::size_t count = items.size();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> shape = s0;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> out(outer * count * inner);
  for (std::size_t j = 0; j < count; ++j) {
    const auto& src = items[j].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.begin() + o * inner, inner, out.begin() + (o * count + j) * inner);
    }
  }
  bool track = false;
  for (const Tensor& t : items) track = track || (g_tape && t.requires_grad());
  Tensor y = make_out("stack", std::move(shape), std::move(out), track);
  if (track) {
    std::vector<NodePtr> ins;
    ins.reserve(count);
    for (const Tensor& t : items) ins.push_back(t.node());
    NodePtr yn = y.node();
    std::vector<NodePtr> nodes;
    for (const NodePtr& n : ins) {
      if (n->requires_grad) nodes.push_back(n);
    }
    nodes.push_back(yn);
    record(std::move(nodes), [ins, yn, outer, count, inner] {
      for (std::size_t j = 0; j < count; ++j) {
        if (!ins[j]->requires_grad) continue;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = yn->grad.data() + (o * count + j) * inner;
          double* dst = ins[j]->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
      }
    });
  }
  return y;
}

Tensor index_axis(const Tensor& x, std::size_t axis, std::size_t index) {
  require(axis < x.rank(), "index_axis: axis out of range for " + shape_str(x.shape()));
  require(index < x.extent(axis), "index_axis: index out of range");
  const std::size_t count = x.extent(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  std::vector<std::size_t> shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) shape.push_back(x.extent(i));
  }
  if (shape.empty()) shape.push_back(1);
  std::vector<double> out(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + (o * count + index) * inner, inner, out.begin() + o * inner);
  }
  bool track = tracking({&x});
  Tensor y = make_out("index_axis", std::move(shape), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, outer, count, inner, index] {
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = yn->grad.data() + o * inner;
        double* dst = xn->grad.data() + (o * count + index) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
      }
    });
  }
  return y;
}

Tensor slice_axis(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  require(axis < x.rank(), "slice_axis: axis out of range for " + shape_str(x.shape()));
  require(len >= 1 && start + len <= x.extent(axis), "slice_axis: range out of bounds");
  const std::size_t count = x.extent(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  std::vector<std::size_t> shape = x.shape();
  shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().begin() + (o * count + start) * inner, len * inner,
                out.begin() + o * len * inner);
  }
  bool track = tracking({&x});
  Tensor y = make_out("slice_axis", std::move(shape), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, outer, count, inner, start, len] {
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = yn->grad.data() + o * len * inner;
        double* dst = xn->grad.data() + (o * count + start) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

namespace {

template <typename Fwd, typename Deriv>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Deriv deriv_from_x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  bool track = tracking({&x});
  Tensor y = make_out(name, x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, deriv_from_x] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) {
        xn->grad[i] += yn->grad[i] * deriv_from_x(xn->data[i], yn->data[i]);
      }
    });
  }
  return y;
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double negative_slope) {
  return unary_op(
      "leaky_relu", x, [negative_slope](double v) { return v >= 0.0 ? v : negative_slope * v; },
      [negative_slope](double v, double) { return v >= 0.0 ? 1.0 : negative_slope; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary_op(
      "elu", x, [alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0.0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    require(v > 0.0, "log: input must be strictly positive");
  }
  return unary_op(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: empty range");
  return unary_op(
      "clamp", x, [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax

namespace {

Tensor softmax_impl(const Tensor& x, const Tensor* mask, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis out of range for " + shape_str(x.shape()));
  if (mask) {
    require(mask->shape() == x.shape(), "softmax: mask shape " + shape_str(mask->shape()) +
                                            " does not match " + shape_str(x.shape()));
    require(!mask->requires_grad(), "softmax: mask must not require gradients");
  }
  const std::size_t len = x.extent(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);

  std::vector<double> out(x.size(), 0.0);
  const double* xd = x.data().data();
  const double* md = mask ? mask->data().data() : nullptr;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t idx = base + l * inner;
        if (!md || md[idx] != 0.0) mx = std::max(mx, xd[idx]);
      }
      if (mx == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("softmax_masked: a slice is fully masked");
      }
      double sum = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t idx = base + l * inner;
        if (!md || md[idx] != 0.0) {
          out[idx] = std::exp(xd[idx] - mx);
          sum += out[idx];
        }
      }
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t idx = base + l * inner;
        out[idx] /= sum;
        if (md && md[idx] == 0.0) out[idx] = 0.0;
      }
    }
  }
  bool track = tracking({&x});
  Tensor y = make_out("softmax", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, outer, len, inner] {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            dot += yn->grad[idx] * yn->data[idx];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            xn->grad[idx] += yn->data[idx] * (yn->grad[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) { return softmax_impl(x, nullptr, axis); }

Tensor softmax_masked(const Tensor& x, const Tensor& mask, std::size_t axis) {
  return softmax_impl(x, &mask, axis);
}

// ---------------------------------------------------------------------------
// Normalization

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require(x.rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(gain.rank() == 1 && gain.extent(0) == d && bias.rank() == 1 && bias.extent(0) == d,
          "layer_norm: affine parameters must be rank-1 of length " + std::to_string(d));
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gain.data()[j] * h + bias.data()[j];
    }
  }
  bool track = tracking({&x, &gain, &bias});
  Tensor y = make_out("layer_norm", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node();
    record(touched({xn, gn, bn}, yn), [xn, gn, bn, yn, xhat, inv_std, rows, d] {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* dy = yn->grad.data() + r * d;
        const double* h = xhat->data() + r * d;
        if (gn->requires_grad || bn->requires_grad) {
          for (std::size_t j = 0; j < d; ++j) {
            if (gn->requires_grad) gn->grad[j] += dy[j] * h[j];
            if (bn->requires_grad) bn->grad[j] += dy[j];
          }
        }
        if (xn->requires_grad) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[j] * gn->data[j];
            m1 += dh;
            m2 += dh * h[j];
          }
          m1 /= static_cast<double>(d);
          m2 /= static_cast<double>(d);
          const double is = (*inv_std)[r];
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dy[j] * gn->data[j];
            xn->grad[r * d + j] += (dh - m1 - h[j] * m2) * is;
          }
        }
      }
    });
  }
  return y;
}

Tensor batch_norm_1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     BatchNormState& state, Mode mode, double momentum, double eps) {
  require(x.rank() == 2, "batch_norm_1d: expects rows x features, got " + shape_str(x.shape()));
  const std::size_t n = x.extent(0), f = x.extent(1);
  require(gamma.rank() == 1 && gamma.extent(0) == f && beta.rank() == 1 && beta.extent(0) == f,
          "batch_norm_1d: affine parameters must be rank-1 of length " + std::to_string(f));
  require(state.running_mean.size() == f && state.running_var.size() == f,
          "batch_norm_1d: state size mismatch");

  std::vector<double> out(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(f);

  if (mode == Mode::Train) {
    require(n >= 2, "batch_norm_1d: training requires at least two rows");
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) mean[j] += x.data()[i * f + j];
    }
    for (std::size_t j = 0; j < f; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double c = x.data()[i * f + j] - mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < f; ++j) {
      var[j] /= static_cast<double>(n);
      (*inv_std)[j] = 1.0 / std::sqrt(var[j] + eps);
      state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * mean[j];
      state.running_var[j] = (1.0 - momentum) * state.running_var[j] + momentum * var[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        const double h = (x.data()[i * f + j] - mean[j]) * (*inv_std)[j];
        (*xhat)[i * f + j] = h;
        out[i * f + j] = gamma.data()[j] * h + beta.data()[j];
      }
    }
    bool track = tracking({&x, &gamma, &beta});
    Tensor y = make_out("batch_norm_1d", x.shape(), std::move(out), track);
    if (track) {
      NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
      record(touched({xn, gn, bn}, yn), [xn, gn, bn, yn, xhat, inv_std, n, f] {
        for (std::size_t j = 0; j < f; ++j) {
          double sum_dy = 0.0, sum_dyh = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += yn->grad[i * f + j];
            sum_dyh += yn->grad[i * f + j] * (*xhat)[i * f + j];
          }
          if (gn->requires_grad) gn->grad[j] += sum_dyh;
          if (bn->requires_grad) bn->grad[j] += sum_dy;
          if (xn->requires_grad) {
            const double g = gn->data[j];
            const double is = (*inv_std)[j];
            const double m1 = sum_dy / static_cast<double>(n);
            const double m2 = sum_dyh / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const double dy = yn->grad[i * f + j];
              xn->grad[i * f + j] += g * is * (dy - m1 - (*xhat)[i * f + j] * m2);
            }
          }
        }
      });
    }
    return y;
  }

  // Eval: running statistics, per-element affine.
  for (std::size_t j = 0; j < f; ++j) (*inv_std)[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double h = (x.data()[i * f + j] - state.running_mean[j]) * (*inv_std)[j];
      (*xhat)[i * f + j] = h;
      out[i * f + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  bool track = tracking({&x, &gamma, &beta});
  Tensor y = make_out("batch_norm_1d", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node();
    record(touched({xn, gn, bn}, yn), [xn, gn, bn, yn, xhat, inv_std, n, f] {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
          const double dy = yn->grad[i * f + j];
          if (gn->requires_grad) gn->grad[j] += dy * (*xhat)[i * f + j];
          if (bn->requires_grad) bn->grad[j] += dy;
          if (xn->requires_grad) xn->grad[i * f + j] += dy * gn->data[j] * (*inv_std)[j];
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double p, Mode mode, std::mt19937_64& eng) {
  require(p >= 0.0 && p < 1.0, "dropout: rate must be in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = uniform_unit(eng) <= p ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] = x.data()[i] * m;
  }
  bool track = tracking({&x});
  Tensor y = make_out("dropout", x.shape(), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, mask] {
      for (std::size_t i = 0; i < yn->grad.size(); ++i) xn->grad[i] += yn->grad[i] * (*mask)[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Tensor reduce_axis(const char* name, const Tensor& x, std::size_t axis, bool mean) {
  require(axis < x.rank(), std::string(name) + ": axis out of range for " + shape_str(x.shape()));
  const std::size_t len = x.extent(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  std::vector<std::size_t> shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) shape.push_back(x.extent(i));
  }
  if (shape.empty()) shape.push_back(1);
  const double denom = mean ? static_cast<double>(len) : 1.0;
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* src = x.data().data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (mean) {
    for (double& v : out) v /= denom;
  }
  bool track = tracking({&x});
  Tensor y = make_out(name, std::move(shape), std::move(out), track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, outer, len, inner, denom] {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          double* dst = xn->grad.data() + (o * len + l) * inner;
          const double* g = yn->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i] / denom;
        }
      }
    });
  }
  return y;
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) { return reduce_axis("sum_axis", x, axis, false); }

Tensor mean_axis(const Tensor& x, std::size_t axis) { return reduce_axis("mean_axis", x, axis, true); }

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  bool track = tracking({&x});
  Tensor y = make_out("sum_all", {1}, {acc}, track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn] {
      const double g = yn->grad[0];
      for (double& v : xn->grad) v += g;
    });
  }
  return y;
}

Tensor mean_all(const Tensor& x) {
  const double denom = static_cast<double>(x.size());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  bool track = tracking({&x});
  Tensor y = make_out("mean_all", {1}, {acc / denom}, track);
  if (track) {
    NodePtr xn = x.node(), yn = y.node();
    record(touched({xn}, yn), [xn, yn, denom] {
      const double g = yn->grad[0] / denom;
      for (double& v : xn->grad) v += g;
    });
  }
  return y;
}

}  // namespace avp
