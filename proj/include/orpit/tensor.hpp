#pragma once

#include <functional>
#include <string>
#include <vector>

#include "orpit/errors.hpp"

namespace orpit {

// Plain dense array: the storage form of model parameters and constants.
template <class S>
struct TensorData {
  std::vector<int> shape;
  std::vector<S> data;

  TensorData() = default;
  TensorData(std::vector<int> shp, std::vector<S> values)
      : shape(std::move(shp)), data(std::move(values)) {}

  std::size_t numel() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

template <class S>
class Tape;

// Lightweight handle to a node on a tape. The node id doubles as the
// topological position: every input id precedes its consumers.
template <class S>
class Tensor {
 public:
  Tensor() : tape_(nullptr), id_(-1) {}
  Tensor(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr && id_ >= 0; }
  int id() const { return id_; }
  Tape<S>* tape() const { return tape_; }

  const std::vector<int>& shape() const;
  const std::vector<S>& value() const;
  const std::vector<S>& grad() const;
  bool requires_grad() const;
  std::size_t numel() const;

 private:
  Tape<S>* tape_;
  int id_;
};

// Reverse-mode tape. A tape records one forward computation; it is rebuilt
// per forward pass and confined to a single thread. Shapes are checked on
// every primitive; there is no broadcasting (scalar forms are explicit ops).
//
// Conventions fixed here and relied on by tests:
//   relu'(0) = 0
//   log10_safe(v) = log10(v + kLogEps), kLogEps = 1e-8
//   conv1d is cross-correlation (no kernel flip), no implicit padding
template <class S>
class Tape {
 public:
  static constexpr double kLogEps = 1e-8;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf nodes ------------------------------------------------------------
  Tensor<S> input(std::vector<int> shape, std::vector<S> data, bool requires_grad = false);
  Tensor<S> input(const TensorData<S>& t, bool requires_grad = false) {
    return input(t.shape, t.data, requires_grad);
  }
  Tensor<S> constant(std::vector<int> shape, std::vector<S> data) {
    return input(std::move(shape), std::move(data), false);
  }
  Tensor<S> scalar(S v) { return input({1}, {v}, false); }
  Tensor<S> zeros(std::vector<int> shape, bool requires_grad = false);

  // Elementwise (equal shapes except the explicit scalar forms) ------------
  Tensor<S> add(Tensor<S> a, Tensor<S> b);
  Tensor<S> sub(Tensor<S> a, Tensor<S> b);
  Tensor<S> mul(Tensor<S> a, Tensor<S> b);
  Tensor<S> cmul(Tensor<S> a, double c);         // tensor * compile-time constant
  Tensor<S> smul(Tensor<S> a, Tensor<S> scalar); // tensor * graph scalar
  Tensor<S> relu(Tensor<S> a);
  Tensor<S> sigmoid(Tensor<S> a);
  Tensor<S> square(Tensor<S> a);
  Tensor<S> log10_safe(Tensor<S> a);
  Tensor<S> bias_add(Tensor<S> x, Tensor<S> bias); // x: [C,T], bias: [C]

  // Reductions to scalar ----------------------------------------------------
  Tensor<S> sum(Tensor<S> a);
  Tensor<S> mean(Tensor<S> a);
  Tensor<S> dot(Tensor<S> a, Tensor<S> b);
  Tensor<S> l2_norm_sq(Tensor<S> a);

  // Structured ops ----------------------------------------------------------
  // x: [C_in,T], k: [C_out,C_in,K] -> [C_out,T'], T' = (T - d*(K-1) - 1)/s + 1
  Tensor<S> conv1d(Tensor<S> x, Tensor<S> k, int stride, int dilation = 1);
  // x: [C_in,T], k: [C_in,C_out,K] -> [C_out,(T-1)*s + K]; adjoint of conv1d
  Tensor<S> conv1d_transpose(Tensor<S> x, Tensor<S> k, int stride);
  // x: [C,T], k: [C,K] -> [C, T - d*(K-1)], one filter per channel, stride 1
  Tensor<S> depthwise_conv1d(Tensor<S> x, Tensor<S> k, int dilation = 1);
  // x: [C,T] -> [C,(T-w)/s + 1], window mean
  Tensor<S> avg_pool1d(Tensor<S> x, int width, int stride);
  Tensor<S> pad_time(Tensor<S> x, int left, int right);
  Tensor<S> crop_time(Tensor<S> x, int start, int len);

  // Backward ----------------------------------------------------------------
  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node with
  // requires_grad set. Fan-out accumulates additively. Running backward twice
  // on the same tape is an error.
  void backward(Tensor<S> loss);

  // Access ------------------------------------------------------------------
  const std::vector<int>& shape(int id) const { return nodes_[check_id(id)].shape; }
  const std::vector<S>& value(int id) const { return nodes_[check_id(id)].value; }
  const std::vector<S>& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[check_id(id)].requires_grad; }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated during backward, requires_grad nodes only
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;  // null for leaves
  };

  int check_id(int id) const;
  int push(std::vector<int> shape, std::vector<S> value, bool requires_grad,
           std::function<void(Tape&)> backprop);
  std::vector<S>& grad_buf(int id);

  static std::size_t shape_numel(const std::vector<int>& shape);
  void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) const;
  void require_rank(const Tensor<S>& t, int rank, const char* op) const;
  void require_scalar(const Tensor<S>& t, const char* op) const;
  void require_same_tape(const Tensor<S>& t, const char* op) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

template <class S>
const std::vector<int>& Tensor<S>::shape() const { return tape_->shape(id_); }
template <class S>
const std::vector<S>& Tensor<S>::value() const { return tape_->value(id_); }
template <class S>
const std::vector<S>& Tensor<S>::grad() const { return tape_->grad(id_); }
template <class S>
bool Tensor<S>::requires_grad() const { return tape_->requires_grad(id_); }
template <class S>
std::size_t Tensor<S>::numel() const { return tape_->value(id_).size(); }

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace orpit
