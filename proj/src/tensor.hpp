// Copyright 2026 The ftanet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation. Each op
// returns a Var whose node keeps its parents alive and knows how to push its
// gradient back to them; backward() walks the graph in reverse topological
// order. Layout conventions used by the network: images are H x W x C,
// conv kernels Kh x Kw x Cin x Cout, 1-D signals L x C.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ftanet {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Plain value tensor (no graph).
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> values;

  Tensor() = default;
  Tensor(Shape d, std::vector<T> v);
  explicit Tensor(Shape d) : dims(std::move(d)), values(element_count(dims), T(0)) {}

  std::size_t size() const { return values.size(); }
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Shape shape, std::vector<T> values);
  static Var constant(const Tensor<T>& t) { return constant(t.dims, t.values); }
  /// A leaf that accumulates gradients (a learnable parameter or a probe input).
  static Var parameter(Shape shape, std::vector<T> values);
  static Var parameter(const Tensor<T>& t) { return parameter(t.dims, t.values); }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> value() const { return node_->value; }
  std::span<T> mutable_value() { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Empty span when no gradient has reached this node.
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor<T> to_tensor() const { return {node_->shape, node_->value}; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Populates grad of every requires_grad node reachable from `loss`
/// (accumulating into existing leaf gradients). `loss` must hold one element.
template <typename T>
void backward(const Var<T>& loss);

// Elementwise ops. Binary ops broadcast operands of equal rank whose extents
// are equal or 1.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);

/// exp-normalization along `axis` with max subtraction.
template <typename T> Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Cross-correlation. Along an axis with stride 1 the input is zero-padded to
/// keep its extent (kernel extent must be odd); with stride s > 1 no padding
/// is applied and the output extent is floor((n - k) / s) + 1.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias,
              std::pair<std::size_t, std::size_t> stride = {1, 1});

/// x: L x Cin, kernel: K x Cin x Cout (K odd), "same" zero padding.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias);

/// Mean over one axis; the axis is removed from the shape.
template <typename T> Var<T> mean_axis(const Var<T>& x, std::size_t axis);
/// F x T x C -> F x C (mean over time).
template <typename T> Var<T> row_avg_pool(const Var<T>& s);
/// F x T x C -> T x C (mean over frequency).
template <typename T> Var<T> col_avg_pool(const Var<T>& s);
/// F x T x C -> C.
template <typename T> Var<T> global_avg_pool(const Var<T>& s);

/// Fully connected: x (N) times w (N x M) plus b (M).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
/// Slice `index` of the leading axis; the axis is removed.
template <typename T> Var<T> select(const Var<T>& x, std::size_t index);
template <typename T> Var<T> sum(const Var<T>& x);

inline constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross entropy; pred is clamped to [eps, 1 - eps] first.
/// target is treated as a constant.
template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Var<T>& target);

/// Named parameter collection; iteration order is the key order.
template <typename T>
using ParamSet = std::map<std::string, Var<T>>;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> first_moment;
  std::map<std::string, std::vector<T>> second_moment;
  long step = 0;
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient (a parameter with no gradient is treated as having zero gradient).
template <typename T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace ftanet
