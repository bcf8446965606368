#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmsm/random.hpp"

namespace mmsm {

/// Dimensions of a tensor, rank 0..4, row-major.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const;
  std::size_t rows() const;  // product of all but the last dim (1 for rank 0)
  std::size_t cols() const;  // last dim (1 for rank 0)
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string str() const;

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }

 private:
  std::vector<std::size_t> dims_;
};

namespace detail {

template <class S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until needed
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<S>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

}  // namespace detail

/// Gradient recording is on by default; a live NoGradGuard turns it off on the
/// current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense tensor handle with reverse-mode autodiff. Copies share storage and
/// graph position; use clone() for an independent copy.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<S> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);
  /// Normal(0, std) draws truncated to two standard deviations.
  static Tensor truncated_normal(Shape shape, S std, Rng& rng, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rank() const { return shape().rank(); }
  std::size_t dim(std::size_t i) const { return shape()[i]; }
  std::size_t rows() const { return shape().rows(); }
  std::size_t cols() const { return shape().cols(); }

  std::span<const S> data() const { return node_->value; }
  std::span<S> mutable_data() { return node_->value; }
  S item() const;
  S at(std::size_t row, std::size_t col) const { return node_->value[row * cols() + col]; }

  /// rows() x cols() view of the values.
  ConstMatrixMap matrix() const { return ConstMatrixMap(node_->value.data(), rows(), cols()); }
  MatrixMap mutable_matrix() { return MatrixMap(node_->value.data(), rows(), cols()); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros when nothing has been accumulated.
  std::vector<S> grad() const;
  std::span<S> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  const char* op() const { return node_->op; }
  bool is_leaf() const { return node_->leaf; }

  Tensor clone() const;
  /// Same values, no graph history.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::Node<S>> node) : node_(std::move(node)) {}
  detail::Node<S>* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node<S>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

/// Runs reverse accumulation from a scalar loss into every reachable tensor
/// that requires grad, then releases the intermediate graph.
template <class S>
void backward(const Tensor<S>& loss);

// Linear algebra
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);  // [m,k] x [k,n]
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b);  // [m,k] x [n,k]^T
template <class S>
Tensor<S> transpose(const Tensor<S>& a);

// Elementwise. add() also accepts a bias of shape [n] or [1, n] broadcast over rows.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor);
template <class S>
Tensor<S> gelu(const Tensor<S>& x);
template <class S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng);

// Reductions
template <class S>
Tensor<S> sum(const Tensor<S>& x);
template <class S>
Tensor<S> mean(const Tensor<S>& x);

// Normalization
template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::ptrdiff_t axis = -1);
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps = S(1e-5));
template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x, S eps = S(1e-12));

// Indexing / layout
template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const std::int32_t> ids);
template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, std::size_t begin, std::size_t count);
template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count);
template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts);
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);
template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);

/// Mean token-level cross-entropy of logits [n, V] against targets; positions
/// whose target equals ignore_id contribute neither loss nor gradient. Returns
/// 0 when every position is ignored.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_id = -1);

template <class S>
inline Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <class S>
inline Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <class S>
inline Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace mmsm
