#include "mmsm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "mmsm/errors.hpp"

namespace mmsm {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.size() > 4) throw ShapeError("tensor rank " + std::to_string(dims_.size()) + " exceeds 4");
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::size_t Shape::cols() const { return dims_.empty() ? 1 : dims_.back(); }

std::size_t Shape::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? ", " : "") << dims_[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Grad mode

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

template <class S>
Tensor<S>::Tensor(Shape shape, std::vector<S> values, bool requires_grad) : node_(std::make_shared<detail::Node<S>>()) {
  if (values.size() != shape.numel())
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape.str());
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <class S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape.numel();
  return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  const auto n = shape.numel();
  return Tensor(std::move(shape), std::vector<S>(n, value), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<S>{value}, requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::truncated_normal(Shape shape, S std, Rng& rng, bool requires_grad) {
  std::vector<S> v(shape.numel());
  for (auto& x : v) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    x = static_cast<S>(z * static_cast<double>(std));
  }
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

template <class S>
S Tensor<S>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape().str() + " is not a scalar");
  return node_->value[0];
}

template <class S>
void Tensor<S>::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad: only leaf tensors");
  node_->requires_grad = on;
}

template <class S>
std::vector<S> Tensor<S>::grad() const {
  if (node_->grad.empty()) return std::vector<S>(numel(), S(0));
  return node_->grad;
}

template <class S>
void Tensor<S>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), S(0));
}

template <class S>
Tensor<S> Tensor<S>::clone() const {
  Tensor t(shape(), node_->value, node_->leaf && node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

template <class S>
Tensor<S> Tensor<S>::detach() const {
  return Tensor(shape(), node_->value, false);
}

// ---------------------------------------------------------------------------
// Graph plumbing

namespace {

template <class S>
using NodePtr = detail::Node<S>*;

template <class S>
Tensor<S> result(Shape shape, std::vector<S> value, const char* op, std::initializer_list<const Tensor<S>*> inputs) {
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  if (grad_enabled()) {
    for (const Tensor<S>* in : inputs) {
      if (in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad)
      for (const Tensor<S>* in : inputs) node->parents.push_back(in->node_ptr());
  }
  return Tensor<S>(std::move(node));
}

template <class S>
Tensor<S> result(Shape shape, std::vector<S> value, const char* op, const std::vector<Tensor<S>>& inputs) {
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->leaf = false;
  if (grad_enabled()) {
    for (const auto& in : inputs)
      if (in.requires_grad()) node->requires_grad = true;
    if (node->requires_grad)
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
  }
  return Tensor<S>(std::move(node));
}

template <class S>
bool tracking(const Tensor<S>& t) {
  return t.requires_grad() && !t.is_leaf();
}

template <class S>
std::vector<S>* grad_of(NodePtr<S> n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

template <class S>
void require_rank2(const char* op, const Tensor<S>& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape().str());
}

template <class S>
using RowMatrix = typename Tensor<S>::RowMatrix;
template <class S>
using Map = Eigen::Map<RowMatrix<S>>;
template <class S>
using CMap = Eigen::Map<const RowMatrix<S>>;

template <class S>
CMap<S> view(const std::vector<S>& v, std::size_t r, std::size_t c) {
  return CMap<S>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class S>
Map<S> view(std::vector<S>& v, std::size_t r, std::size_t c) {
  return Map<S>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

}  // namespace

template <class S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined()) throw std::logic_error("backward: undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got shape " + loss.shape().str());
  auto* root = loss.node();
  if (root->released) throw std::logic_error("backward: graph has already been released");
  if (!root->requires_grad) throw std::logic_error("backward: loss does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodePtr<S>> order;
  std::unordered_set<NodePtr<S>> seen;
  std::vector<std::pair<NodePtr<S>, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr<S> p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr<S> n = *it;
    if (n->backward) n->backward();
  }
  for (NodePtr<S> n : order) {
    if (n->leaf) continue;
    n->backward = nullptr;
    n->parents.clear();
    n->released = true;
    if (n != root) std::vector<S>().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {

// Forward products use a fixed accumulation order in which every output row
// depends only on its own input row. Blocked GEMM kernels pick different
// summation orders for different matrix heights, which would make a row's
// value depend on how many other rows (padding, later decoder positions)
// share the call.
template <class S>
void rowwise_matmul(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    S* ci = c + i * n;
    std::fill(ci, ci + n, S(0));
    for (std::size_t p = 0; p < k; ++p) {
      const S aip = a[i * k + p];
      const S* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <class S>
void rowwise_matmul_nt(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      S acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

}  // namespace

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.dim(1) != b.dim(0)) shape_mismatch("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> v(m * n);
  rowwise_matmul(a.data().data(), b.data().data(), v.data(), m, k, n);
  auto out = result<S>(Shape{m, n}, std::move(v), "matmul", {&a, &b});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), an = a.node(), bn = b.node(), m, k, n] {
      const auto g = view(o->grad, m, n);
      if (auto* ga = grad_of(an)) view(*ga, m, k).noalias() += g * view(bn->value, k, n).transpose();
      if (auto* gb = grad_of(bn)) view(*gb, k, n).noalias() += view(an->value, m, k).transpose() * g;
    };
  }
  return out;
}

template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.dim(1) != b.dim(1)) shape_mismatch("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<S> v(m * n);
  rowwise_matmul_nt(a.data().data(), b.data().data(), v.data(), m, k, n);
  auto out = result<S>(Shape{m, n}, std::move(v), "matmul_nt", {&a, &b});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), an = a.node(), bn = b.node(), m, k, n] {
      const auto g = view(o->grad, m, n);
      if (auto* ga = grad_of(an)) view(*ga, m, k).noalias() += g * view(bn->value, n, k);
      if (auto* gb = grad_of(bn)) view(*gb, n, k).noalias() += g.transpose() * view(an->value, m, k);
    };
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<S> v(m * n);
  view(v, n, m) = a.matrix().transpose();
  auto out = result<S>(Shape{n, m}, std::move(v), "transpose", {&a});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), an = a.node(), m, n] {
      if (auto* ga = grad_of(an)) view(*ga, m, n) += view(o->grad, n, m).transpose();
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

// b broadcasts over the rows of a when it holds exactly one row of a.
template <class S>
bool row_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) return false;
  const bool b_is_row = (b.rank() == 1) || (b.rank() == 2 && b.dim(0) == 1);
  if (a.rank() >= 1 && b_is_row && b.numel() == a.cols()) return true;
  return false;
}

template <class S, class Fwd, class GradA, class GradB>
Tensor<S> binary(const char* op, const Tensor<S>& a, const Tensor<S>& b, Fwd fwd, GradA ga_fn, GradB gb_fn) {
  const bool bcast = row_broadcast(a, b);
  if (!bcast && a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t c = bcast ? b.numel() : n;
  std::vector<S> v(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) v[i] = fwd(av[i], bv[bcast ? i % c : i]);
  auto out = result<S>(a.shape(), std::move(v), op, {&a, &b});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), an = a.node(), bn = b.node(), n, c, bcast, ga_fn, gb_fn] {
      const auto& g = o->grad;
      if (auto* ga = grad_of(an))
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += ga_fn(g[i], an->value[i], bn->value[bcast ? i % c : i]);
      if (auto* gb = grad_of(bn))
        for (std::size_t i = 0; i < n; ++i)
          (*gb)[bcast ? i % c : i] += gb_fn(g[i], an->value[i], bn->value[bcast ? i % c : i]);
    };
  }
  return out;
}

}  // namespace

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return g; });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return -g; });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  std::vector<S> v(a.data().begin(), a.data().end());
  for (auto& x : v) x *= factor;
  auto out = result<S>(a.shape(), std::move(v), "scale", {&a});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), an = a.node(), factor] {
      if (auto* ga = grad_of(an))
        for (std::size_t i = 0; i < o->grad.size(); ++i) (*ga)[i] += factor * o->grad[i];
    };
  }
  return out;
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  // Exact form: x * Phi(x).
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
  std::vector<S> v(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * S(0.5) * (S(1) + std::erf(xv[i] * inv_sqrt2));
  auto out = result<S>(x.shape(), std::move(v), "gelu", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), inv_sqrt2, inv_sqrt2pi] {
      if (auto* gx = grad_of(xn)) {
        for (std::size_t i = 0; i < o->grad.size(); ++i) {
          const S z = xn->value[i];
          const S cdf = S(0.5) * (S(1) + std::erf(z * inv_sqrt2));
          const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * z * z);
          (*gx)[i] += o->grad[i] * (cdf + z * pdf);
        }
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  std::vector<S> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? S(0) : keep_scale;
  std::vector<S> v(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] * mask[i];
  auto out = result<S>(x.shape(), std::move(v), "dropout", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), mask = std::move(mask)] {
      if (auto* gx = grad_of(xn))
        for (std::size_t i = 0; i < mask.size(); ++i) (*gx)[i] += o->grad[i] * mask[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.data()) acc += v;
  auto out = result<S>(Shape{}, std::vector<S>{acc}, "sum", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node()] {
      if (auto* gx = grad_of(xn))
        for (auto& g : *gx) g += o->grad[0];
    };
  }
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

// ---------------------------------------------------------------------------
// Normalization

template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::ptrdiff_t axis) {
  const auto rank = static_cast<std::ptrdiff_t>(x.rank());
  if (rank == 0) throw ShapeError("softmax: scalar input");
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for shape " + x.shape().str());
  const std::size_t len = x.dim(static_cast<std::size_t>(axis));
  if (len == 0) throw ShapeError("softmax: empty axis in shape " + x.shape().str());
  std::size_t inner = 1;
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t outer = x.numel() / (len * inner);

  std::vector<S> v(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      S mx = xv[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      S z = S(0);
      for (std::size_t k = 0; k < len; ++k) {
        const S e = std::exp(xv[base + k * inner] - mx);
        v[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) v[base + k * inner] /= z;
    }
  }
  auto out = result<S>(x.shape(), std::move(v), "softmax", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), outer, inner, len] {
      auto* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t oo = 0; oo < outer; ++oo) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = oo * len * inner + in;
          S dot = S(0);
          for (std::size_t k = 0; k < len; ++k) dot += o->grad[base + k * inner] * o->value[base + k * inner];
          for (std::size_t k = 0; k < len; ++k) {
            const std::size_t i = base + k * inner;
            (*gx)[i] += o->value[i] * (o->grad[i] - dot);
          }
        }
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, S eps) {
  if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c) shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (bias.numel() != c) shape_mismatch("layer_norm", x.shape(), bias.shape());
  std::vector<S> v(x.numel()), xhat(x.numel()), inv_std(r);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    S mu = S(0);
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<S>(c);
    S var = S(0);
    for (std::size_t j = 0; j < c; ++j) {
      const S d = xv[i * c + j] - mu;
      var += d * d;
    }
    var /= static_cast<S>(c);
    inv_std[i] = S(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      xhat[k] = (xv[k] - mu) * inv_std[i];
      v[k] = xhat[k] * gv[j] + bv[j];
    }
  }
  auto out = result<S>(x.shape(), std::move(v), "layer_norm", {&x, &gain, &bias});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), gn = gain.node(), bn = bias.node(), xhat = std::move(xhat),
                            inv_std = std::move(inv_std), r, c] {
      const auto& g = o->grad;
      if (auto* gg = grad_of(gn))
        for (std::size_t k = 0; k < g.size(); ++k) (*gg)[k % c] += g[k] * xhat[k];
      if (auto* gb = grad_of(bn))
        for (std::size_t k = 0; k < g.size(); ++k) (*gb)[k % c] += g[k];
      if (auto* gx = grad_of(xn)) {
        for (std::size_t i = 0; i < r; ++i) {
          S sum_dy = S(0), sum_dy_xhat = S(0);
          for (std::size_t j = 0; j < c; ++j) {
            const S dy = g[i * c + j] * gn->value[j];
            sum_dy += dy;
            sum_dy_xhat += dy * xhat[i * c + j];
          }
          const S inv_c = S(1) / static_cast<S>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t k = i * c + j;
            const S dy = g[k] * gn->value[j];
            (*gx)[k] += inv_std[i] * (dy - inv_c * sum_dy - xhat[k] * inv_c * sum_dy_xhat);
          }
        }
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> normalize_rows(const Tensor<S>& x, S eps) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<S> v(x.numel()), inv_norm(r);
  const auto xv = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    S ss = S(0);
    for (std::size_t j = 0; j < c; ++j) ss += xv[i * c + j] * xv[i * c + j];
    inv_norm[i] = S(1) / std::sqrt(ss + eps);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = xv[i * c + j] * inv_norm[i];
  }
  auto out = result<S>(x.shape(), std::move(v), "normalize_rows", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), inv_norm = std::move(inv_norm), r, c] {
      auto* gx = grad_of(xn);
      if (!gx) return;
      for (std::size_t i = 0; i < r; ++i) {
        S dot = S(0);
        for (std::size_t j = 0; j < c; ++j) dot += o->grad[i * c + j] * o->value[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t k = i * c + j;
          (*gx)[k] += inv_norm[i] * (o->grad[k] - o->value[k] * dot);
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Indexing / layout

template <class S>
Tensor<S> embedding_lookup(const Tensor<S>& table, std::span<const std::int32_t> ids) {
  require_rank2("embedding_lookup", table);
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<S> v(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto out = result<S>(Shape{ids.size(), d}, std::move(v), "embedding_lookup", {&table});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), tn = table.node(), ids = std::vector<std::int32_t>(ids.begin(), ids.end()),
                            d] {
      if (auto* gt = grad_of(tn))
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < d; ++j) (*gt)[static_cast<std::size_t>(ids[i]) * d + j] += o->grad[i * d + j];
    };
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_rows", x);
  if (begin + count > x.dim(0))
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + x.shape().str());
  const std::size_t c = x.dim(1);
  const auto xv = x.data();
  std::vector<S> v(xv.begin() + static_cast<std::ptrdiff_t>(begin * c),
                   xv.begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  auto out = result<S>(Shape{count, c}, std::move(v), "slice_rows", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), begin, c] {
      if (auto* gx = grad_of(xn))
        for (std::size_t k = 0; k < o->grad.size(); ++k) (*gx)[begin * c + k] += o->grad[k];
    };
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count) {
  require_rank2("slice_cols", x);
  if (begin + count > x.dim(1))
    throw ShapeError("slice_cols: cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + x.shape().str());
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<S> v(r * count);
  view(v, r, count) = x.matrix().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  auto out = result<S>(Shape{r, count}, std::move(v), "slice_cols", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node(), r, c, begin, count] {
      if (auto* gx = grad_of(xn))
        view(*gx, r, c).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
            view(o->grad, r, count);
    };
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2("concat_rows", p);
    if (p.cols() != c) shape_mismatch("concat_rows", parts.front().shape(), p.shape());
    rows += p.rows();
  }
  std::vector<S> v;
  v.reserve(rows * c);
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  auto out = result<S>(Shape{rows, c}, std::move(v), "concat_rows", parts);
  if (tracking(out)) {
    std::vector<NodePtr<S>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    out.node()->backward = [o = out.node(), nodes = std::move(nodes)] {
      std::size_t off = 0;
      for (auto* n : nodes) {
        if (auto* g = grad_of(n))
          for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += o->grad[off + k];
        off += n->value.size();
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t r = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.rows() != r) shape_mismatch("concat_cols", parts.front().shape(), p.shape());
    cols += p.cols();
  }
  std::vector<S> v(r * cols);
  auto m = view(v, r, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    m.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(p.cols())) = p.matrix();
    off += p.cols();
  }
  auto out = result<S>(Shape{r, cols}, std::move(v), "concat_cols", parts);
  if (tracking(out)) {
    std::vector<NodePtr<S>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    out.node()->backward = [o = out.node(), nodes = std::move(nodes), r, cols] {
      const auto g = view(o->grad, r, cols);
      std::size_t off = 0;
      for (auto* n : nodes) {
        const std::size_t c = n->shape.cols();
        if (auto* gn = grad_of(n))
          view(*gn, r, c) += g.middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(c));
        off += c;
      }
    };
  }
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape.numel() != x.numel()) shape_mismatch("reshape", x.shape(), shape);
  std::vector<S> v(x.data().begin(), x.data().end());
  auto out = result<S>(std::move(shape), std::move(v), "reshape", {&x});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), xn = x.node()] {
      if (auto* gx = grad_of(xn))
        for (std::size_t k = 0; k < gx->size(); ++k) (*gx)[k] += o->grad[k];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const std::int32_t> targets, std::int32_t ignore_id) {
  require_rank2("cross_entropy", logits);
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     logits.shape().str());
  std::size_t counted = 0;
  for (auto t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(vocab));
    ++counted;
  }
  const auto lv = logits.data();
  std::vector<S> probs(n * vocab, S(0));
  S loss = S(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_id) continue;
    const S* row = lv.data() + i * vocab;
    const S mx = *std::max_element(row, row + vocab);
    S z = S(0);
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
    const S lse = mx + std::log(z);
    loss += lse - row[static_cast<std::size_t>(targets[i])];
    for (std::size_t j = 0; j < vocab; ++j) probs[i * vocab + j] = std::exp(row[j] - lse);
  }
  const S denom = counted ? static_cast<S>(counted) : S(1);
  loss /= denom;
  auto out = result<S>(Shape{}, std::vector<S>{loss}, "cross_entropy", {&logits});
  if (tracking(out)) {
    out.node()->backward = [o = out.node(), ln = logits.node(), probs = std::move(probs),
                            targets = std::vector<std::int32_t>(targets.begin(), targets.end()), ignore_id, n, vocab,
                            denom] {
      auto* gl = grad_of(ln);
      if (!gl) return;
      const S g = o->grad[0] / denom;
      for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] == ignore_id) continue;
        for (std::size_t j = 0; j < vocab; ++j) (*gl)[i * vocab + j] += g * probs[i * vocab + j];
        (*gl)[i * vocab + static_cast<std::size_t>(targets[i])] -= g;
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instantiations

#define MMSM_INSTANTIATE_TENSOR(S)                                                                       \
  template class Tensor<S>;                                                                              \
  template void backward<S>(const Tensor<S>&);                                                           \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> matmul_nt<S>(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> transpose<S>(const Tensor<S>&);                                                     \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                                      \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                                          \
  template Tensor<S> dropout<S>(const Tensor<S>&, double, Rng&);                                         \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                           \
  template Tensor<S> mean<S>(const Tensor<S>&);                                                          \
  template Tensor<S> softmax<S>(const Tensor<S>&, std::ptrdiff_t);                                       \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);             \
  template Tensor<S> normalize_rows<S>(const Tensor<S>&, S);                                             \
  template Tensor<S> embedding_lookup<S>(const Tensor<S>&, std::span<const std::int32_t>);               \
  template Tensor<S> slice_rows<S>(const Tensor<S>&, std::size_t, std::size_t);                          \
  template Tensor<S> slice_cols<S>(const Tensor<S>&, std::size_t, std::size_t);                          \
  template Tensor<S> concat_rows<S>(const std::vector<Tensor<S>>&);                                      \
  template Tensor<S> concat_cols<S>(const std::vector<Tensor<S>>&);                                      \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                                \
  template Tensor<S> cross_entropy<S>(const Tensor<S>&, std::span<const std::int32_t>, std::int32_t);

MMSM_INSTANTIATE_TENSOR(float)
MMSM_INSTANTIATE_TENSOR(double)

#undef MMSM_INSTANTIATE_TENSOR

}  // namespace mmsm
