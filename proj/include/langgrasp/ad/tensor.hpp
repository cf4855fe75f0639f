#pragma once

// Define-by-run reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tensor is a cheap handle to a graph node. Ops record their parents only when
// gradient mode is on and at least one input requires a gradient, so evaluation
// under NoGradGuard builds no graph. Graphs are per thread: never share a
// requires-grad tensor between concurrently running tasks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace langgrasp::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string to_string(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Direct write access; intended for leaves (optimizer updates, init).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient buffer; zeros if nothing was accumulated yet.
  std::span<const double> grad() const;
  void zero_grad() { node_->grad.clear(); }
  const char* op() const { return node_->op; }

  // A fresh leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording switch for the current thread.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Accumulates d(root)/d(leaf) into every requires-grad leaf reachable from root.
// Root must hold exactly one element. Throws NumericFault naming the first op
// whose value or incoming gradient is non-finite.
void backward(const Tensor& root);

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // subgradient 0 at x == 0
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);
Tensor clamp(const Tensor& x, double lo, double hi);

// Reductions. axis-wise variants drop the axis unless keepdim.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
// Gradient is routed to the arg-max; ties resolve to the lowest index.
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);

// (M,K)@(K,N), batched (B,M,K)@(B,K,N), or one side unbatched (broadcast).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// out[..., k, ...] = x[..., index[k], ...] along `axis`.
Tensor gather(const Tensor& x, std::size_t axis, std::span<const std::size_t> index);
// out has `size` slots along `axis`; out[..., index[k], ...] += x[..., k, ...].
Tensor scatter_add(const Tensor& x, std::size_t axis, std::span<const std::size_t> index, std::size_t size);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }

}  // namespace langgrasp::ad
