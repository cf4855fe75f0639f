#include "langgrasp/ad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "langgrasp/error.hpp"

namespace langgrasp::ad {

namespace {

thread_local bool g_grad_enabled = true;

using Strides = std::vector<std::size_t>;

Tensor make(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
            std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->leaf = false;
  bool rg = false;
  if (g_grad_enabled)
    for (const auto& t : inputs) rg = rg || t.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.ptr());
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

// Gradient sink for parent i, or nullptr when it does not need one.
double* sink(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ContractViolation("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Strides broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  Strides st(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t j = r - 1 - k;
    if (in[i] != 1) st[j] = stride;
    stride *= in[i];
  }
  return st;
}

// Calls f(out_index, a_index, b_index) over every element of `out`.
template <class F>
void iterate2(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t total = numel(out);
  if (total == 0) return;
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t as = sa[r - 1], bs = sb[r - 1];
  const std::size_t outer = total / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0, o = 0;
  for (std::size_t rep = 0; rep < outer; ++rep) {
    std::size_t ia = oa, ib = ob;
    for (std::size_t k = 0; k < inner; ++k, ++o, ia += as, ib += bs) f(o, ia, ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make(op, a.shape(), std::move(out), {a, b}, [da, db](Node& self) {
      const auto& g = self.grad;
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (double* ga = sink(self, 0))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(x[i], y[i]);
      if (double* gb = sink(self, 1))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(x[i], y[i]);
    });
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  Strides sa = broadcast_strides(a.shape(), shape);
  Strides sb = broadcast_strides(b.shape(), shape);
  std::vector<double> out(numel(shape));
  iterate2(shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  return make(op, shape, std::move(out), {a, b}, [da, db, sa, sb](Node& self) {
    const auto& g = self.grad;
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    double* ga = sink(self, 0);
    double* gb = sink(self, 1);
    iterate2(self.shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (ga) ga[i] += g[o] * da(x[i], y[j]);
      if (gb) gb[j] += g[o] * db(x[i], y[j]);
    });
  });
}

// df(x, y) is the local derivative given input x and output y.
template <class F, class Df>
Tensor unary(const char* op, const Tensor& x, F f, Df df) {
  const auto& xv = x.node().value;
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make(op, x.shape(), std::move(out), {x}, [df](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    const auto& g = self.grad;
    const auto& xin = self.parents[0]->value;
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xin[i], y[i]);
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ContractViolation("axis " + std::to_string(axis) + " out of range for " + to_string(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim)
    out[axis] = 1;
  else
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// C(M,N) += A(M,K) * B(K,N), row-major.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

void transpose_into(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> values(ad::numel(shape), v);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != ad::numel(shape))
    throw ContractViolation("tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ContractViolation("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw ContractViolation("backward: root must be a scalar, got " + (root.defined() ? to_string(root.shape()) : "undefined"));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.ptr().get(), 0}};
  seen.insert(root.ptr().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!all_finite(n->value)) throw NumericFault(n->op, "non-finite value in forward pass");
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root.ptr()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    if (!all_finite(n->grad)) throw NumericFault(n->op, "non-finite gradient");
    n->backward_fn(*n);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shape(x.shape(), shape) != shape)
    throw ContractViolation("broadcast_to: cannot expand " + to_string(x.shape()) + " to " + to_string(shape));
  Strides sx = broadcast_strides(x.shape(), shape);
  Strides zero(shape.size(), 0);
  const auto& xv = x.node().value;
  std::vector<double> out(numel(shape));
  iterate2(shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
  return make("broadcast", shape, std::move(out), {x}, [sx, zero](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    const auto& g = self.grad;
    iterate2(self.shape, sx, zero, [&](std::size_t o, std::size_t i, std::size_t) { gx[i] += g[o]; });
  });
}

Tensor neg(const Tensor& x) {
  return unary("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double s) {
  return unary("scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sin(const Tensor& x) {
  return unary("sin", x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary("cos", x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      "clamp_min", x, [lo](double v) { return v > lo ? v : lo; }, [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.node().value) s += v;
  return make("sum", {}, {s}, {x}, [](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    const double g = self.grad[0];
    const std::size_t n = self.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_at(x.shape(), axis);
  const auto& xv = x.node().value;
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      const double* src = xv.data() + (o * sp.n + k) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  return make("sum_axis", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x}, [sp](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k) {
        double* dst = gx + (o * sp.n + k) * sp.inner;
        const double* src = g.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return scale(sum(x), 1.0 / n);
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(split_at(x.shape(), axis).n);
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (sp.n == 0) throw ContractViolation("max over empty axis");
  const auto& xv = x.node().value;
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = 0;
      double bv = xv[o * sp.n * sp.inner + i];
      for (std::size_t k = 1; k < sp.n; ++k) {
        const double v = xv[(o * sp.n + k) * sp.inner + i];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      out[o * sp.inner + i] = bv;
      arg[o * sp.inner + i] = best;
    }
  return make("max", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
              [sp, arg = std::move(arg)](Node& self) {
                double* gx = sink(self, 0);
                if (!gx) return;
                for (std::size_t o = 0; o < sp.outer; ++o)
                  for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t j = o * sp.inner + i;
                    gx[(o * sp.n + arg[j]) * sp.inner + i] += self.grad[j];
                  }
              });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t ra = a.rank(), rb = b.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3)
    throw ContractViolation("matmul: ranks must be 2 or 3, got " + to_string(a.shape()) + " @ " + to_string(b.shape()));
  const std::size_t ba = ra == 3 ? a.dim(0) : 1;
  const std::size_t bb = rb == 3 ? b.dim(0) : 1;
  const std::size_t m = a.dim(ra - 2), k = a.dim(ra - 1);
  const std::size_t k2 = b.dim(rb - 2), n = b.dim(rb - 1);
  if (k != k2 || (ba != bb && ba != 1 && bb != 1))
    throw ContractViolation("matmul: shape mismatch " + to_string(a.shape()) + " @ " + to_string(b.shape()));
  const std::size_t batch = std::max(ba, bb);
  const bool batched = ra == 3 || rb == 3;
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const auto& av = a.node().value;
  const auto& bv = b.node().value;
  for (std::size_t t = 0; t < batch; ++t)
    gemm_acc(av.data() + (ba == 1 ? 0 : t * m * k), bv.data() + (bb == 1 ? 0 : t * k * n), out.data() + t * m * n, m, k,
             n);
  return make("matmul", std::move(shape), std::move(out), {a, b}, [=](Node& self) {
    const auto& g = self.grad;
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    double* ga = sink(self, 0);
    double* gb = sink(self, 1);
    std::vector<double> tmp;
    for (std::size_t t = 0; t < batch; ++t) {
      const double* gt = g.data() + t * m * n;
      const double* xt = x.data() + (ba == 1 ? 0 : t * m * k);
      const double* yt = y.data() + (bb == 1 ? 0 : t * k * n);
      if (ga) {  // dA += dC * B^T
        tmp.resize(n * k);
        transpose_into(yt, tmp.data(), k, n);
        gemm_acc(gt, tmp.data(), ga + (ba == 1 ? 0 : t * m * k), m, n, k);
      }
      if (gb) {  // dB += A^T * dC
        tmp.resize(k * m);
        transpose_into(xt, tmp.data(), m, k);
        gemm_acc(tmp.data(), gt, gb + (bb == 1 ? 0 : t * k * n), k, m, n);
      }
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ContractViolation("transpose: rank < 2");
  Shape shape = x.shape();
  const std::size_t r = shape[shape.size() - 2], c = shape.back();
  std::swap(shape[shape.size() - 2], shape.back());
  const std::size_t batch = x.numel() / (r * c == 0 ? 1 : r * c);
  std::vector<double> out(x.numel());
  for (std::size_t t = 0; t < batch; ++t) transpose_into(x.node().value.data() + t * r * c, out.data() + t * r * c, r, c);
  return make("transpose", std::move(shape), std::move(out), {x}, [r, c, batch](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ContractViolation("reshape: " + to_string(x.shape()) + " to " + to_string(shape));
  return make("reshape", std::move(shape), x.node().value, {x}, [](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor gather(const Tensor& x, std::size_t axis, std::span<const std::size_t> index) {
  const AxisSplit sp = split_at(x.shape(), axis);
  for (std::size_t i : index)
    if (i >= sp.n) throw ContractViolation("gather: index " + std::to_string(i) + " out of range " + std::to_string(sp.n));
  const std::size_t m = index.size();
  Shape shape = x.shape();
  shape[axis] = m;
  const auto& xv = x.node().value;
  std::vector<double> out(sp.outer * m * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < m; ++k)
      std::copy_n(xv.data() + (o * sp.n + index[k]) * sp.inner, sp.inner, out.data() + (o * m + k) * sp.inner);
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make("gather", std::move(shape), std::move(out), {x}, [sp, m, idx = std::move(idx)](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < m; ++k) {
        double* dst = gx + (o * sp.n + idx[k]) * sp.inner;
        const double* src = self.grad.data() + (o * m + k) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor scatter_add(const Tensor& x, std::size_t axis, std::span<const std::size_t> index, std::size_t size) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (index.size() != sp.n) throw ContractViolation("scatter_add: index length does not match axis");
  for (std::size_t i : index)
    if (i >= size) throw ContractViolation("scatter_add: index out of range");
  Shape shape = x.shape();
  shape[axis] = size;
  const auto& xv = x.node().value;
  std::vector<double> out(sp.outer * size * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.n; ++k) {
      double* dst = out.data() + (o * size + index[k]) * sp.inner;
      const double* src = xv.data() + (o * sp.n + k) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make("scatter_add", std::move(shape), std::move(out), {x}, [sp, size, idx = std::move(idx)](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double* src = self.grad.data() + (o * size + idx[k]) * sp.inner;
        double* dst = gx + (o * sp.n + k) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractViolation("concat: no inputs");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ContractViolation("concat: axis out of range");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ContractViolation("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d]) throw ContractViolation("concat: shape mismatch " + to_string(s));
    widths.push_back(s[axis]);
    total += s[axis];
  }
  shape[axis] = total;
  const AxisSplit sp = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].node().value;
    const std::size_t w = widths[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(v.data() + o * w, w, out.data() + o * total * sp.inner + offset * sp.inner);
    offset += widths[p];
  }
  return make("concat", std::move(shape), std::move(out), parts, [sp, total, widths](Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t w = widths[p] * sp.inner;
      if (double* gp = sink(self, p))
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = self.grad.data() + o * total * sp.inner + offset * sp.inner;
          for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += src[i];
        }
      offset += widths[p];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit sp = split_at(x.shape(), axis);
  if (begin > end || end > sp.n) throw ContractViolation("slice: bad range");
  const std::size_t w = end - begin;
  Shape shape = x.shape();
  shape[axis] = w;
  const auto& xv = x.node().value;
  std::vector<double> out(sp.outer * w * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(xv.data() + (o * sp.n + begin) * sp.inner, w * sp.inner, out.data() + o * w * sp.inner);
  return make("slice", std::move(shape), std::move(out), {x}, [sp, begin, w](Node& self) {
    double* gx = sink(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = gx + (o * sp.n + begin) * sp.inner;
      const double* src = self.grad.data() + o * w * sp.inner;
      for (std::size_t i = 0; i < w * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

}  // namespace langgrasp::ad
