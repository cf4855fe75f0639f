#include "langgrasp/gen/nn.hpp"

#include <cmath>

#include "langgrasp/error.hpp"

namespace langgrasp::gen {

using ad::Shape;

Linear Linear::make(std::size_t in, std::size_t out, Rng& rng, bool zero_init) {
  std::vector<double> w(in * out, 0.0);
  if (!zero_init) {
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& x : w) x = sd * rng.normal();
  }
  return {Tensor::from({in, out}, std::move(w), true), Tensor::zeros({1, out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.rank() == 3) {
    const std::size_t b = x.dim(0), n = x.dim(1);
    Tensor flat = reshape(x, {b * n, x.dim(2)});
    return reshape(add(matmul(flat, w), this->b), {b, n, w.dim(1)});
  }
  return add(matmul(x, w), b);
}

Mlp Mlp::make(const std::vector<std::size_t>& widths, Rng& rng, bool zero_last) {
  LANGGRASP_REQUIRE(widths.size() >= 2, "mlp: need input and output widths");
  Mlp m;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(Linear::make(widths[i], widths[i + 1], rng, zero_last && i + 2 == widths.size()));
  return m;
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = silu(h);
  }
  return h;
}

PointEncoder PointEncoder::make(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {Mlp::make({in, hidden, out}, rng)};
}

Tensor PointEncoder::operator()(const Tensor& points) const {
  LANGGRASP_REQUIRE(points.rank() == 3, "point encoder: expected (B, N, C)");
  return max(mlp(points), 1);
}

Tensor time_embedding(const std::vector<int>& steps, std::size_t width) {
  LANGGRASP_REQUIRE(width >= 2 && width % 2 == 0, "time embedding: width must be even");
  const std::size_t half = width / 2;
  std::vector<double> v(steps.size() * width);
  for (std::size_t r = 0; r < steps.size(); ++r)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
      v[r * width + k] = std::sin(steps[r] * freq);
      v[r * width + half + k] = std::cos(steps[r] * freq);
    }
  return Tensor::from({steps.size(), width}, std::move(v));
}

void ParamList::add(const std::string& name, Tensor& t) {
  names.push_back(name);
  tensors.push_back(&t);
}

void ParamList::add(const std::string& prefix, Linear& l) {
  add(prefix + ".w", l.w);
  add(prefix + ".b", l.b);
}

void ParamList::add(const std::string& prefix, Mlp& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) add(prefix + "." + std::to_string(i), m.layers[i]);
}

std::vector<Tensor> ParamList::handles() const {
  std::vector<Tensor> out;
  for (auto* t : tensors) out.push_back(*t);
  return out;
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (auto* t : tensors) n += t->numel();
  return n;
}

bool ParamList::all_finite() const {
  for (auto* t : tensors)
    for (double x : t->values())
      if (!std::isfinite(x)) return false;
  return true;
}

void ParamList::write(io::Writer& w) const {
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    w.str(names[i]);
    const Shape& s = tensors[i]->shape();
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (auto d : s) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(std::vector<double>(tensors[i]->values().begin(), tensors[i]->values().end()));
  }
}

void ParamList::read(io::Reader& r, bool requires_grad) {
  const std::uint32_t n = r.u32();
  if (n != tensors.size())
    throw IoError("checkpoint: " + std::to_string(n) + " tensors, expected " + std::to_string(tensors.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    if (name != names[i]) throw IoError("checkpoint: tensor '" + name + "', expected '" + names[i] + "'");
    const std::uint32_t rank = r.u32();
    Shape s(rank);
    for (auto& d : s) d = r.u32();
    if (s != tensors[i]->shape())
      throw IoError("checkpoint: tensor '" + name + "' has shape " + ad::to_string(s) + ", expected " +
                    ad::to_string(tensors[i]->shape()));
    std::vector<double> v = r.f64s();
    if (v.size() != ad::numel(s)) throw IoError("checkpoint: tensor '" + name + "' size mismatch");
    *tensors[i] = Tensor::from(s, std::move(v), requires_grad);
  }
}

}  // namespace langgrasp::gen
