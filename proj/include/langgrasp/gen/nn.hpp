#pragma once

// Minimal perceptron building blocks on the autodiff engine.

#include <cstddef>
#include <string>
#include <vector>

#include "langgrasp/ad/tensor.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/rng.hpp"

namespace langgrasp::gen {

using ad::Tensor;

struct Linear {
  Tensor w;  // (in, out)
  Tensor b;  // (1, out)

  // He-style normal init; zero_init gives an all-zero layer.
  static Linear make(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false);
  // x is (N, in) or (B, N, in).
  Tensor operator()(const Tensor& x) const;
};

// Linear layers with silu between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  static Mlp make(const std::vector<std::size_t>& widths, Rng& rng, bool zero_last = false);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_width() const { return layers.front().w.dim(0); }
  std::size_t out_width() const { return layers.back().w.dim(1); }
};

// Per-point perceptron followed by a max over points: (B, N, in) -> (B, out).
struct PointEncoder {
  Mlp mlp;
  static PointEncoder make(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& points) const;
};

// Sinusoidal features of integer steps: (B, width), width even.
Tensor time_embedding(const std::vector<int>& steps, std::size_t width);

// Ordered, named parameter list of a network.
struct ParamList {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;

  void add(const std::string& name, Tensor& t);
  void add(const std::string& prefix, Linear& l);
  void add(const std::string& prefix, Mlp& m);
  std::vector<Tensor> handles() const;
  std::size_t scalar_count() const;
  bool all_finite() const;

  void write(io::Writer& w) const;
  // Names and shapes must match exactly; throws IoError otherwise.
  void read(io::Reader& r, bool requires_grad = true);
};

}  // namespace langgrasp::gen
