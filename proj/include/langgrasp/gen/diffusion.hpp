#pragma once

// Gaussian diffusion over flat vectors with a clean-sample (x0) denoiser.

#include <functional>
#include <span>
#include <vector>

#include "langgrasp/rng.hpp"

namespace langgrasp::gen {

// Steps are numbered 1..T; entry t-1 of each table belongs to step t.
struct DiffusionSchedule {
  std::vector<double> beta, alpha, alpha_bar;

  static DiffusionSchedule linear(int steps = 100, double beta_first = 1e-4, double beta_last = 0.02);
  // Every beta must lie in [0, 1); all zeros gives the identity chain.
  static DiffusionSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta.size()); }
  // Variance of the reverse step t -> t-1 (posterior variance, 0 at t = 1).
  double sigma2(int t) const;
};

// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise; requires 1 <= t <= T.
std::vector<double> forward_diffuse(const DiffusionSchedule& s, std::span<const double> x0, int t,
                                    std::span<const double> noise);
// One forward transition sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) noise.
std::vector<double> forward_step(const DiffusionSchedule& s, std::span<const double> x_prev, int t,
                                 std::span<const double> noise);

// Noise implied by a clean-sample prediction at step t.
std::vector<double> eps_from_x0(const DiffusionSchedule& s, std::span<const double> x_t, std::span<const double> x0_hat,
                                int t);
// Mean of p(x_{t-1} | x_t) given a noise prediction.
std::vector<double> reverse_mean(const DiffusionSchedule& s, std::span<const double> x_t, std::span<const double> eps_hat,
                                 int t);

// Predicts x0 for a row-major (rows, dim) batch at step t.
using X0Fn = std::function<std::vector<double>(const std::vector<double>& x_t, int t)>;

// Ancestral sampling from x_T ~ N(0, I); row r draws all its noise from rngs[r].
std::vector<double> ddpm_sample(const DiffusionSchedule& s, const X0Fn& x0_fn, std::size_t dim, std::vector<Rng>& rngs);

}  // namespace langgrasp::gen
