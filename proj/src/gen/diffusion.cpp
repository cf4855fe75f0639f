#include "langgrasp/gen/diffusion.hpp"

#include <cmath>
#include <string>

#include "langgrasp/error.hpp"

namespace langgrasp::gen {

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_first, double beta_last) {
  LANGGRASP_REQUIRE(steps >= 1, "diffusion: need at least one step");
  LANGGRASP_REQUIRE(beta_first > 0 && beta_last > 0 && beta_first < 1 && beta_last < 1, "diffusion: betas must lie in (0, 1)");
  std::vector<double> b(steps);
  for (int i = 0; i < steps; ++i)
    b[i] = steps == 1 ? beta_first : beta_first + (beta_last - beta_first) * i / (steps - 1.0);
  return from_betas(std::move(b));
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
  LANGGRASP_REQUIRE(!betas.empty(), "diffusion: empty schedule");
  DiffusionSchedule s;
  double prod = 1.0;
  for (double b : betas) {
    LANGGRASP_REQUIRE(b >= 0 && b < 1, "diffusion: beta out of [0, 1): " + std::to_string(b));
    prod *= 1.0 - b;
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(betas);
  return s;
}

double DiffusionSchedule::sigma2(int t) const {
  LANGGRASP_REQUIRE(t >= 1 && t <= steps(), "diffusion: step out of range");
  if (t == 1) return 0.0;
  const double ab = alpha_bar[t - 1], ab_prev = alpha_bar[t - 2];
  if (1.0 - ab <= 0.0) return 0.0;
  return beta[t - 1] * (1.0 - ab_prev) / (1.0 - ab);
}

namespace {

void check_step(const DiffusionSchedule& s, int t) {
  if (t < 1 || t > s.steps())
    throw ContractViolation("diffusion: step " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
}

}  // namespace

std::vector<double> forward_diffuse(const DiffusionSchedule& s, std::span<const double> x0, int t,
                                    std::span<const double> noise) {
  check_step(s, t);
  LANGGRASP_REQUIRE(x0.size() == noise.size(), "forward_diffuse: size mismatch");
  const double a = std::sqrt(s.alpha_bar[t - 1]), b = std::sqrt(1.0 - s.alpha_bar[t - 1]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
  return out;
}

std::vector<double> forward_step(const DiffusionSchedule& s, std::span<const double> x_prev, int t,
                                 std::span<const double> noise) {
  check_step(s, t);
  LANGGRASP_REQUIRE(x_prev.size() == noise.size(), "forward_step: size mismatch");
  const double a = std::sqrt(s.alpha[t - 1]), b = std::sqrt(1.0 - s.alpha[t - 1]);
  std::vector<double> out(x_prev.size());
  for (std::size_t i = 0; i < x_prev.size(); ++i) out[i] = a * x_prev[i] + b * noise[i];
  return out;
}

std::vector<double> eps_from_x0(const DiffusionSchedule& s, std::span<const double> x_t, std::span<const double> x0_hat,
                                int t) {
  check_step(s, t);
  LANGGRASP_REQUIRE(x_t.size() == x0_hat.size(), "eps_from_x0: size mismatch");
  const double ab = s.alpha_bar[t - 1];
  const double denom = std::sqrt(1.0 - ab);
  std::vector<double> eps(x_t.size(), 0.0);
  if (denom <= 0.0) return eps;
  for (std::size_t i = 0; i < x_t.size(); ++i) eps[i] = (x_t[i] - std::sqrt(ab) * x0_hat[i]) / denom;
  return eps;
}

std::vector<double> reverse_mean(const DiffusionSchedule& s, std::span<const double> x_t, std::span<const double> eps_hat,
                                 int t) {
  check_step(s, t);
  LANGGRASP_REQUIRE(x_t.size() == eps_hat.size(), "reverse_mean: size mismatch");
  const double ab = s.alpha_bar[t - 1];
  const double c = ab < 1.0 ? s.beta[t - 1] / std::sqrt(1.0 - ab) : 0.0;
  const double inv = 1.0 / std::sqrt(s.alpha[t - 1]);
  std::vector<double> mu(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) mu[i] = inv * (x_t[i] - c * eps_hat[i]);
  return mu;
}

std::vector<double> ddpm_sample(const DiffusionSchedule& s, const X0Fn& x0_fn, std::size_t dim, std::vector<Rng>& rngs) {
  const std::size_t rows = rngs.size();
  std::vector<double> x(rows * dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t d = 0; d < dim; ++d) x[r * dim + d] = rngs[r].normal();
  for (int t = s.steps(); t >= 1; --t) {
    const std::vector<double> x0 = x0_fn(x, t);
    LANGGRASP_REQUIRE(x0.size() == x.size(), "ddpm_sample: denoiser returned the wrong size");
    const std::vector<double> eps = eps_from_x0(s, x, x0, t);
    std::vector<double> mu = reverse_mean(s, x, eps, t);
    const double sigma = std::sqrt(s.sigma2(t));
    if (sigma > 0.0)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t d = 0; d < dim; ++d) mu[r * dim + d] += sigma * rngs[r].normal();
    x = std::move(mu);
  }
  return x;
}

}  // namespace langgrasp::gen
