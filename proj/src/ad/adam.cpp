#include "langgrasp/ad/adam.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "langgrasp/error.hpp"

namespace langgrasp::ad {

double CosineSchedule::at(int epoch) const {
  if (total_epochs <= 1) return initial;
  const double p = std::clamp(static_cast<double>(epoch) / static_cast<double>(total_epochs - 1), 0.0, 1.0);
  return final_lr + 0.5 * (initial - final_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

void adam_step(std::span<std::span<double>> params, std::span<const std::span<const double>> grads, OptimState& state,
               const AdamConfig& cfg, double lr) {
  LANGGRASP_REQUIRE(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (auto p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  LANGGRASP_REQUIRE(state.first_moment.size() == params.size(), "adam_step: state was built for other parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    LANGGRASP_REQUIRE(state.first_moment[i].size() == params[i].size(), "adam_step: moment/parameter shape mismatch");
    LANGGRASP_REQUIRE(grads[i].empty() || grads[i].size() == params[i].size(), "adam_step: gradient shape mismatch");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p[j]);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) LANGGRASP_REQUIRE(p.requires_grad(), "Adam: parameter does not require grad");
}

void Adam::step(double lr) {
  std::vector<std::span<double>> ps;
  std::vector<std::span<const double>> gs;
  for (auto& p : params_) {
    ps.push_back(p.mutable_values());
    gs.push_back(p.has_grad() ? p.grad() : std::span<const double>{});
  }
  adam_step(ps, gs, state_, cfg_, lr);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace langgrasp::ad
