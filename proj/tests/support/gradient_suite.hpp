#pragma once

// Finite-difference checks of forward kinematics and every grasp loss with
// respect to the pose, over seeded random configurations kept away from the
// kinks of nearest-neighbour and penetration selections.

#include <map>
#include <stdexcept>
#include <string>

#include "support/fd.hpp"
#include "support/scenes.hpp"

namespace testing_support {

struct GradientSuiteResult {
  std::map<std::string, double> worst;  // loss name -> max relative error
  std::map<std::string, int> configs;
};

inline GradientSuiteResult run_gradient_suite(int configs, std::uint64_t seed) {
  using langgrasp::ad::Tensor;
  namespace L = langgrasp::losses;
  const HandModel h = HandModel::toy_hand12();
  const auto dense = ball(0.04).sample_surface(256, seed).points;
  const std::vector<Vec3> obj(dense.begin(), dense.begin() + 8);
  const Tensor objt = L::stack_points({&dense});
  const Tensor objs = L::stack_points({&obj});
  // With h = 1e-5 no point moves more than 1e-5 m, so squared distances up to
  // 0.1 m change by less than 2e-6 and penetration depths by less than 1e-5.
  const double tie = 4e-6;
  const double pen_margin = 2e-5;

  struct Scene {
    GraspPose p;
    Tensor target_pose, target_points, target_map;
    std::vector<Vec3> target_sub;
  };
  using Valid = std::function<bool(const Scene&)>;
  using Loss = std::function<Tensor(const Scene&, const Tensor&)>;
  auto always = [](const Scene&) { return true; };
  std::vector<std::tuple<std::string, Valid, Loss>> cases;
  Rng wr = Rng(seed).stream("weights");
  std::vector<double> wp(h.point_count() * 3), wt(h.finger_count() * 3), wa(h.anchor_count() * 3);
  for (auto* v : {&wp, &wt, &wa})
    for (auto& x : *v) x = wr.normal();
  const Tensor wpt = Tensor::from({1, h.point_count(), 3}, wp);
  const Tensor wtt = Tensor::from({1, h.finger_count(), 3}, wt);
  const Tensor wat = Tensor::from({1, h.anchor_count(), 3}, wa);
  cases.emplace_back("forward_kinematics", always, [&](const Scene&, const Tensor& x) {
    const auto ph = h.forward(x);
    return langgrasp::ad::sum(ph.points * wpt) + langgrasp::ad::sum(ph.fingertips * wtt) + langgrasp::ad::sum(ph.anchors * wat);
  });
  cases.emplace_back("loss_para", always, [&](const Scene& s, const Tensor& x) { return L::loss_para(x, s.target_pose); });
  cases.emplace_back(
      "loss_chamfer",
      [&](const Scene& s) {
        const auto hc = h.forward(s.p);
        return selection_margin(hc.points, s.target_sub) > tie && selection_margin(s.target_sub, hc.points) > tie;
      },
      [&](const Scene& s, const Tensor& x) { return L::loss_chamfer(h.forward(x).points, s.target_points); });
  cases.emplace_back(
      "loss_cmap", [&](const Scene& s) { return selection_margin(obj, h.forward(s.p).points) > tie; },
      [&](const Scene& s, const Tensor& x) { return L::loss_cmap(L::contact_map(objs, h.forward(x).points), s.target_map); });
  cases.emplace_back(
      "loss_pen", [&](const Scene& s) { return penetration_margin(dense, h.forward(s.p)) > pen_margin; },
      [&](const Scene&, const Tensor& x) { return L::loss_pen(objt, h, h.forward(x)); });
  cases.emplace_back("loss_spen", always, [&](const Scene&, const Tensor& x) { return L::loss_spen(h, h.forward(x)); });
  cases.emplace_back("loss_joint", always, [&](const Scene&, const Tensor& x) { return L::loss_joint(h, x); });

  GradientSuiteResult out;
  for (const auto& [name, valid, loss] : cases) {
    Rng rng = Rng(seed).stream(name);
    int attempts = 0;
    while (out.configs[name] < configs) {
      if (++attempts > 5000) throw std::runtime_error("gradient suite: no tie-free configuration for " + name);
      Scene s;
      s.p = pose_facing_origin(h, rng, 0.025, 0.2);
      const GraspPose target = pose_facing_origin(h, rng, 0.03);
      const auto thc = h.forward(target);
      for (std::size_t i = 0; i < thc.points.size(); i += 47) s.target_sub.push_back(thc.points[i]);
      if (!valid(s)) continue;
      s.target_pose = Tensor::from({1, h.pose_dim()}, target.to_vector());
      s.target_points = L::stack_points({&s.target_sub});
      s.target_map = L::contact_map(objs, L::stack_points({&thc.points}));
      const auto r = check_gradient([&](const Tensor& x) { return loss(s, x); }, {1, h.pose_dim()}, s.p.to_vector());
      out.worst[name] = std::max(out.worst[name], r.max_rel_error);
      ++out.configs[name];
    }
  }
  return out;
}

}  // namespace testing_support
