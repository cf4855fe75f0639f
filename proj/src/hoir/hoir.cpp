#include "langgrasp/hoir/hoir.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "langgrasp/ad/adam.hpp"
#include "langgrasp/error.hpp"
#include "langgrasp/object/object_model.hpp"

namespace langgrasp::hoir {

using ad::Tensor;

namespace {

struct Phase {
  int steps;
  double lr;
};

struct Objective {
  double fingertip = 0.0;  // weight of the fingertip term
  losses::LossWeights w;
  const std::vector<Vec3>* object_points = nullptr;
  std::vector<double> cmap_target;  // empty: no contact term
  bool fix_translation = false;
  bool early_exit = false;
  bool guard = true;  // fault on divergence
  const char* where = "hoir";
};

Tensor targets_of(const SourceGraspSpec& spec) {
  std::vector<double> v;
  for (const auto& p : spec.fingertips) v.insert(v.end(), {p.x(), p.y(), p.z()});
  return Tensor::from({1, spec.fingertips.size(), 3}, std::move(v));
}

std::vector<double> plain_cmap(const HandModel& hand, const std::vector<Vec3>& obj, const GraspPose& pose) {
  return losses::contact_map(obj, hand.forward(pose).points);
}

// Adam over the pose vector, optionally with t held as a constant. history
// receives the objective before the first step and after every step taken.
GraspPose optimize(const HandModel& hand, const SourceGraspSpec* spec, const GraspPose& start, const Objective& obj,
                   const std::vector<Phase>& phases, const HoirConfig& cfg, std::vector<double>& history) {
  const std::size_t d = hand.pose_dim();
  std::vector<double> x0 = start.to_vector();
  const double ts = cfg.translation_scale;
  LANGGRASP_REQUIRE(ts > 0, "hoir: translation scale must be positive");
  for (int i = 0; i < 3; ++i) x0[i] /= ts;
  Tensor t_const, leaf;
  if (obj.fix_translation) {
    t_const = Tensor::from({1, 3}, {x0[0], x0[1], x0[2]});
    leaf = Tensor::from({1, d - 3}, std::vector<double>(x0.begin() + 3, x0.end()), true);
  } else {
    leaf = Tensor::from({1, d}, x0, true);
  }
  Tensor targets = spec ? targets_of(*spec) : Tensor();
  Tensor object;
  Tensor cmap_target;
  if (obj.object_points) object = losses::stack_points({obj.object_points});
  if (!obj.cmap_target.empty()) cmap_target = Tensor::from({1, obj.cmap_target.size()}, obj.cmap_target);

  const Tensor unscale = Tensor::from({1, d}, [&] {
    std::vector<double> u(d, 1.0);
    u[0] = u[1] = u[2] = ts;
    return u;
  }());
  auto build = [&]() {
    const Tensor poses = (obj.fix_translation ? ad::concat({t_const, leaf}, 1) : leaf) * unscale;
    const auto posed = hand.forward(poses);
    Tensor loss = Tensor::scalar(0.0);
    if (obj.fingertip != 0) loss = loss + obj.fingertip * losses::loss_fingertip(posed, targets);
    if (obj.w.pen != 0) loss = loss + obj.w.pen * losses::loss_pen(object, hand, posed);
    if (obj.w.spen != 0) loss = loss + obj.w.spen * losses::loss_spen(hand, posed);
    if (obj.w.joint != 0) loss = loss + obj.w.joint * losses::loss_joint(hand, poses);
    if (obj.w.cmap != 0 && cmap_target.defined())
      loss = loss + obj.w.cmap * losses::loss_cmap(losses::contact_map(object, posed.points), cmap_target);
    return loss;
  };
  auto current = [&]() {
    std::vector<double> x(leaf.values().begin(), leaf.values().end());
    if (obj.fix_translation) {
      x.insert(x.begin(), start.t.data(), start.t.data() + 3);
    } else {
      for (int i = 0; i < 3; ++i) x[i] *= ts;
    }
    return GraspPose::from_vector(x, hand.joint_count());
  };

  ad::Adam opt({leaf}, ad::AdamConfig{.weight_decay = 0.0});
  history.clear();
  double initial = 0.0;
  auto record = [&](double v) {
    if (!std::isfinite(v)) throw NumericFault(obj.where, "objective is not finite");
    if (history.empty()) initial = v;
    history.push_back(v);
    if (obj.guard && v > cfg.divergence_factor * std::max(initial, cfg.divergence_floor))
      throw NumericFault(obj.where, "objective diverged from " + std::to_string(initial) + " to " + std::to_string(v));
  };
  auto aligned = [&](double v) {
    return obj.early_exit && std::sqrt(v / static_cast<double>(hand.finger_count())) < cfg.early_exit_residual;
  };

  for (const auto& phase : phases) {
    for (int k = 0; k < phase.steps; ++k) {
      opt.zero_grad();
      const Tensor loss = build();
      const double v = loss.item();
      record(v);
      if (aligned(v)) return current();
      ad::backward(loss);
      opt.step(phase.lr);
    }
  }
  {
    ad::NoGradGuard ng;
    record(build().item());
  }
  return current();
}

}  // namespace

void validate(const HandModel& hand, const SourceGraspSpec& spec) {
  LANGGRASP_REQUIRE(spec.fingertips.size() == hand.finger_count(),
                    "source spec: " + std::to_string(spec.fingertips.size()) + " fingertips for a hand with " +
                        std::to_string(hand.finger_count()) + " fingers");
  LANGGRASP_REQUIRE(spec.parts.empty() || spec.parts.size() == hand.finger_count(),
                    "source spec: part list length differs from finger count");
  for (const auto& p : spec.fingertips) LANGGRASP_REQUIRE(p.allFinite(), "source spec: non-finite fingertip target");
  LANGGRASP_REQUIRE(spec.wrist_translation.allFinite(), "source spec: non-finite wrist translation");
  LANGGRASP_REQUIRE((spec.wrist_rotation.transpose() * spec.wrist_rotation - Mat3::Identity()).norm() < 1e-6 &&
                        spec.wrist_rotation.determinant() > 0,
                    "source spec: wrist rotation is not a rotation");
}

GraspPose step1_initialize(const HandModel& hand, const SourceGraspSpec& spec) {
  validate(hand, spec);
  return GraspPose::from_rotation(spec.wrist_rotation, spec.wrist_translation, hand.mid_range());
}

GraspPose step2_fingertip_align(const HandModel& hand, const SourceGraspSpec& spec, const GraspPose& init,
                                const HoirConfig& cfg, std::vector<double>* history) {
  validate(hand, spec);
  LANGGRASP_REQUIRE(init.q.size() == hand.joint_count(), "step2: initial pose has wrong joint count");
  Objective obj;
  obj.fingertip = 1.0;
  obj.early_exit = true;
  obj.where = "hoir step 2";
  std::vector<double> h;
  GraspPose out = optimize(hand, &spec, init, obj, {{cfg.align_steps, cfg.align_lr}}, cfg, h);
  if (history) *history = std::move(h);
  return out;
}

RetargetResult step3_interaction_refine(const HandModel& hand, const std::vector<Vec3>& object_points,
                                        const GraspPose& pose2, const HoirConfig& cfg) {
  LANGGRASP_REQUIRE(!object_points.empty(), "step3: object has no points");
  LANGGRASP_REQUIRE(pose2.q.size() == hand.joint_count(), "step3: pose has wrong joint count");
  Objective obj;
  obj.w = cfg.refine_weights;
  obj.object_points = &object_points;
  obj.cmap_target = plain_cmap(hand, object_points, pose2);
  obj.fix_translation = true;
  obj.where = "hoir step 3";
  RetargetResult r;
  r.pose = optimize(hand, nullptr, pose2, obj, {{cfg.refine_steps, cfg.refine_lr}}, cfg, r.report.refine_losses);
  const auto cloud = hand.forward(r.pose);
  r.report.final_pose = r.pose;
  r.report.max_penetration = losses::max_penetration(object_points, cloud);
  r.report.cmap_drift = losses::cmap_distance(losses::contact_map(object_points, cloud.points), obj.cmap_target);
  return r;
}

double fingertip_residual(const HandModel& hand, const GraspPose& pose, const SourceGraspSpec& spec) {
  const auto cloud = hand.forward(pose);
  double s = 0;
  for (std::size_t f = 0; f < spec.fingertips.size(); ++f) s += (cloud.fingertips[f] - spec.fingertips[f]).squaredNorm();
  return std::sqrt(s / static_cast<double>(spec.fingertips.size()));
}

RetargetResult retarget(const HandModel& hand, const std::vector<Vec3>& object_points, const SourceGraspSpec& spec,
                        const HoirConfig& cfg) {
  const GraspPose p1 = step1_initialize(hand, spec);
  std::vector<double> align;
  const GraspPose p2 = step2_fingertip_align(hand, spec, p1, cfg, &align);
  RetargetResult r = step3_interaction_refine(hand, object_points, p2, cfg);
  r.report.align_losses = std::move(align);
  r.report.fingertip_residual = fingertip_residual(hand, r.pose, spec);
  return r;
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::step1, Variant::step1_2, Variant::full, Variant::all_in_one,
                                      Variant::free_translation};
  return v;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::step1: return "step1";
    case Variant::step1_2: return "step1+2";
    case Variant::full: return "step1+2+3";
    case Variant::all_in_one: return "all-in-one";
    case Variant::free_translation: return "w/o-fix-translation";
  }
  return "?";
}

GraspPose run_variant(const HandModel& hand, const std::vector<Vec3>& object_points, const SourceGraspSpec& spec,
                      Variant v, const HoirConfig& cfg) {
  const GraspPose p1 = step1_initialize(hand, spec);
  if (v == Variant::step1) return p1;
  if (v == Variant::all_in_one) {
    Objective obj;
    obj.fingertip = 1.0;
    obj.w = cfg.refine_weights;
    obj.object_points = &object_points;
    obj.cmap_target = plain_cmap(hand, object_points, p1);
    obj.guard = false;
    obj.where = "hoir all-in-one";
    std::vector<double> h;
    return optimize(hand, &spec, p1, obj, {{cfg.align_steps, cfg.align_lr}, {cfg.refine_steps, cfg.refine_lr}}, cfg, h);
  }
  const GraspPose p2 = step2_fingertip_align(hand, spec, p1, cfg);
  if (v == Variant::step1_2) return p2;
  if (v == Variant::full) return step3_interaction_refine(hand, object_points, p2, cfg).pose;
  Objective obj;
  obj.w = cfg.refine_weights;
  obj.object_points = &object_points;
  obj.cmap_target = plain_cmap(hand, object_points, p2);
  obj.where = "hoir step 3";
  std::vector<double> h;
  return optimize(hand, nullptr, p2, obj, {{cfg.refine_steps, cfg.refine_lr}}, cfg, h);
}

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-9) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

}  // namespace

ConstructedCase construct_case(const HandModel& hand, const std::vector<Vec3>& object_points, Rng& rng,
                               const ConstructOptions& opt) {
  LANGGRASP_REQUIRE(!object_points.empty(), "construct_case: object has no points");
  double reach = 0;
  for (const auto& p : object_points) reach = std::max(reach, p.norm());

  // Palm (+y) faces the object; the grasp centre sits on the approach line.
  const Vec3 dir = random_unit(rng);
  Vec3 side = random_unit(rng);
  side = (side - side.dot(dir) * dir).normalized();
  Mat3 r;
  r.col(1) = -dir;
  r.col(2) = side;
  r.col(0) = r.col(1).cross(r.col(2));
  std::vector<double> q = hand.mid_range();
  auto signed_draw = [&](double lo, double hi) { return (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi); };
  for (auto& v : q) v += signed_draw(opt.q_min, opt.q_max);
  const Vec3 grasp_center(0.0, 0.02, 0.07);

  auto pose_at = [&](double s) { return GraspPose::from_rotation(r, s * dir - r * grasp_center, q); };
  // Positive once the placement is deeper than requested.
  auto excess = [&](double s) {
    const auto cloud = hand.forward(pose_at(s));
    if (opt.penetration > 0) return losses::max_penetration(object_points, cloud) - opt.penetration;
    double gap = std::numeric_limits<double>::infinity();
    for (const auto& x : object_points) gap = std::min(gap, losses::hand_sdf(cloud, x));
    return opt.clearance - gap;
  };

  double far = reach + 0.12;
  if (excess(far) > 0) throw NumericFault("construct_case", "hand intersects the object at the far placement");
  double near = far;
  const double step = 0.002;
  while (near > -reach) {
    near -= step;
    if (excess(near) > 0) break;
  }
  if (excess(near) <= 0) throw NumericFault("construct_case", "no placement reaches the requested depth");
  double lo = near, hi = near + step;  // excess(lo) > 0 >= excess(hi)
  for (int i = 0; i < 40; ++i) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0 ? lo : hi) = mid;
  }

  ConstructedCase c;
  c.hidden = pose_at(hi);
  const auto cloud = hand.forward(c.hidden);
  c.spec.fingertips = cloud.fingertips;
  const Mat3 err = Eigen::AngleAxisd(rng.uniform(opt.angle_min, opt.angle_max), random_unit(rng)).toRotationMatrix();
  c.spec.wrist_rotation = err * c.hidden.rotation();
  c.spec.wrist_translation = c.hidden.t;
  for (int i = 0; i < 3; ++i) c.spec.wrist_translation[i] += signed_draw(opt.offset_min, opt.offset_max);
  return c;
}

std::vector<BenchmarkCase> benchmark_cases(const HandModel& hand, std::size_t n, std::uint64_t seed,
                                           std::size_t object_points) {
  const Rng root = Rng(seed).stream("hoir-benchmark");
  const auto& cats = object::catalog_categories();
  std::vector<BenchmarkCase> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.stream(i);
    BenchmarkCase b;
    b.category = cats[i % cats.size()];
    const auto obj = object::make_catalog_object(b.category, rng);
    b.object_points = obj.sample_surface(object_points, rng.next_u64()).points;
    ConstructOptions opt;
    opt.penetration = rng.uniform(0.001, 0.005);
    b.c = construct_case(hand, b.object_points, rng, opt);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace langgrasp::hoir
