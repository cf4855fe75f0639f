#include <gtest/gtest.h>

#include <cmath>

#include "langgrasp/error.hpp"
#include "langgrasp/losses/losses.hpp"
#include "support/fd.hpp"
#include "support/gradient_suite.hpp"
#include "support/scenes.hpp"

using namespace langgrasp;
using namespace langgrasp::losses;
using hand::GraspPose;
using hand::HandModel;
using testing_support::check_gradient;

namespace {

const HandModel& toy() {
  static const HandModel h = HandModel::toy_hand12();
  return h;
}

std::vector<Vec3> random_cloud(Rng& rng, std::size_t n, double s = 1.0) {
  std::vector<Vec3> v(n);
  for (auto& p : v) p = Vec3(rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s));
  return v;
}

Tensor one(const std::vector<Vec3>& pts) { return stack_points({&pts}); }

// O(n^2) oracle written independently of the library.
double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto dir = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
    double s = 0;
    for (const auto& p : x) {
      double best = 1e300;
      for (const auto& q : y) {
        const double dx = p.x() - q.x(), dy = p.y() - q.y(), dz = p.z() - q.z();
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      s += best;
    }
    return s;
  };
  return dir(a, b) + dir(b, a);
}

std::vector<double> brute_contact(const std::vector<Vec3>& obj, const std::vector<Vec3>& hand) {
  std::vector<double> out;
  for (const auto& p : obj) {
    double best = 1e300;
    for (const auto& q : hand) {
      const double dx = p.x() - q.x(), dy = p.y() - q.y(), dz = p.z() - q.z();
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

double capsule_sdf(const hand::Capsule& c, const Vec3& x) {
  const Vec3 s = c.b - c.a;
  const double u = std::clamp((x - c.a).dot(s) / s.squaredNorm(), 0.0, 1.0);
  return (x - (c.a + u * s)).norm() - c.radius;
}

double brute_pen(const std::vector<Vec3>& obj, const hand::HandCloud& hc) {
  double s = 0;
  for (const auto& x : obj) {
    double d = 1e300;
    for (const auto& c : hc.capsules) d = std::min(d, capsule_sdf(c, x));
    s += std::max(0.0, -d);
  }
  return s;
}

Tensor pose_tensor(const GraspPose& p) { return Tensor::from({1, p.q.size() + 9}, p.to_vector()); }

// Palm-only hand plus one finger, for closed-form capsule cases.
HandModel tiny_hand() {
  hand::PalmSpec palm;
  palm.capsules = {{Vec3(-0.02, 0, 0), Vec3(0.02, 0, 0), 0.01}};
  hand::FingerSpec f;
  f.name = "finger";
  f.base_position = Vec3(0, 0, 0.05);
  hand::JointSpec j;
  j.length = 0.03;
  j.radius = 0.008;
  f.joints = {j};
  f.tip_offset = Vec3(0, 0, 0.03);
  return HandModel("tiny", palm, {f});
}

}  // namespace

TEST(LossPara, Cases) {
  Rng rng(1);
  std::vector<double> a(21), b(21);
  for (auto& x : a) x = rng.normal();
  EXPECT_EQ(loss_para(Tensor::from({1, 21}, a), Tensor::from({1, 21}, a)).item(), 0.0);
  b = a;
  b[7] += 1.0;
  EXPECT_NEAR(loss_para(Tensor::from({1, 21}, a), Tensor::from({1, 21}, b)).item(), 1.0 / 21.0, 1e-15);
  for (auto& x : b) x = rng.normal();
  double oracle = 0;
  for (int i = 0; i < 21; ++i) oracle += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(loss_para(Tensor::from({1, 21}, a), Tensor::from({1, 21}, b)).item(), oracle / 21, 1e-14);
}

TEST(LossChamfer, Cases) {
  Rng rng(2);
  const auto a = random_cloud(rng, 30);
  EXPECT_EQ(loss_chamfer(one(a), one(a)).item(), 0.0);
  EXPECT_EQ(loss_chamfer(one({Vec3(0, 0, 0)}), one({Vec3(1, 0, 0)})).item(), 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_cloud(rng, 50), y = random_cloud(rng, 50);
    const double oracle = brute_chamfer(x, y);
    EXPECT_NEAR(loss_chamfer(one(x), one(y)).item(), oracle, 1e-12 * oracle);
    EXPECT_EQ(chamfer(x, y), oracle);
  }
  EXPECT_THROW(chamfer({}, a), ContractViolation);
  EXPECT_THROW(loss_chamfer(Tensor::zeros({1, 0, 3}), one(a)), ContractViolation);
}

TEST(LossChamfer, BatchedEqualsSumOfSingles) {
  Rng rng(3);
  const auto a1 = random_cloud(rng, 20), a2 = random_cloud(rng, 20), b1 = random_cloud(rng, 15), b2 = random_cloud(rng, 15);
  const double batched = loss_chamfer(stack_points({&a1, &a2}), stack_points({&b1, &b2})).item();
  EXPECT_NEAR(batched, chamfer(a1, b1) + chamfer(a2, b2), 1e-12);
}

TEST(ContactMap, Cases) {
  Rng rng(4);
  auto obj = random_cloud(rng, 40);
  auto hand_pts = random_cloud(rng, 10);
  hand_pts[3] = obj[5];
  EXPECT_EQ(contact_map(obj, hand_pts)[5], 0.0);
  const Vec3 c(0.3, -0.2, 0.1);
  std::vector<Vec3> sphere;
  for (int i = 0; i < 20; ++i) sphere.push_back(c + 0.7 * testing_support::random_rotation(rng).col(0));
  for (double v : contact_map(sphere, {c})) EXPECT_NEAR(v, 0.7, 1e-12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto o = random_cloud(rng, 40), h = random_cloud(rng, 30);
    const auto t = contact_map(one(o), one(h));
    const auto oracle = brute_contact(o, h);
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(t[i], oracle[i], 1e-12 * oracle[i]);
    EXPECT_EQ(contact_map(o, h), brute_contact(o, h));
  }
}

TEST(LossCmap, Cases) {
  Rng rng(5);
  std::vector<double> a(30), b(30);
  for (auto& x : a) x = rng.uniform();
  EXPECT_EQ(loss_cmap(Tensor::from({1, 30}, a), Tensor::from({1, 30}, a)).item(), 0.0);
  b = a;
  b[4] += 0.01;
  EXPECT_NEAR(loss_cmap(Tensor::from({1, 30}, a), Tensor::from({1, 30}, b)).item(), 1e-4, 1e-15);
  for (auto& x : b) x = rng.uniform();
  double oracle = 0;
  for (int i = 0; i < 30; ++i) oracle += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(loss_cmap(Tensor::from({1, 30}, a), Tensor::from({1, 30}, b)).item(), oracle, 1e-14);
  EXPECT_THROW(loss_cmap(Tensor::from({1, 30}, a), Tensor::zeros({1, 29})), ContractViolation);
  EXPECT_THROW(cmap_distance(a, std::vector<double>(29)), ContractViolation);
}

TEST(LossPen, FarHandIsZero) {
  Rng rng(6);
  const auto obj = testing_support::ball(0.04).sample_surface(256, 1).points;
  GraspPose p;
  p.q = toy().mid_range();
  p.t = Vec3(1.0, 0, 0);
  const auto poses = pose_tensor(p);
  EXPECT_EQ(loss_pen(one(obj), toy(), toy().forward(poses)).item(), 0.0);
}

TEST(LossPen, PointOnCapsuleAxis) {
  const HandModel h = tiny_hand();
  GraspPose p;
  p.q = {0.0};
  const auto poses = Tensor::from({1, h.pose_dim()}, p.to_vector());
  EXPECT_NEAR(loss_pen(one({Vec3(0.005, 0, 0)}), h, h.forward(poses)).item(), 0.01, 1e-15);
  EXPECT_NEAR(max_penetration({Vec3(0.005, 0, 0)}, h.forward(p)), 0.01, 1e-15);
}

TEST(LossPen, MatchesAnalyticLoopOracle) {
  Rng rng(7);
  const auto obj = testing_support::ball(0.04).sample_surface(256, 2).points;
  int penetrating = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const GraspPose p = testing_support::pose_facing_origin(toy(), rng, 0.03);
    const auto hc = toy().forward(p);
    const double oracle = brute_pen(obj, hc);
    EXPECT_NEAR(loss_pen(one(obj), toy(), toy().forward(pose_tensor(p))).item(), oracle, 1e-12);
    penetrating += oracle > 0;
  }
  EXPECT_GT(penetrating, 25);
}

TEST(LossPen, MonotoneWhenRetreatingAlongCentroidLine) {
  Rng rng(8);
  const auto ballobj = testing_support::ball(0.04);
  const auto obj = ballobj.sample_surface(256, 3).points;
  int checked = 0;
  while (checked < 10) {
    GraspPose p = testing_support::pose_facing_origin(toy(), rng, 0.05);
    for (auto& q : p.q) q *= 0.2;
    const Vec3 dir = (p.rotation() * Vec3(0, 0, 0.04) + p.t).normalized();
    // The hand must lie in the half-space beyond the centroid for the property to apply.
    bool one_side = true;
    for (const auto& x : toy().forward(p).points) one_side = one_side && x.dot(dir) > 0;
    double prev = loss_pen(one(obj), toy(), toy().forward(pose_tensor(p))).item();
    if (!one_side || prev == 0.0) continue;
    ++checked;
    for (int k = 0; k < 30; ++k) {
      p.t += 0.003 * dir;
      const double v = loss_pen(one(obj), toy(), toy().forward(pose_tensor(p))).item();
      EXPECT_LE(v, prev);
      prev = v;
    }
    EXPECT_EQ(prev, 0.0);
  }
}

TEST(LossSpen, Cases) {
  GraspPose rest;
  rest.q.assign(12, 0.0);
  EXPECT_EQ(loss_spen(toy(), toy().forward(pose_tensor(rest))).item(), 0.0);
  GraspPose fist;
  fist.q.assign(12, 1.6);
  EXPECT_GT(loss_spen(toy(), toy().forward(pose_tensor(fist))).item(), 0.0);

  // Two sibling single-link fingers with coincident anchors of radius 0.01.
  hand::PalmSpec palm;
  palm.capsules = {{Vec3(-0.02, 0, 0), Vec3(0.02, 0, 0), 0.01}};
  hand::FingerSpec f;
  f.name = "a";
  f.base_position = Vec3(0, 0, 0.05);
  hand::JointSpec j;
  j.length = 0.03;
  j.radius = 0.01;
  j.anchors = {{Vec3(0, 0, 0.015), 0.01}};
  f.joints = {j};
  hand::FingerSpec g = f;
  g.name = "b";
  const HandModel twin("twin", palm, {f, g});
  ASSERT_EQ(twin.self_pairs().size(), 1u);
  GraspPose p;
  p.q = {0.0, 0.0};
  EXPECT_NEAR(loss_spen(twin, twin.forward(Tensor::from({1, 11}, p.to_vector()))).item(), 0.04, 1e-15);
}

TEST(LossSpen, MatchesPairLoopOracle) {
  Rng rng(9);
  const auto& h = toy();
  for (int trial = 0; trial < 50; ++trial) {
    GraspPose p = testing_support::pose_facing_origin(h, rng, 0.03, 0.3);
    const auto hc = h.forward(p);
    double oracle = 0;
    for (std::size_t a = 0; a < hc.anchors.size(); ++a)
      for (std::size_t b = 0; b < hc.anchors.size(); ++b) {
        const int la = h.anchor_link()[a], lb = h.anchor_link()[b];
        if (la == lb || h.link_parent()[la] == lb || h.link_parent()[lb] == la) continue;
        oracle += std::max(0.0, h.anchor_radius()[a] + h.anchor_radius()[b] - (hc.anchors[a] - hc.anchors[b]).norm());
      }
    EXPECT_NEAR(loss_spen(h, h.forward(pose_tensor(p))).item(), oracle, 1e-14);
    EXPECT_NEAR(self_penetration(h, hc), oracle, 1e-14);
  }
}

TEST(LossJoint, Cases) {
  GraspPose p;
  p.q = toy().mid_range();
  EXPECT_EQ(loss_joint(toy(), pose_tensor(p)).item(), 0.0);
  p.q[3] = 1.8;
  EXPECT_NEAR(loss_joint(toy(), pose_tensor(p)).item(), 0.2, 1e-15);
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& x : p.q) x = rng.uniform(-1, 3);
    double oracle = 0;
    for (std::size_t i = 0; i < 12; ++i) oracle += std::max(p.q[i] - 1.6, 0.0) + std::max(0.0 - p.q[i], 0.0);
    EXPECT_NEAR(loss_joint(toy(), pose_tensor(p)).item(), oracle, 1e-13);
  }
}

TEST(Losses, NonNegativeAndZeroOnExactMatch) {
  Rng rng(11);
  const auto obj = testing_support::ball(0.04).sample_surface(128, 4).points;
  for (int trial = 0; trial < 10; ++trial) {
    const GraspPose p = testing_support::pose_facing_origin(toy(), rng, 0.03, 0.3);
    const auto poses = pose_tensor(p);
    const auto ph = toy().forward(poses);
    EXPECT_EQ(loss_chamfer(ph.points, ph.points).item(), 0.0);
    const auto cm = contact_map(one(obj), ph.points);
    EXPECT_EQ(loss_cmap(cm, cm).item(), 0.0);
    EXPECT_EQ(loss_para(poses, poses).item(), 0.0);
    EXPECT_GE(loss_pen(one(obj), toy(), ph).item(), 0.0);
    EXPECT_GE(loss_spen(toy(), ph).item(), 0.0);
    EXPECT_GE(loss_joint(toy(), poses).item(), 0.0);
  }
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  const auto r = testing_support::run_gradient_suite(8, 12);
  ASSERT_EQ(r.worst.size(), 7u);
  for (const auto& [name, err] : r.worst) EXPECT_LE(err, 1e-3) << name;
}
