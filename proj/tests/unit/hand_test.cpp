#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <filesystem>

#include "langgrasp/error.hpp"
#include "langgrasp/hand/hand_model.hpp"
#include "langgrasp/rng.hpp"
#include "support/fd.hpp"

using namespace langgrasp;
using namespace langgrasp::hand;

namespace {

const HandModel& toy() {
  static const HandModel h = HandModel::toy_hand12();
  return h;
}

// Independent oracle: compose 4x4 rigid transforms joint by joint.
Vec3 oracle_site(const HandModel& h, const GraspPose& p, std::size_t finger, std::size_t joint, const Vec3& local) {
  Eigen::Isometry3d tf = Eigen::Isometry3d::Identity();
  tf.linear() = p.rotation();
  tf.translation() = p.t;
  const auto& f = h.fingers()[finger];
  Eigen::Isometry3d base = Eigen::Isometry3d::Identity();
  base.linear() = f.base_rotation;
  base.translation() = f.base_position;
  tf = tf * base;
  for (std::size_t j = 0; j <= joint; ++j) {
    if (j > 0) tf = tf * Eigen::Translation3d(0, 0, f.joints[j - 1].length);
    tf = tf * Eigen::AngleAxisd(p.q[h.joint_index(finger, j)], f.joints[j].axis.normalized());
  }
  return tf * local;
}

GraspPose random_pose(const HandModel& h, Rng& rng) {
  const Mat3 r = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized().toRotationMatrix();
  std::vector<double> q(h.joint_count());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = rng.uniform(h.lower()[i], h.upper()[i]);
  return GraspPose::from_rotation(r, Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)), q);
}

}  // namespace

TEST(HandModel, ToyHandCounts) {
  const auto& h = toy();
  EXPECT_EQ(h.finger_count(), 4u);
  EXPECT_EQ(h.joint_count(), 12u);
  EXPECT_EQ(h.pose_dim(), 21u);
  EXPECT_EQ(h.link_count(), 13u);
  EXPECT_EQ(h.point_count(), 280u);
  EXPECT_EQ(h.fingers()[1].name, "forefinger");
  for (std::size_t i = 0; i < h.joint_count(); ++i) {
    EXPECT_EQ(h.lower()[i], 0.0);
    EXPECT_EQ(h.upper()[i], 1.6);
  }
}

TEST(HandModel, IdentityPoseGivesRestSites) {
  const auto& h = toy();
  GraspPose p;
  p.q.assign(h.joint_count(), 0.0);
  const auto hc = h.forward(p);
  ASSERT_EQ(hc.points.size(), h.point_count());
  // At rest each finger is a straight chain along its base z-axis.
  for (std::size_t f = 0; f < h.finger_count(); ++f) {
    const auto& fs = h.fingers()[f];
    double len = 0;
    for (std::size_t j = 0; j + 1 < fs.joints.size(); ++j) len += fs.joints[j].length;
    const Vec3 expect = fs.base_position + fs.base_rotation * (Vec3(0, 0, len) + fs.tip_offset);
    EXPECT_LE((hc.fingertips[f] - expect).norm(), 1e-12) << fs.name;
  }
  EXPECT_NEAR(hc.fingertips[2].z(), 0.058 + 0.046 + 0.028 + 0.75 * 0.023, 1e-12);
}

TEST(HandModel, TranslationShiftsEveryPointExactly) {
  const auto& h = toy();
  Rng rng(1);
  GraspPose p = random_pose(h, rng);
  const auto a = h.forward(p);
  const Vec3 v(0.3, -0.1, 0.25);
  p.t += v;
  const auto b = h.forward(p);
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_LE((b.points[i] - a.points[i] - v).norm(), 1e-12);
}

TEST(HandModel, SingleJointMatchesTransformStack) {
  const auto& h = toy();
  GraspPose p;
  p.q.assign(h.joint_count(), 0.0);
  p.q[h.joint_index(1, 1)] = 0.3;
  const auto hc = h.forward(p);
  const Vec3 oracle = oracle_site(h, p, 1, 2, h.fingers()[1].tip_offset);
  EXPECT_LE((hc.fingertips[1] - oracle).norm(), 1e-9);
  // The tip stays on a circle about the rotated joint.
  GraspPose rest;
  rest.q.assign(h.joint_count(), 0.0);
  const Vec3 pivot = h.fingers()[1].base_position + Vec3(0, 0, h.fingers()[1].joints[0].length);
  EXPECT_NEAR((hc.fingertips[1] - pivot).norm(), (h.forward(rest).fingertips[1] - pivot).norm(), 1e-12);
}

TEST(HandModel, RandomPosesMatchTransformStack) {
  const auto& h = toy();
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const GraspPose p = random_pose(h, rng);
    const auto hc = h.forward(p);
    for (std::size_t f = 0; f < h.finger_count(); ++f)
      EXPECT_LE((hc.fingertips[f] - oracle_site(h, p, f, 2, h.fingers()[f].tip_offset)).norm(), 1e-9);
    for (std::size_t i = 0; i < hc.points.size(); ++i) {
      const int l = hc.point_link[i];
      if (l == 0) continue;
      std::size_t f = 0;
      while (f + 1 < h.finger_count() && h.link_of(f + 1, 0) <= static_cast<std::size_t>(l)) ++f;
      const std::size_t j = static_cast<std::size_t>(l) - h.link_of(f, 0);
      // Point i is column k of its link's site matrix.
      std::size_t k = 0;
      for (std::size_t m = 0; m < i; ++m) k += hc.point_link[m] == l;
      EXPECT_LE((hc.points[i] - oracle_site(h, p, f, j, h.link_sites(static_cast<std::size_t>(l)).col(static_cast<Eigen::Index>(k)))).norm(), 1e-9);
    }
  }
}

TEST(HandModel, RootRotationEquivariance) {
  const auto& h = toy();
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    GraspPose p = random_pose(h, rng);
    const Mat3 r = Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized().toRotationMatrix();
    const auto a = h.forward(p);
    const GraspPose rp = GraspPose::from_rotation(r * p.rotation(), r * p.t, p.q);
    const auto b = h.forward(rp);
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_LE((b.points[i] - r * a.points[i]).norm(), 1e-9);
  }
}

TEST(HandModel, R6GramSchmidtIsRightHanded) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    std::array<double, 6> v;
    for (auto& x : v) x = rng.normal();
    const Mat3 r = rotation_from_r6(v);
    EXPECT_LE((r.transpose() * r - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(HandModel, DimensionMismatchIsContractViolation) {
  GraspPose p;
  p.q.assign(5, 0.0);
  EXPECT_THROW(toy().forward(p), ContractViolation);
  EXPECT_THROW(toy().forward(ad::Tensor::zeros({2, 20})), ContractViolation);
  EXPECT_THROW(GraspPose::from_vector(std::vector<double>(20), 12), ContractViolation);
}

TEST(HandModel, ForwardKinematicsGradient) {
  const auto& h = toy();
  Rng rng(5);
  const auto w = [&] {
    std::vector<double> v(h.point_count() * 3);
    for (auto& x : v) x = rng.normal();
    return ad::Tensor::from({1, h.point_count(), 3}, v);
  }();
  for (int trial = 0; trial < 5; ++trial) {
    const auto x0 = random_pose(h, rng).to_vector();
    const auto r = testing_support::check_gradient(
        [&](const ad::Tensor& x) {
          const auto ph = h.forward(x);
          return ad::sum(ph.points * w) + ad::sum(ad::square(ph.fingertips));
        },
        {1, h.pose_dim()}, x0);
    EXPECT_LE(r.max_rel_error, 1e-4);
  }
}

TEST(HandModel, LimitViolation) {
  const auto& h = toy();
  std::vector<double> q = h.mid_range();
  for (double v : h.limit_violation(q)) EXPECT_EQ(v, 0.0);
  q[4] = h.upper()[4] + 0.1;
  const auto v = h.limit_violation(q);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v[i], i == 4 ? 0.1 : 0.0, 1e-15);
  Rng rng(6);
  for (auto& x : q) x = rng.uniform(-1.0, 2.5);
  const auto w = h.limit_violation(q);
  for (std::size_t i = 0; i < q.size(); ++i) {
    double e = 0;
    if (q[i] > h.upper()[i]) e = q[i] - h.upper()[i];
    if (q[i] < h.lower()[i]) e = h.lower()[i] - q[i];
    EXPECT_EQ(w[i], e);
  }
}

TEST(HandModel, AnchorsStayInsideTheirCapsules) {
  const auto& h = toy();
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto hc = h.forward(random_pose(h, rng));
    for (std::size_t a = 0; a < hc.anchors.size(); ++a) {
      const int l = h.anchor_link()[a];
      double best = 1e9;
      for (std::size_t c = 0; c < hc.capsules.size(); ++c) {
        if (h.capsule_link()[c] != l) continue;
        const auto& cap = hc.capsules[c];
        const Vec3 d = cap.b - cap.a;
        const double s = std::clamp((hc.anchors[a] - cap.a).dot(d) / d.squaredNorm(), 0.0, 1.0);
        best = std::min(best, (hc.anchors[a] - cap.a - s * d).norm() + h.anchor_radius()[a] - cap.radius);
      }
      EXPECT_LE(best, 1e-12);
    }
  }
}

// Brute-force anchor-distance oracle.
double self_penetration(const HandModel& h, const HandCloud& hc) {
  double total = 0;
  for (std::size_t i = 0; i < hc.anchors.size(); ++i)
    for (std::size_t j = 0; j < hc.anchors.size(); ++j) {
      const int a = h.anchor_link()[i], b = h.anchor_link()[j];
      if (i == j || a == b || h.link_parent()[static_cast<std::size_t>(a)] == b || h.link_parent()[static_cast<std::size_t>(b)] == a) continue;
      total += std::max(0.0, h.anchor_radius()[i] + h.anchor_radius()[j] - (hc.anchors[i] - hc.anchors[j]).norm());
    }
  return total;
}

TEST(HandModel, RestPoseIsFreeOfSelfPenetration) {
  const auto& h = toy();
  GraspPose p;
  p.q.assign(h.joint_count(), 0.0);
  EXPECT_EQ(self_penetration(h, h.forward(p)), 0.0);
  p.q = h.mid_range();
  EXPECT_EQ(self_penetration(h, h.forward(p)), 0.0);
}

TEST(HandModel, CurledFistSelfPenetrates) {
  const auto& h = toy();
  GraspPose p;
  p.q.assign(h.joint_count(), 1.6);
  EXPECT_GT(self_penetration(h, h.forward(p)), 0.0);
}

TEST(HandModel, JsonRoundTrip) {
  const auto& h = toy();
  const auto path = std::filesystem::temp_directory_path() / "langgrasp_hand_roundtrip.json";
  h.save(path);
  const HandModel g = HandModel::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(g.to_json_string(), h.to_json_string());
  Rng rng(8);
  const GraspPose p = random_pose(h, rng);
  const auto a = h.forward(p), b = g.forward(p);
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_LE((a.points[i] - b.points[i]).norm(), 1e-12);
}

TEST(HandModel, DefaultModelFileMatchesBuiltIn) {
  const HandModel g = HandModel::load(std::filesystem::path(LANGGRASP_DATA_DIR) / "toyhand12.json");
  ASSERT_EQ(g.point_count(), toy().point_count());
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const GraspPose p = random_pose(toy(), rng);
    const auto a = toy().forward(p), b = g.forward(p);
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_LE((a.points[i] - b.points[i]).norm(), 1e-12);
  }
}

TEST(HandModel, MalformedFileIsIoError) {
  EXPECT_THROW(HandModel::from_json_string("{not json"), IoError);
  EXPECT_THROW(HandModel::from_json_string(R"({"schema":"other"})"), IoError);
  EXPECT_THROW(HandModel::load("/nonexistent/hand.json"), IoError);
}
