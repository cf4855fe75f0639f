#pragma once

// Parametric toy dexterous hand: a palm plus serial finger chains of revolute
// joints with capsule links. Hand frame: fingers extend along +z, the palm
// faces +y, positive joint angles curl a finger toward the palm side.

#include <Eigen/Geometry>
#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "langgrasp/ad/tensor.hpp"

namespace langgrasp::hand {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;
};

struct Anchor {
  Vec3 offset = Vec3::Zero();
  double radius = 0.0;
};

struct JointSpec {
  Vec3 axis = -Vec3::UnitX();
  double length = 0.0;  // link length along the link's +z, meters
  double radius = 0.0;  // capsule radius, meters
  double lower = 0.0;
  double upper = 1.6;
  std::vector<Anchor> anchors;
};

struct FingerSpec {
  std::string name;
  Vec3 base_position = Vec3::Zero();
  Mat3 base_rotation = Mat3::Identity();
  std::vector<JointSpec> joints;
  Vec3 tip_offset = Vec3::Zero();  // fingertip site, last link frame
};

struct PalmSpec {
  std::vector<Capsule> capsules;
  std::vector<Anchor> anchors;
};

// Root pose plus joint angles. Rotation uses the continuous two-column 6D form.
struct GraspPose {
  Vec3 t = Vec3::Zero();
  std::array<double, 6> r6{1, 0, 0, 0, 1, 0};
  std::vector<double> q;

  static GraspPose from_vector(std::span<const double> v, std::size_t joints);
  static GraspPose from_rotation(const Mat3& r, const Vec3& t, std::vector<double> q);
  std::vector<double> to_vector() const;
  // Gram-Schmidt of the two stored columns; right-handed.
  Mat3 rotation() const;
};

// World-frame sample of a posed hand.
struct HandCloud {
  std::vector<Vec3> points;
  std::vector<int> point_link;
  std::vector<Vec3> fingertips;
  std::vector<Vec3> anchors;
  std::vector<Capsule> capsules;  // world frame
};

// Graph-level output of forward kinematics for a batch of poses.
struct PosedHand {
  ad::Tensor points;      // (B, P, 3)
  ad::Tensor fingertips;  // (B, F, 3)
  ad::Tensor anchors;     // (B, A, 3)
  ad::Tensor seg_a;       // (B, C, 3) capsule start points
  ad::Tensor seg_b;       // (B, C, 3) capsule end points
};

struct SelfPair {
  std::size_t i, j;
  double delta;  // sum of the two anchor radii
};

class HandModel {
 public:
  HandModel(std::string name, PalmSpec palm, std::vector<FingerSpec> fingers, int rings = 4, int per_ring = 5);

  // ToyHand-12: thumb plus three fingers, three flexion joints each, limits [0, 1.6] rad.
  static HandModel toy_hand12();
  static HandModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json_string() const;
  static HandModel from_json_string(const std::string& text);

  const std::string& name() const { return name_; }
  std::size_t finger_count() const { return fingers_.size(); }
  std::size_t joint_count() const { return lower_.size(); }
  std::size_t pose_dim() const { return 9 + joint_count(); }
  std::size_t link_count() const { return link_parent_.size(); }
  std::size_t point_count() const { return point_link_.size(); }
  std::size_t anchor_count() const { return anchor_link_.size(); }
  std::size_t capsule_count() const { return capsule_link_.size(); }

  const std::vector<FingerSpec>& fingers() const { return fingers_; }
  const PalmSpec& palm() const { return palm_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  std::vector<double> mid_range() const;
  const std::vector<int>& link_parent() const { return link_parent_; }
  const std::vector<int>& point_link() const { return point_link_; }
  const std::vector<int>& anchor_link() const { return anchor_link_; }
  const std::vector<double>& anchor_radius() const { return anchor_radius_; }
  const std::vector<double>& capsule_radius() const { return capsule_radius_; }
  const std::vector<int>& capsule_link() const { return capsule_link_; }
  // Unordered anchor pairs on distinct, non-adjacent links.
  const std::vector<SelfPair>& self_pairs() const { return self_pairs_; }
  // Link index of joint j of finger f.
  std::size_t link_of(std::size_t finger, std::size_t joint) const { return finger_first_link_[finger] + joint; }
  std::size_t joint_index(std::size_t finger, std::size_t joint) const { return finger_first_joint_[finger] + joint; }

  // Local site matrix of link l: columns are surface points, anchors, capsule
  // starts, capsule ends and (last link only) the fingertip.
  const Eigen::Matrix3Xd& link_sites(std::size_t l) const { return link_sites_[l]; }

  PosedHand forward(const ad::Tensor& poses) const;
  HandCloud forward(const GraspPose& pose) const;

  // Per joint: max(q - upper, 0) + max(lower - q, 0).
  std::vector<double> limit_violation(std::span<const double> q) const;

 private:
  void build();

  std::string name_;
  PalmSpec palm_;
  std::vector<FingerSpec> fingers_;
  int rings_, per_ring_;

  std::vector<double> lower_, upper_;
  std::vector<int> link_parent_;
  std::vector<std::size_t> finger_first_link_, finger_first_joint_;
  std::vector<Eigen::Matrix3Xd> link_sites_;
  std::vector<int> point_link_, anchor_link_, capsule_link_;
  std::vector<double> anchor_radius_, capsule_radius_;
  std::vector<SelfPair> self_pairs_;
  // Indices into the concatenated site list produced by forward().
  std::vector<std::size_t> point_sites_, anchor_sites_, seg_a_sites_, seg_b_sites_, tip_sites_;
};

// Rotation from a 6D vector (two columns, Gram-Schmidt).
Mat3 rotation_from_r6(std::span<const double> r6);

}  // namespace langgrasp::hand
