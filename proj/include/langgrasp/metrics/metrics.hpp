#pragma once

// Grasp evaluation: intention (CD, Con., pose Frechet), quality (Q1, Pen.) and
// diversity over sample sets.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "langgrasp/gen/generator.hpp"

namespace langgrasp::metrics {

using gen::Condition;
using gen::TrainingSet;
using hand::GraspPose;
using hand::HandModel;
using hand::Vec3;
using Wrench = Eigen::Matrix<double, 6, 1>;

// Index of the candidate pose whose hand cloud is nearest (chamfer) to pred's.
std::size_t assign_target(const HandModel& hand, const GraspPose& pred, const std::vector<GraspPose>& candidates);

struct Q1Config {
  double mu = 0.5;
  int cone_edges = 8;
  int directions = 512;  // antithetic pairs
  double contact_distance = 0.01;    // meters from the hand surface
  double penetration_limit = 0.005;  // Q1 is 0 beyond this depth
  std::uint64_t seed = 0;
};

struct Contact {
  Vec3 point;
  Vec3 normal;  // outward object normal
};

// n unit 6-vectors: n/2 Gaussian draws and their negatives.
std::vector<Wrench> wrench_directions(int n, std::uint64_t seed);
// Cone-edge wrenches (unit normal force pushing into the object, torque about
// `center` divided by `radius`), cone_edges per contact.
std::vector<Wrench> contact_wrenches(const std::vector<Contact>& contacts, const Vec3& center, double radius, double mu,
                                     int cone_edges);
// min over directions of the max support; 0 unless every support is positive.
double q1_from_wrenches(const std::vector<Wrench>& wrenches, const std::vector<Wrench>& directions);
double q1_from_contacts(const std::vector<Contact>& contacts, const Vec3& center, double radius, const Q1Config& cfg);

// Contacts are cloud points within contact_distance of the posed hand surface.
// Torques are taken about the origin (object centroid frame) scaled by 1/radius.
double q1(const object::ObjectCloud& cloud, double object_radius, const HandModel& hand, const GraspPose& pose,
          const Q1Config& cfg = {});

struct Diversity {
  Vec3 t_cm = Vec3::Zero();        // per axis
  Vec3 r_deg = Vec3::Zero();       // intrinsic XYZ Euler angles
  std::vector<double> q_deg;       // per joint
  double delta_t = 0, delta_r = 0, delta_q = 0;  // means of the above
};
// Population standard deviations over exactly 8 samples.
Diversity diversity(const std::vector<GraspPose>& samples);
// Intrinsic XYZ: R = Rx(a) Ry(b) Rz(c); returns (a, b, c) in radians.
Vec3 euler_xyz(const hand::Mat3& r);

struct FrechetResult {
  double value = 0;
  bool ridge = false;  // a 1e-6 ridge was added to a singular covariance
};
FrechetResult frechet_gaussian(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                               const Eigen::MatrixXd& cov_b);
// Gaussians fitted (unbiased covariance) to two sets of equal-length vectors;
// each set needs at least dim + 1 members.
FrechetResult pose_frechet(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

struct EvalGroup {
  Condition cond;
  std::vector<std::size_t> members;  // rows of the eval set sharing the condition
};
// Groups of the eval set by (object, verb, assignment) in first-appearance order.
std::vector<EvalGroup> eval_groups(const TrainingSet& eval);

struct GroupMetrics {
  double cd = 0, con = 0, pen_cm = 0, q1 = 0, intent = 0;
  Diversity div;
  bool has_diversity = false;
};

struct MetricsReport {
  double cd = 0;      // chamfer of hand clouds to the assigned target, m^2
  double con = 0;     // contact-map distance to the assigned target
  double pen_cm = 0;  // max penetration depth
  double q1 = 0;
  double delta_t = 0, delta_r = 0, delta_q = 0;
  double frechet = 0;
  bool frechet_ridge = false;
  double intent = 0;  // fraction of samples whose finger contacts match the guidance
  std::size_t groups = 0, samples = 0;
  std::vector<GroupMetrics> per_group;

  std::string to_json() const;
};

struct EvalConfig {
  Q1Config q1;
  double contact_threshold = 0.01;
  int threads = 1;
};

// samples[g] are the generated poses (meters) for groups[g]. Diversity uses
// groups with exactly 8 samples; the Frechet term compares all samples with all
// eval poses in the normalized space of `norm`.
MetricsReport evaluate(const HandModel& hand, const TrainingSet& eval, const std::vector<EvalGroup>& groups,
                       const std::vector<std::vector<std::vector<double>>>& samples, const gen::PoseNormalizer& norm,
                       const EvalConfig& cfg = {});

// Table rows: label plus the report columns.
std::string table_header();
std::string table_row(const std::string& label, const MetricsReport& r);

}  // namespace langgrasp::metrics
