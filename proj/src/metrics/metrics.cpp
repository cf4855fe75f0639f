#include "langgrasp/metrics/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "langgrasp/dataset/dataset.hpp"
#include "langgrasp/error.hpp"
#include "langgrasp/losses/losses.hpp"
#include "langgrasp/parallel.hpp"

namespace langgrasp::metrics {

using nlohmann::json;

namespace {

constexpr double kRad2Deg = 180.0 / std::numbers::pi;

// Population std from pairwise differences, exactly 0 for identical values.
double pop_std(const std::vector<double>& v) {
  double sum = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) sum += (v[i] - v[j]) * (v[i] - v[j]);
  const double n = static_cast<double>(v.size());
  return std::sqrt(sum / (n * n));
}

void tangent_basis(const Vec3& n, Vec3& u, Vec3& v) {
  const Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  u = n.cross(a).normalized();
  v = n.cross(u);
}

}  // namespace

std::size_t assign_target(const HandModel& hand, const GraspPose& pred, const std::vector<GraspPose>& candidates) {
  LANGGRASP_REQUIRE(!candidates.empty(), "assign_target: empty candidate group");
  const auto query = hand.forward(pred).points;
  std::vector<std::vector<Vec3>> clouds;
  for (const auto& c : candidates) clouds.push_back(hand.forward(c).points);
  std::vector<const std::vector<Vec3>*> ptrs;
  for (const auto& c : clouds) ptrs.push_back(&c);
  return gen::nearest_by_chamfer(query, ptrs);
}

std::vector<Wrench> wrench_directions(int n, std::uint64_t seed) {
  LANGGRASP_REQUIRE(n >= 2 && n % 2 == 0, "wrench directions: need an even count >= 2");
  Rng rng(seed);
  std::vector<Wrench> out;
  for (int i = 0; i < n / 2; ++i) {
    Wrench d;
    do {
      for (int k = 0; k < 6; ++k) d[k] = rng.normal();
    } while (d.norm() < 1e-12);
    d.normalize();
    out.push_back(d);
    out.push_back(-d);
  }
  return out;
}

std::vector<Wrench> contact_wrenches(const std::vector<Contact>& contacts, const Vec3& center, double radius, double mu,
                                     int cone_edges) {
  LANGGRASP_REQUIRE(mu > 0 && cone_edges >= 3 && radius > 0, "contact wrenches: need mu > 0, >= 3 edges, radius > 0");
  std::vector<Wrench> out;
  out.reserve(contacts.size() * static_cast<std::size_t>(cone_edges));
  for (const auto& c : contacts) {
    const Vec3 n = c.normal.normalized();
    Vec3 u, v;
    tangent_basis(n, u, v);
    const Vec3 arm = (c.point - center) / radius;
    for (int k = 0; k < cone_edges; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / cone_edges;
      const Vec3 f = -n + mu * (std::cos(phi) * u + std::sin(phi) * v);
      Wrench w;
      w.head<3>() = f;
      w.tail<3>() = arm.cross(f);
      out.push_back(w);
    }
  }
  return out;
}

double q1_from_wrenches(const std::vector<Wrench>& wrenches, const std::vector<Wrench>& directions) {
  if (wrenches.empty()) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& d : directions) {
    double h = -std::numeric_limits<double>::infinity();
    for (const auto& w : wrenches) h = std::max(h, d.dot(w));
    if (h <= 0.0) return 0.0;
    best = std::min(best, h);
  }
  return best;
}

double q1_from_contacts(const std::vector<Contact>& contacts, const Vec3& center, double radius, const Q1Config& cfg) {
  LANGGRASP_REQUIRE(cfg.directions >= 64, "q1: need at least 64 directions");
  if (contacts.empty()) return 0.0;
  return q1_from_wrenches(contact_wrenches(contacts, center, radius, cfg.mu, cfg.cone_edges),
                          wrench_directions(cfg.directions, cfg.seed));
}

double q1(const object::ObjectCloud& cloud, double object_radius, const HandModel& hand, const GraspPose& pose,
          const Q1Config& cfg) {
  const hand::HandCloud hc = hand.forward(pose);
  std::vector<Contact> contacts;
  double deepest = 0.0;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const double d = losses::hand_sdf(hc, cloud.points[i]);
    deepest = std::max(deepest, -d);
    if (d < cfg.contact_distance) contacts.push_back({cloud.points[i], cloud.normals[i]});
  }
  if (deepest > cfg.penetration_limit) return 0.0;
  return q1_from_contacts(contacts, Vec3::Zero(), object_radius, cfg);
}

Vec3 euler_xyz(const hand::Mat3& r) {
  const double b = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return {a, b, c};
}

Diversity diversity(const std::vector<GraspPose>& samples) {
  LANGGRASP_REQUIRE(samples.size() == 8, "diversity: expected exactly 8 samples, got " + std::to_string(samples.size()));
  const std::size_t j = samples.front().q.size();
  Diversity d;
  std::vector<Vec3> euler;
  for (const auto& s : samples) {
    LANGGRASP_REQUIRE(s.q.size() == j, "diversity: joint count mismatch");
    euler.push_back(euler_xyz(s.rotation()));
  }
  std::vector<double> col(samples.size());
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < samples.size(); ++i) col[i] = samples[i].t[a] * 100.0;
    d.t_cm[a] = pop_std(col);
    for (std::size_t i = 0; i < samples.size(); ++i) col[i] = euler[i][a] * kRad2Deg;
    d.r_deg[a] = pop_std(col);
  }
  d.q_deg.resize(j);
  for (std::size_t k = 0; k < j; ++k) {
    for (std::size_t i = 0; i < samples.size(); ++i) col[i] = samples[i].q[k] * kRad2Deg;
    d.q_deg[k] = pop_std(col);
  }
  d.delta_t = d.t_cm.mean();
  d.delta_r = d.r_deg.mean();
  double qs = 0;
  for (double x : d.q_deg) qs += x;
  d.delta_q = j ? qs / static_cast<double>(j) : 0.0;
  return d;
}

FrechetResult frechet_gaussian(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                               const Eigen::MatrixXd& cov_b) {
  const auto n = mu_a.size();
  LANGGRASP_REQUIRE(mu_b.size() == n && cov_a.rows() == n && cov_a.cols() == n && cov_b.rows() == n && cov_b.cols() == n,
                    "frechet: dimension mismatch");
  FrechetResult r;
  Eigen::MatrixXd a = 0.5 * (cov_a + cov_a.transpose()), b = 0.5 * (cov_b + cov_b.transpose());
  auto regularize = [&](Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-12) {
      m += 1e-6 * Eigen::MatrixXd::Identity(n, n);
      r.ridge = true;
    }
  };
  regularize(a);
  regularize(b);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  const Eigen::MatrixXd sqrt_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt_a * b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(inner, Eigen::EigenvaluesOnly);
  const double cross = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  r.value = (mu_a - mu_b).squaredNorm() + a.trace() + b.trace() - 2.0 * cross;
  return r;
}

FrechetResult pose_frechet(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  LANGGRASP_REQUIRE(!a.empty() && !b.empty(), "pose_frechet: empty set");
  const std::size_t d = a.front().size();
  LANGGRASP_REQUIRE(a.size() >= d + 1 && b.size() >= d + 1,
                    "pose_frechet: need at least " + std::to_string(d + 1) + " vectors per set");
  auto fit = [&](const std::vector<std::vector<double>>& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    Eigen::MatrixXd x(s.size(), d);
    for (std::size_t i = 0; i < s.size(); ++i) {
      LANGGRASP_REQUIRE(s[i].size() == d, "pose_frechet: ragged vectors");
      for (std::size_t k = 0; k < d; ++k) x(i, k) = s[i][k];
    }
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
    cov = c.transpose() * c / static_cast<double>(s.size() - 1);
  };
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  fit(a, ma, ca);
  fit(b, mb, cb);
  return frechet_gaussian(ma, ca, mb, cb);
}

std::vector<EvalGroup> eval_groups(const TrainingSet& eval) {
  std::vector<EvalGroup> groups;
  for (std::size_t i = 0; i < eval.conditions.size(); ++i) {
    const auto& c = eval.conditions[i];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const EvalGroup& g) {
      return g.cond.object == c.object && g.cond.verb == c.verb && g.cond.assignment == c.assignment;
    });
    if (it == groups.end()) groups.push_back({c, {i}});
    else it->members.push_back(i);
  }
  return groups;
}

MetricsReport evaluate(const HandModel& hand, const TrainingSet& eval, const std::vector<EvalGroup>& groups,
                       const std::vector<std::vector<std::vector<double>>>& samples, const gen::PoseNormalizer& norm,
                       const EvalConfig& cfg) {
  LANGGRASP_REQUIRE(samples.size() == groups.size(), "evaluate: one sample list per group");
  const std::size_t j = hand.joint_count();
  std::vector<GroupMetrics> per(groups.size());
  parallel_for(groups.size(), cfg.threads, [&](std::size_t g) {
    const auto& grp = groups[g];
    LANGGRASP_REQUIRE(!grp.members.empty(), "evaluate: empty group");
    LANGGRASP_REQUIRE(!samples[g].empty(), "evaluate: group without samples");
    const auto& obj = eval.objects.at(grp.cond.object);
    std::vector<std::vector<Vec3>> target_clouds;
    std::vector<std::vector<double>> target_maps;
    for (auto m : grp.members) {
      const auto hc = hand.forward(GraspPose::from_vector(eval.poses[m], j));
      target_maps.push_back(losses::contact_map(obj.cloud.points, hc.points));
      target_clouds.push_back(hc.points);
    }
    std::vector<const std::vector<Vec3>*> ptrs;
    for (const auto& c : target_clouds) ptrs.push_back(&c);
    GroupMetrics gm;
    std::vector<GraspPose> poses;
    for (const auto& s : samples[g]) {
      const GraspPose pose = GraspPose::from_vector(s, j);
      poses.push_back(pose);
      const auto hc = hand.forward(pose);
      const std::size_t best = gen::nearest_by_chamfer(hc.points, ptrs);
      gm.cd += losses::chamfer(hc.points, target_clouds[best]);
      gm.con += losses::cmap_distance(losses::contact_map(obj.cloud.points, hc.points), target_maps[best]);
      gm.pen_cm += 100.0 * losses::max_penetration(obj.cloud.points, hc);
      gm.q1 += q1(obj.cloud, obj.model.radius(), hand, pose, cfg.q1);
      gm.intent += dataset::finger_contacts(obj.model, hc.fingertips, cfg.contact_threshold) == grp.cond.assignment;
    }
    const double n = static_cast<double>(samples[g].size());
    gm.cd /= n;
    gm.con /= n;
    gm.pen_cm /= n;
    gm.q1 /= n;
    gm.intent /= n;
    if (poses.size() == 8) {
      gm.div = diversity(poses);
      gm.has_diversity = true;
    }
    per[g] = std::move(gm);
  });

  MetricsReport r;
  r.groups = groups.size();
  std::size_t div_groups = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double n = static_cast<double>(samples[g].size());
    r.samples += samples[g].size();
    r.cd += per[g].cd * n;
    r.con += per[g].con * n;
    r.pen_cm += per[g].pen_cm * n;
    r.q1 += per[g].q1 * n;
    r.intent += per[g].intent * n;
    if (per[g].has_diversity) {
      ++div_groups;
      r.delta_t += per[g].div.delta_t;
      r.delta_r += per[g].div.delta_r;
      r.delta_q += per[g].div.delta_q;
    }
  }
  if (r.samples) {
    const double n = static_cast<double>(r.samples);
    r.cd /= n;
    r.con /= n;
    r.pen_cm /= n;
    r.q1 /= n;
    r.intent /= n;
  }
  if (div_groups) {
    r.delta_t /= static_cast<double>(div_groups);
    r.delta_r /= static_cast<double>(div_groups);
    r.delta_q /= static_cast<double>(div_groups);
  }
  std::vector<std::vector<double>> gen_n, gt_n;
  for (const auto& s : samples)
    for (const auto& p : s) gen_n.push_back(norm.normalize(p));
  for (const auto& grp : groups)
    for (auto m : grp.members) gt_n.push_back(norm.normalize(eval.poses[m]));
  if (gen_n.size() > norm.dim() && gt_n.size() > norm.dim()) {
    const auto f = pose_frechet(gen_n, gt_n);
    r.frechet = f.value;
    r.frechet_ridge = f.ridge;
  } else {
    r.frechet = std::numeric_limits<double>::quiet_NaN();
  }
  r.per_group = std::move(per);
  return r;
}

std::string MetricsReport::to_json() const {
  json j{{"cd", cd},
         {"con", con},
         {"pen_cm", pen_cm},
         {"q1", q1},
         {"delta_t_cm", delta_t},
         {"delta_r_deg", delta_r},
         {"delta_q_deg", delta_q},
         {"pose_frechet", std::isfinite(frechet) ? json(frechet) : json(nullptr)},
         {"frechet_ridge", frechet_ridge},
         {"intent", intent},
         {"groups", groups},
         {"samples", samples}};
  json g = json::array();
  for (const auto& p : per_group) {
    json e{{"cd", p.cd}, {"con", p.con}, {"pen_cm", p.pen_cm}, {"q1", p.q1}, {"intent", p.intent}};
    if (p.has_diversity) {
      e["delta_t_cm"] = p.div.delta_t;
      e["delta_r_deg"] = p.div.delta_r;
      e["delta_q_deg"] = p.div.delta_q;
    }
    g.push_back(e);
  }
  j["per_group"] = g;
  return j.dump(2);
}

std::string table_header() { return "method,cd,con,pen_cm,q1,delta_t_cm,delta_r_deg,delta_q_deg,pose_frechet,intent"; }

std::string table_row(const std::string& label, const MetricsReport& r) {
  std::ostringstream s;
  s << label << std::setprecision(6);
  for (double v : {r.cd, r.con, r.pen_cm, r.q1, r.delta_t, r.delta_r, r.delta_q, r.frechet, r.intent}) s << ',' << v;
  return s.str();
}

}  // namespace langgrasp::metrics
