#include "langgrasp/hand/hand_model.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "langgrasp/error.hpp"

namespace langgrasp::hand {

using ad::Tensor;
using nlohmann::json;

namespace {

constexpr const char* kSchema = "langgrasp.hand/1";

Tensor constant(const Eigen::Matrix3Xd& m) {
  std::vector<double> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < 3; ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return Tensor::from({3, static_cast<std::size_t>(m.cols())}, std::move(v));
}

Tensor constant(const Mat3& m) {
  std::vector<double> v(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[static_cast<std::size_t>(3 * r + c)] = m(r, c);
  return Tensor::from({3, 3}, std::move(v));
}

Tensor column(const Vec3& p) { return Tensor::from({3, 1}, {p.x(), p.y(), p.z()}); }

Mat3 skew(const Vec3& k) {
  Mat3 s;
  s << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
  return s;
}

// Rings of points on the cylindrical part of a capsule.
void ring_pattern(const Capsule& c, int rings, int per_ring, std::vector<Vec3>& out) {
  const Vec3 d = (c.b - c.a).normalized();
  const Vec3 helper = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 u = (helper - helper.dot(d) * d).normalized();
  const Vec3 v = d.cross(u);
  for (int i = 0; i < rings; ++i) {
    const double s = (i + 0.5) / rings;
    const Vec3 center = c.a + s * (c.b - c.a);
    for (int k = 0; k < per_ring; ++k) {
      const double th = 2.0 * std::numbers::pi * (k + 0.5 * (i % 2)) / per_ring;
      out.push_back(center + c.radius * (std::cos(th) * u + std::sin(th) * v));
    }
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("hand file: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Mat3 frame_from(const Vec3& z_dir, const Vec3& y_hint) {
  const Vec3 z = z_dir.normalized();
  const Vec3 y = (y_hint - y_hint.dot(z) * z).normalized();
  Mat3 r;
  r.col(0) = y.cross(z);
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

JointSpec flex_joint(double length, double radius) {
  JointSpec j;
  j.length = length;
  j.radius = radius;
  j.anchors.push_back({Vec3(0, 0, 0.5 * length), radius});
  return j;
}

FingerSpec finger(std::string name, Vec3 base, Mat3 rot, std::array<double, 3> len, std::array<double, 3> rad) {
  FingerSpec f;
  f.name = std::move(name);
  f.base_position = base;
  f.base_rotation = rot;
  for (int i = 0; i < 3; ++i) f.joints.push_back(flex_joint(len[static_cast<std::size_t>(i)], rad[static_cast<std::size_t>(i)]));
  f.tip_offset = Vec3(0, rad[2], 0.75 * len[2]);
  return f;
}

}  // namespace

Mat3 rotation_from_r6(std::span<const double> r6) {
  const Vec3 a1(r6[0], r6[1], r6[2]);
  const Vec3 a2(r6[3], r6[4], r6[5]);
  const Vec3 b1 = a1.normalized();
  const Vec3 b2 = (a2 - b1.dot(a2) * b1).normalized();
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

GraspPose GraspPose::from_vector(std::span<const double> v, std::size_t joints) {
  LANGGRASP_REQUIRE(v.size() == 9 + joints, "GraspPose: vector has dimension " + std::to_string(v.size()) +
                                                 ", expected " + std::to_string(9 + joints));
  GraspPose p;
  p.t = Vec3(v[0], v[1], v[2]);
  for (int i = 0; i < 6; ++i) p.r6[static_cast<std::size_t>(i)] = v[3 + static_cast<std::size_t>(i)];
  p.q.assign(v.begin() + 9, v.end());
  return p;
}

GraspPose GraspPose::from_rotation(const Mat3& r, const Vec3& t, std::vector<double> q) {
  GraspPose p;
  p.t = t;
  p.r6 = {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
  p.q = std::move(q);
  return p;
}

std::vector<double> GraspPose::to_vector() const {
  std::vector<double> v{t.x(), t.y(), t.z()};
  v.insert(v.end(), r6.begin(), r6.end());
  v.insert(v.end(), q.begin(), q.end());
  return v;
}

Mat3 GraspPose::rotation() const { return rotation_from_r6(r6); }

HandModel::HandModel(std::string name, PalmSpec palm, std::vector<FingerSpec> fingers, int rings, int per_ring)
    : name_(std::move(name)), palm_(std::move(palm)), fingers_(std::move(fingers)), rings_(rings), per_ring_(per_ring) {
  build();
}

HandModel HandModel::toy_hand12() {
  PalmSpec palm;
  palm.capsules = {{Vec3(-0.028, 0, 0.0), Vec3(0.028, 0, 0.0), 0.014}, {Vec3(-0.028, 0, 0.032), Vec3(0.028, 0, 0.032), 0.014}};
  palm.anchors = {{Vec3(-0.02, 0, 0.0), 0.014}, {Vec3(0.02, 0, 0.0), 0.014},
                  {Vec3(-0.02, 0, 0.032), 0.014}, {Vec3(0.02, 0, 0.032), 0.014}};
  std::vector<FingerSpec> f;
  f.push_back(finger("thumb", Vec3(0.036, 0.012, 0.005), frame_from(Vec3(0.5, 0.45, 0.5), Vec3(-0.75, 0.0, 0.1)),
                     {0.038, 0.030, 0.025}, {0.0105, 0.0095, 0.0085}));
  f.push_back(finger("forefinger", Vec3(0.024, 0, 0.058), Mat3::Identity(), {0.042, 0.026, 0.022},
                     {0.0095, 0.0085, 0.0075}));
  f.push_back(finger("middle finger", Vec3(0.0, 0, 0.058), Mat3::Identity(), {0.046, 0.028, 0.023},
                     {0.0095, 0.0085, 0.0075}));
  f.push_back(finger("ring finger", Vec3(-0.024, 0, 0.058), Mat3::Identity(), {0.042, 0.026, 0.022},
                     {0.0095, 0.0085, 0.0075}));
  return HandModel("ToyHand-12", std::move(palm), std::move(f));
}

void HandModel::build() {
  LANGGRASP_REQUIRE(!fingers_.empty(), "hand: no fingers");
  LANGGRASP_REQUIRE(rings_ > 0 && per_ring_ > 0, "hand: bad surface pattern");
  lower_.clear();
  upper_.clear();
  link_parent_ = {-1};
  std::vector<std::vector<Vec3>> pts(1), anchors(1);
  std::vector<std::vector<double>> anchor_r(1);
  std::vector<std::vector<Capsule>> caps(1);
  for (const auto& c : palm_.capsules) {
    LANGGRASP_REQUIRE(c.radius > 0, "hand: palm capsule radius must be positive");
    ring_pattern(c, rings_, per_ring_, pts[0]);
    caps[0].push_back(c);
  }
  for (const auto& a : palm_.anchors) {
    anchors[0].push_back(a.offset);
    anchor_r[0].push_back(a.radius);
  }
  finger_first_link_.clear();
  finger_first_joint_.clear();
  for (const auto& f : fingers_) {
    LANGGRASP_REQUIRE(!f.joints.empty(), "hand: finger without joints");
    finger_first_link_.push_back(link_parent_.size());
    finger_first_joint_.push_back(lower_.size());
    for (std::size_t j = 0; j < f.joints.size(); ++j) {
      const auto& js = f.joints[j];
      LANGGRASP_REQUIRE(js.lower < js.upper, "hand: joint lower limit must be below upper");
      LANGGRASP_REQUIRE(js.radius > 0 && js.length > 0, "hand: link radius and length must be positive");
      lower_.push_back(js.lower);
      upper_.push_back(js.upper);
      link_parent_.push_back(j == 0 ? 0 : static_cast<int>(link_parent_.size()) - 1);
      const Capsule c{Vec3::Zero(), Vec3(0, 0, js.length), js.radius};
      pts.emplace_back();
      ring_pattern(c, rings_, per_ring_, pts.back());
      caps.push_back({c});
      anchors.emplace_back();
      anchor_r.emplace_back();
      for (const auto& a : js.anchors) {
        const double s = std::clamp(a.offset.z(), 0.0, js.length);
        LANGGRASP_REQUIRE((a.offset - Vec3(0, 0, s)).norm() + a.radius <= js.radius + 1e-12,
                          "hand: anchor sphere must lie inside its link capsule");
        anchors.back().push_back(a.offset);
        anchor_r.back().push_back(a.radius);
      }
    }
  }

  const std::size_t nl = link_parent_.size();
  link_sites_.assign(nl, Eigen::Matrix3Xd());
  point_link_.clear();
  anchor_link_.clear();
  capsule_link_.clear();
  anchor_radius_.clear();
  capsule_radius_.clear();
  point_sites_.clear();
  anchor_sites_.clear();
  seg_a_sites_.clear();
  seg_b_sites_.clear();
  tip_sites_.assign(fingers_.size(), 0);
  std::vector<std::size_t> last_link_finger(nl, fingers_.size());
  for (std::size_t f = 0; f < fingers_.size(); ++f) last_link_finger[finger_first_link_[f] + fingers_[f].joints.size() - 1] = f;

  std::size_t offset = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    const bool tip = last_link_finger[l] < fingers_.size();
    const std::size_t n = pts[l].size() + anchors[l].size() + 2 * caps[l].size() + (tip ? 1 : 0);
    Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(n));
    Eigen::Index c = 0;
    for (const auto& p : pts[l]) {
      m.col(c++) = p;
      point_sites_.push_back(offset++);
      point_link_.push_back(static_cast<int>(l));
    }
    for (std::size_t k = 0; k < anchors[l].size(); ++k) {
      m.col(c++) = anchors[l][k];
      anchor_sites_.push_back(offset++);
      anchor_link_.push_back(static_cast<int>(l));
      anchor_radius_.push_back(anchor_r[l][k]);
    }
    for (const auto& cap : caps[l]) {
      m.col(c++) = cap.a;
      seg_a_sites_.push_back(offset++);
      m.col(c++) = cap.b;
      seg_b_sites_.push_back(offset++);
      capsule_link_.push_back(static_cast<int>(l));
      capsule_radius_.push_back(cap.radius);
    }
    if (tip) {
      m.col(c++) = fingers_[last_link_finger[l]].tip_offset;
      tip_sites_[last_link_finger[l]] = offset++;
    }
    link_sites_[l] = std::move(m);
  }

  self_pairs_.clear();
  auto adjacent = [&](int a, int b) { return a == b || link_parent_[static_cast<std::size_t>(a)] == b || link_parent_[static_cast<std::size_t>(b)] == a; };
  for (std::size_t i = 0; i < anchor_link_.size(); ++i)
    for (std::size_t j = i + 1; j < anchor_link_.size(); ++j)
      if (!adjacent(anchor_link_[i], anchor_link_[j])) self_pairs_.push_back({i, j, anchor_radius_[i] + anchor_radius_[j]});
}

std::vector<double> HandModel::mid_range() const {
  std::vector<double> m(lower_.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.5 * (lower_[i] + upper_[i]);
  return m;
}

std::vector<double> HandModel::limit_violation(std::span<const double> q) const {
  LANGGRASP_REQUIRE(q.size() == joint_count(), "limit_violation: joint count mismatch");
  std::vector<double> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i)
    out[i] = std::max(q[i] - upper_[i], 0.0) + std::max(lower_[i] - q[i], 0.0);
  return out;
}

PosedHand HandModel::forward(const Tensor& poses) const {
  using namespace ad;
  LANGGRASP_REQUIRE(poses.rank() == 2 && poses.dim(1) == pose_dim(),
                    "forward_kinematics: pose batch must be (B, " + std::to_string(pose_dim()) + "), got " +
                        to_string(poses.shape()));
  const std::size_t b = poses.dim(0);
  const Tensor t = reshape(slice(poses, 1, 0, 3), {b, 3, 1});
  const Tensor a1 = slice(poses, 1, 3, 6);
  const Tensor a2 = slice(poses, 1, 6, 9);
  const Tensor b1 = a1 / ad::sqrt(sum(square(a1), 1, true));
  const Tensor u = a2 - sum(b1 * a2, 1, true) * b1;
  const Tensor b2 = u / ad::sqrt(sum(square(u), 1, true));
  static constexpr std::size_t yzx[] = {1, 2, 0};
  static constexpr std::size_t zxy[] = {2, 0, 1};
  const Tensor b3 = gather(b1, 1, yzx) * gather(b2, 1, zxy) - gather(b1, 1, zxy) * gather(b2, 1, yzx);
  const Tensor root = concat({reshape(b1, {b, 3, 1}), reshape(b2, {b, 3, 1}), reshape(b3, {b, 3, 1})}, 2);

  std::vector<Tensor> world(link_count());
  world[0] = matmul(root, constant(link_sites_[0])) + t;
  const Tensor eye = constant(Mat3(Mat3::Identity()));
  for (std::size_t f = 0; f < fingers_.size(); ++f) {
    const auto& fs = fingers_[f];
    Tensor frame = matmul(root, constant(fs.base_rotation));
    Tensor origin = t + matmul(root, column(fs.base_position));
    for (std::size_t j = 0; j < fs.joints.size(); ++j) {
      const auto& js = fs.joints[j];
      const std::size_t qi = 9 + finger_first_joint_[f] + j;
      const Tensor q = reshape(slice(poses, 1, qi, qi + 1), {b, 1, 1});
      const Mat3 k = skew(js.axis.normalized());
      const Tensor rot = eye + ad::sin(q) * constant(k) + (1.0 - ad::cos(q)) * constant(Mat3(k * k));
      frame = matmul(frame, rot);
      const std::size_t l = finger_first_link_[f] + j;
      world[l] = matmul(frame, constant(link_sites_[l])) + origin;
      origin = origin + matmul(frame, column(Vec3(0, 0, js.length)));
    }
  }
  const Tensor all = transpose(concat(world, 2));
  return PosedHand{gather(all, 1, point_sites_), gather(all, 1, tip_sites_), gather(all, 1, anchor_sites_),
                   gather(all, 1, seg_a_sites_), gather(all, 1, seg_b_sites_)};
}

HandCloud HandModel::forward(const GraspPose& pose) const {
  ad::NoGradGuard guard;
  LANGGRASP_REQUIRE(pose.q.size() == joint_count(), "forward_kinematics: pose has " + std::to_string(pose.q.size()) +
                                                        " joints, model has " + std::to_string(joint_count()));
  const PosedHand ph = forward(Tensor::from({1, pose_dim()}, pose.to_vector()));
  auto rows = [](const Tensor& x) {
    std::vector<Vec3> out(x.dim(1));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
    return out;
  };
  HandCloud hc;
  hc.points = rows(ph.points);
  hc.point_link = point_link_;
  hc.fingertips = rows(ph.fingertips);
  hc.anchors = rows(ph.anchors);
  const auto a = rows(ph.seg_a);
  const auto bb = rows(ph.seg_b);
  for (std::size_t i = 0; i < a.size(); ++i) hc.capsules.push_back({a[i], bb[i], capsule_radius_[i]});
  return hc;
}

std::string HandModel::to_json_string() const {
  json j;
  j["schema"] = kSchema;
  j["name"] = name_;
  j["surface"] = {{"rings", rings_}, {"points_per_ring", per_ring_}};
  json palm;
  for (const auto& c : palm_.capsules) palm["capsules"].push_back({{"a", vec_json(c.a)}, {"b", vec_json(c.b)}, {"radius", c.radius}});
  for (const auto& a : palm_.anchors) palm["anchors"].push_back({{"offset", vec_json(a.offset)}, {"radius", a.radius}});
  j["palm"] = palm;
  for (const auto& f : fingers_) {
    json fj;
    fj["name"] = f.name;
    fj["base_position"] = vec_json(f.base_position);
    for (int r = 0; r < 3; ++r) fj["base_rotation"].push_back(vec_json(f.base_rotation.row(r)));
    fj["tip_offset"] = vec_json(f.tip_offset);
    for (const auto& js : f.joints) {
      json jj{{"axis", vec_json(js.axis)}, {"length", js.length}, {"radius", js.radius}, {"lower", js.lower}, {"upper", js.upper}};
      for (const auto& a : js.anchors) jj["anchors"].push_back({{"offset", vec_json(a.offset)}, {"radius", a.radius}});
      fj["joints"].push_back(jj);
    }
    j["fingers"].push_back(fj);
  }
  return j.dump(2);
}

HandModel HandModel::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("hand file: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != kSchema) throw IoError("hand file: unsupported schema");
  try {
    PalmSpec palm;
    for (const auto& c : j.at("palm").at("capsules"))
      palm.capsules.push_back({json_vec(c.at("a")), json_vec(c.at("b")), c.at("radius").get<double>()});
    for (const auto& a : j.at("palm").value("anchors", json::array()))
      palm.anchors.push_back({json_vec(a.at("offset")), a.at("radius").get<double>()});
    std::vector<FingerSpec> fingers;
    for (const auto& fj : j.at("fingers")) {
      FingerSpec f;
      f.name = fj.at("name").get<std::string>();
      f.base_position = json_vec(fj.at("base_position"));
      const auto& rot = fj.at("base_rotation");
      if (!rot.is_array() || rot.size() != 3) throw IoError("hand file: base_rotation must have three rows");
      for (int r = 0; r < 3; ++r) f.base_rotation.row(r) = json_vec(rot[static_cast<std::size_t>(r)]).transpose();
      if ((f.base_rotation.transpose() * f.base_rotation - Mat3::Identity()).norm() > 1e-9 ||
          f.base_rotation.determinant() < 0)
        throw IoError("hand file: base_rotation of " + f.name + " is not a rotation");
      f.tip_offset = json_vec(fj.at("tip_offset"));
      for (const auto& jj : fj.at("joints")) {
        JointSpec js;
        js.axis = json_vec(jj.at("axis")).normalized();
        js.length = jj.at("length").get<double>();
        js.radius = jj.at("radius").get<double>();
        js.lower = jj.at("lower").get<double>();
        js.upper = jj.at("upper").get<double>();
        for (const auto& a : jj.value("anchors", json::array()))
          js.anchors.push_back({json_vec(a.at("offset")), a.at("radius").get<double>()});
        f.joints.push_back(std::move(js));
      }
      fingers.push_back(std::move(f));
    }
    const auto& s = j.at("surface");
    return HandModel(j.value("name", "hand"), std::move(palm), std::move(fingers), s.at("rings").get<int>(),
                     s.at("points_per_ring").get<int>());
  } catch (const json::exception& e) {
    throw IoError(std::string("hand file: ") + e.what());
  }
}

HandModel HandModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open hand file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

void HandModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write hand file " + path.string());
  out << to_json_string() << "\n";
}

}  // namespace langgrasp::hand
