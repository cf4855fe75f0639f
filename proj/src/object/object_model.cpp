#include "langgrasp/object/object_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "langgrasp/error.hpp"

namespace langgrasp::object {

using nlohmann::json;

namespace {

constexpr const char* kSchema = "langgrasp.object/1";
constexpr std::uint64_t kDenseSeed = 0x0b1ec7;
constexpr std::size_t kDenseCount = 4096;

Vec3 random_direction(Rng& rng) {
  while (true) {
    const Vec3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw IoError("object file: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Mat3 axis_to_x() {
  Mat3 r;
  r << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  return r;
}

}  // namespace

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::sphere: return "sphere";
    case Kind::capsule: return "capsule";
    case Kind::box: return "box";
    case Kind::cylinder: return "cylinder";
  }
  return "?";
}

Kind kind_from_name(const std::string& s) {
  if (s == "sphere") return Kind::sphere;
  if (s == "capsule") return Kind::capsule;
  if (s == "box") return Kind::box;
  if (s == "cylinder") return Kind::cylinder;
  throw ContractViolation("unknown primitive kind '" + s + "'");
}

double Primitive::sdf(const Vec3& x) const {
  const Vec3 p = rotation.transpose() * (x - center);
  switch (kind) {
    case Kind::sphere: return p.norm() - size.x();
    case Kind::capsule: {
      const double z = std::clamp(p.z(), -size.z(), size.z());
      return (p - Vec3(0, 0, z)).norm() - size.x();
    }
    case Kind::box: {
      const Vec3 q = p.cwiseAbs() - size;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case Kind::cylinder: {
      const double dx = std::hypot(p.x(), p.y()) - size.x();
      const double dz = std::abs(p.z()) - size.z();
      return std::min(std::max(dx, dz), 0.0) + std::hypot(std::max(dx, 0.0), std::max(dz, 0.0));
    }
  }
  return 0.0;
}

double Primitive::area() const {
  const double pi = std::numbers::pi;
  const double r = size.x();
  switch (kind) {
    case Kind::sphere: return 4 * pi * r * r;
    case Kind::capsule: return 4 * pi * r * r + 2 * pi * r * 2 * size.z();
    case Kind::box: return 8 * (size.x() * size.y() + size.y() * size.z() + size.x() * size.z());
    case Kind::cylinder: return 2 * pi * r * r + 2 * pi * r * 2 * size.z();
  }
  return 0.0;
}

void Primitive::sample(Rng& rng, Vec3& point, Vec3& normal) const {
  const double pi = std::numbers::pi;
  const double r = size.x();
  Vec3 p, n;
  switch (kind) {
    case Kind::sphere:
      n = random_direction(rng);
      p = r * n;
      break;
    case Kind::capsule: {
      const double side = 4 * pi * r * size.z();
      if (rng.uniform() * area() < side) {
        const double a = 2 * pi * rng.uniform();
        n = Vec3(std::cos(a), std::sin(a), 0);
        p = r * n + Vec3(0, 0, rng.uniform(-size.z(), size.z()));
      } else {
        n = random_direction(rng);
        p = r * n + Vec3(0, 0, n.z() >= 0 ? size.z() : -size.z());
      }
      break;
    }
    case Kind::box: {
      const double ax = size.y() * size.z(), ay = size.x() * size.z(), az = size.x() * size.y();
      const double u = rng.uniform() * (ax + ay + az);
      const int axis = u < ax ? 0 : (u < ax + ay ? 1 : 2);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      for (int i = 0; i < 3; ++i) p[i] = rng.uniform(-size[i], size[i]);
      p[axis] = sign * size[axis];
      n = Vec3::Zero();
      n[axis] = sign;
      break;
    }
    case Kind::cylinder: {
      const double side = 4 * pi * r * size.z();
      const double a = 2 * pi * rng.uniform();
      if (rng.uniform() * area() < side) {
        n = Vec3(std::cos(a), std::sin(a), 0);
        p = r * n + Vec3(0, 0, rng.uniform(-size.z(), size.z()));
      } else {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double rho = r * std::sqrt(rng.uniform());
        p = Vec3(rho * std::cos(a), rho * std::sin(a), sign * size.z());
        n = Vec3(0, 0, sign);
      }
      break;
    }
  }
  point = center + rotation * p;
  normal = (rotation * n).normalized();
}

ObjectModel::ObjectModel(std::string category, std::vector<Primitive> primitives)
    : category_(std::move(category)), primitives_(std::move(primitives)) {
  LANGGRASP_REQUIRE(!primitives_.empty(), "object: at least one primitive is required");
  for (const auto& p : primitives_) {
    LANGGRASP_REQUIRE(!p.part.empty(), "object: empty part label");
    LANGGRASP_REQUIRE(p.size.x() > 0, "object: primitive sizes must be positive");
    if (p.kind == Kind::box || p.kind == Kind::cylinder)
      LANGGRASP_REQUIRE(p.size.z() > 0 && (p.kind != Kind::box || p.size.y() > 0),
                        "object: primitive sizes must be positive");
    if (p.kind == Kind::capsule) LANGGRASP_REQUIRE(p.size.z() >= 0, "object: capsule half length must be non-negative");
    LANGGRASP_REQUIRE((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm() < 1e-9 &&
                          p.rotation.determinant() > 0,
                      "object: primitive rotation is not a rotation");
    int idx = part_index(p.part);
    if (idx < 0) {
      idx = static_cast<int>(parts_.size());
      parts_.push_back(p.part);
    }
    primitive_part_.push_back(idx);
  }
  const ObjectCloud dense = sample_surface(kDenseCount, kDenseSeed);
  for (const auto& x : dense.points) radius_ = std::max(radius_, x.norm());
}

int ObjectModel::part_index(const std::string& label) const {
  const auto it = std::find(parts_.begin(), parts_.end(), label);
  return it == parts_.end() ? -1 : static_cast<int>(it - parts_.begin());
}

double ObjectModel::sdf(const Vec3& x) const {
  double d = primitives_[0].sdf(x);
  for (std::size_t i = 1; i < primitives_.size(); ++i) d = std::min(d, primitives_[i].sdf(x));
  return d;
}

double ObjectModel::part_sdf(const Vec3& x, int part) const {
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < primitives_.size(); ++i)
    if (primitive_part_[i] == part) d = std::min(d, primitives_[i].sdf(x));
  return d;
}

ObjectCloud ObjectModel::sample_surface(std::size_t n, std::uint64_t seed) const {
  LANGGRASP_REQUIRE(n >= 1, "sample_surface: n must be at least 1");
  std::vector<double> cumulative;
  double total = 0;
  for (const auto& p : primitives_) cumulative.push_back(total += p.area());
  Rng rng = Rng(seed).stream("surface");
  ObjectCloud out;
  out.points.reserve(n);
  std::size_t attempts = 0;
  while (out.points.size() < n) {
    if (++attempts > 1000 * n + 10000) throw NumericFault("sample_surface", "union surface is almost fully enclosed");
    const double u = rng.uniform() * total;
    const std::size_t i = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    const std::size_t k = std::min(i, primitives_.size() - 1);
    Vec3 p, nrm;
    primitives_[k].sample(rng, p, nrm);
    bool covered = false;
    for (std::size_t j = 0; j < primitives_.size() && !covered; ++j) covered = j != k && primitives_[j].sdf(p) < 0;
    if (covered) continue;
    out.points.push_back(p);
    out.normals.push_back(nrm);
    out.part.push_back(primitive_part_[k]);
  }
  return out;
}

ObjectModel ObjectModel::centered() const {
  const ObjectCloud dense = sample_surface(kDenseCount, kDenseSeed);
  Vec3 c = Vec3::Zero();
  for (const auto& x : dense.points) c += x;
  c /= static_cast<double>(dense.points.size());
  auto prims = primitives_;
  for (auto& p : prims) p.center -= c;
  return ObjectModel(category_, std::move(prims));
}

std::string ObjectModel::to_json_string() const {
  json j;
  j["schema"] = kSchema;
  j["category"] = category_;
  for (const auto& p : primitives_) {
    json pj{{"kind", kind_name(p.kind)}, {"part", p.part}, {"center", vec_json(p.center)}, {"size", vec_json(p.size)}};
    for (int r = 0; r < 3; ++r) pj["rotation"].push_back(vec_json(p.rotation.row(r)));
    j["primitives"].push_back(pj);
  }
  return j.dump(2);
}

ObjectModel ObjectModel::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("object file: ") + e.what());
  }
  if (!j.is_object() || j.value("schema", "") != kSchema) throw IoError("object file: unsupported schema");
  try {
    std::vector<Primitive> prims;
    for (const auto& pj : j.at("primitives")) {
      Primitive p;
      p.kind = kind_from_name(pj.at("kind").get<std::string>());
      p.part = pj.at("part").get<std::string>();
      p.center = json_vec(pj.at("center"));
      p.size = json_vec(pj.at("size"));
      if (pj.contains("rotation")) {
        const auto& rot = pj.at("rotation");
        if (!rot.is_array() || rot.size() != 3) throw IoError("object file: rotation must have three rows");
        for (int r = 0; r < 3; ++r) p.rotation.row(r) = json_vec(rot[static_cast<std::size_t>(r)]).transpose();
      }
      prims.push_back(std::move(p));
    }
    return ObjectModel(j.at("category").get<std::string>(), std::move(prims));
  } catch (const json::exception& e) {
    throw IoError(std::string("object file: ") + e.what());
  } catch (const ContractViolation& e) {
    throw IoError(std::string("object file: ") + e.what());
  }
}

ObjectModel ObjectModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open object file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

void ObjectModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write object file " + path.string());
  out << to_json_string() << "\n";
}

const std::vector<std::string>& catalog_categories() {
  static const std::vector<std::string> c{"bottle", "sprayer", "mug", "pan"};
  return c;
}

std::string display_name(const std::string& category) {
  if (category == "sprayer") return "trigger sprayer";
  return category;
}

ObjectModel make_catalog_object(const std::string& category, Rng& rng) {
  std::vector<Primitive> p;
  auto add = [&](Kind k, Vec3 c, Vec3 s, std::string part, Mat3 r = Mat3::Identity()) {
    p.push_back(Primitive{k, c, r, s, std::move(part)});
  };
  if (category == "bottle") {
    const double r = rng.uniform(0.026, 0.034), h = rng.uniform(0.055, 0.075), rc = rng.uniform(0.014, 0.018);
    add(Kind::cylinder, Vec3::Zero(), Vec3(r, 0, h), "body");
    add(Kind::sphere, Vec3(0, 0, h + 0.5 * rc), Vec3(rc, 0, 0), "cap");
  } else if (category == "sprayer") {
    const double r = rng.uniform(0.028, 0.034), h = rng.uniform(0.065, 0.08);
    const Vec3 t(rng.uniform(0.011, 0.014), rng.uniform(0.007, 0.009), rng.uniform(0.014, 0.018));
    add(Kind::cylinder, Vec3::Zero(), Vec3(r, 0, h), "body");
    add(Kind::box, Vec3(r + t.x() - 0.004, 0, h - 0.03), t, "trigger");
  } else if (category == "mug") {
    const double r = rng.uniform(0.034, 0.04), h = rng.uniform(0.042, 0.052);
    const Vec3 hs(rng.uniform(0.011, 0.014), rng.uniform(0.006, 0.008), rng.uniform(0.026, 0.032));
    add(Kind::cylinder, Vec3::Zero(), Vec3(r, 0, h), "body");
    add(Kind::box, Vec3(-(r + hs.x() - 0.004), 0, 0), hs, "handle");
  } else if (category == "pan") {
    const double r = rng.uniform(0.065, 0.08), h = rng.uniform(0.012, 0.016);
    const double len = rng.uniform(0.05, 0.06), rh = rng.uniform(0.009, 0.012);
    add(Kind::cylinder, Vec3::Zero(), Vec3(r, 0, h), "body");
    add(Kind::capsule, Vec3(r + len, 0, 0), Vec3(rh, 0, len), "handle", axis_to_x());
  } else {
    throw ContractViolation("unknown object category '" + category + "'");
  }
  return ObjectModel(category, std::move(p)).centered();
}

}  // namespace langgrasp::object
