#pragma once

// Objects as unions of labeled analytic primitives.

#include <Eigen/Geometry>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "langgrasp/rng.hpp"

namespace langgrasp::object {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class Kind { sphere, capsule, box, cylinder };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& s);

// Size convention (meters, local frame):
//   sphere   size.x = radius
//   capsule  size.x = radius, size.z = half length of the axis segment along z
//   box      size = half extents
//   cylinder size.x = radius, size.z = half height along z
struct Primitive {
  Kind kind = Kind::sphere;
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 size = Vec3::Zero();
  std::string part;

  double sdf(const Vec3& x) const;
  double area() const;
  // Uniform area sample on the primitive's own surface; returns point and outward normal.
  void sample(Rng& rng, Vec3& point, Vec3& normal) const;
};

struct ObjectCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<int> part;  // index into ObjectModel::parts()
};

class ObjectModel {
 public:
  ObjectModel(std::string category, std::vector<Primitive> primitives);

  const std::string& category() const { return category_; }
  const std::vector<Primitive>& primitives() const { return primitives_; }
  // Distinct part labels in order of first appearance.
  const std::vector<std::string>& parts() const { return parts_; }
  int part_index(const std::string& label) const;  // -1 when absent

  double sdf(const Vec3& x) const;
  double part_sdf(const Vec3& x, int part) const;
  // Largest distance from the origin to the surface, estimated from a dense sample.
  double radius() const { return radius_; }

  ObjectCloud sample_surface(std::size_t n, std::uint64_t seed) const;

  // Shifted copy whose dense-sample surface centroid sits at the origin.
  ObjectModel centered() const;

  std::string to_json_string() const;
  static ObjectModel from_json_string(const std::string& text);
  static ObjectModel load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::string category_;
  std::vector<Primitive> primitives_;
  std::vector<std::string> parts_;
  std::vector<int> primitive_part_;
  double radius_ = 0.0;
};

// Catalog families with randomized sizes, centered at the surface centroid.
const std::vector<std::string>& catalog_categories();
ObjectModel make_catalog_object(const std::string& category, Rng& rng);
// Display name used in guidance text ("trigger sprayer" for "sprayer").
std::string display_name(const std::string& category);

}  // namespace langgrasp::object
