#pragma once

// Synthetic language-guided grasp dataset: catalog objects, oracle grasps from
// retargeting sampled source specs, and template guidance text.
//
// On disk:
//   manifest.json             ids, splits, counts, config echo, schema version
//   objects/obj_NNNN.json     object models
//   records/rec_NNNNN.dgys    one DGYS record each (kind 1), fields in order:
//     u32 record id, u32 object id, u32 split (0 train, 1 eval),
//     str verb, u32 F then F str part labels ("" for no contact),
//     str descriptor, str brief, str text,
//     f64[] pose, u64 cloud seed, u32 cloud points, f64[] contact map

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "langgrasp/hand/hand_model.hpp"
#include "langgrasp/hoir/hoir.hpp"
#include "langgrasp/object/object_model.hpp"
#include "langgrasp/rng.hpp"

namespace langgrasp::dataset {

using hand::GraspPose;
using hand::HandModel;
using object::ObjectModel;
using Vec3 = Eigen::Vector3d;

inline constexpr const char* kManifestSchema = "langgrasp.dataset/1";

enum class Split : std::uint32_t { train = 0, eval = 1 };
const char* split_name(Split s);

// Closed verb vocabulary.
const std::vector<std::string>& verbs();

// Planned finger -> part assignment for a verb on a category.
struct VerbPlan {
  std::string verb;
  std::vector<std::string> parts;  // thumb, forefinger, middle, ring
};
const std::vector<VerbPlan>& verb_plans(const std::string& category);

struct GuidanceSpec {
  std::string verb;
  std::vector<std::string> assignment;  // per finger, "" when not in contact
  std::string descriptor;
  std::string brief;
  std::string text;

  bool operator==(const GuidanceSpec&) const = default;
};

// Per finger, the part whose surface lies strictly closer than `threshold` to
// the fingertip (nearest part wins), or "" if none.
std::vector<std::string> finger_contacts(const ObjectModel& obj, const std::vector<Vec3>& fingertips,
                                         double threshold = 0.01);

std::string brief_guidance(const std::string& verb, const std::string& category);
// `fingers` are display names in finger order, e.g. hand finger names.
std::string contact_descriptor(const std::vector<std::string>& fingers, const std::vector<std::string>& assignment);
// Template `form` in [0, 3); every form starts with the brief text.
std::string render_guidance(const std::string& brief, const std::string& verb, const std::vector<std::string>& fingers,
                            const std::vector<std::string>& assignment, int form);
inline constexpr int kTemplateForms = 3;

GuidanceSpec annotate_guidance(const ObjectModel& obj, const GraspPose& pose, const HandModel& hand,
                               const std::string& verb, int form, double threshold = 0.01);
GuidanceSpec annotate_guidance(const ObjectModel& obj, const GraspPose& pose, const HandModel& hand,
                               const std::string& verb, Rng& rng, double threshold = 0.01);

struct ForgeConfig {
  std::vector<std::string> categories = object::catalog_categories();
  int objects_per_category = 10;
  int grasps_per_object = 25;
  int cloud_points = 512;
  double train_fraction = 0.8;
  double contact_threshold = 0.01;      // meters
  double penetration_threshold = 0.005; // meters
  double inward_offset = 0.005;         // fingertip targets below the surface, meters
  double max_failure_rate = 0.2;        // per category
  std::uint64_t seed = 0;
  int threads = 1;
  hoir::HoirConfig hoir;
};

struct ObjectEntry {
  std::uint32_t id = 0;
  std::string category;
  Split split = Split::train;
  std::uint64_t cloud_seed = 0;
  ObjectModel model{"empty", {object::Primitive{object::Kind::sphere, Vec3::Zero(), object::Mat3::Identity(), Vec3(0.01, 0, 0), "body"}}};
};

struct GraspRecord {
  std::uint32_t id = 0;
  std::uint32_t object_id = 0;
  Split split = Split::train;
  GuidanceSpec guidance;
  std::vector<double> pose;
  std::uint64_t cloud_seed = 0;
  std::uint32_t cloud_points = 0;
  std::vector<double> contact_map;

  bool operator==(const GraspRecord&) const = default;
};

struct Dataset {
  ForgeConfig config;
  std::string hand_name;
  std::vector<ObjectEntry> objects;
  std::vector<GraspRecord> records;
  std::map<std::string, int> attempts;  // per category
  std::map<std::string, int> failures;  // per category
};

// Source spec for a planned assignment. The forefinger's part anchors an
// approach direction, a hidden hand near mid-range closes on the object, and
// each finger whose tip lands near its planned part targets a surface point of
// that part `inward` meters below the surface; other fingers target their
// hidden tips. Wrist frame is the hidden wrist.
hoir::SourceGraspSpec sample_source_spec(const ObjectModel& obj, const object::ObjectCloud& cloud,
                                         const HandModel& hand, const VerbPlan& plan, Rng& rng, double inward);

// Throws NumericFault naming the category when its oracle failure rate is too high.
Dataset generate_dataset(const HandModel& hand, const ForgeConfig& cfg);

std::vector<unsigned char> encode_record(const GraspRecord& r);
GraspRecord decode_record(std::vector<unsigned char> bytes, const std::string& what = "record");

std::string manifest_json(const Dataset& d);
void write_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

std::vector<double> recompute_contact_map(const GraspRecord& r, const ObjectModel& obj, const HandModel& hand);
const ObjectEntry& object_of(const Dataset& d, const GraspRecord& r);

}  // namespace langgrasp::dataset
