#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "langgrasp/dataset/dataset.hpp"
#include "langgrasp/error.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/losses/losses.hpp"
#include "support/scenes.hpp"

using namespace langgrasp;
using namespace langgrasp::dataset;
namespace fs = std::filesystem;

namespace {

const HandModel& toy() {
  static const HandModel h = HandModel::toy_hand12();
  return h;
}

std::vector<std::string> finger_names() {
  std::vector<std::string> n;
  for (const auto& f : toy().fingers()) n.push_back(f.name);
  return n;
}

ForgeConfig small_config() {
  ForgeConfig c;
  c.objects_per_category = 2;
  c.grasps_per_object = 6;
  c.max_failure_rate = 1.0;
  c.seed = 5;
  return c;
}

const Dataset& small() {
  static const Dataset d = generate_dataset(toy(), small_config());
  return d;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("langgrasp_dataset_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Guidance, SprayerUseExample) {
  const std::vector<std::string> a{"body", "trigger", "body", "body"};
  EXPECT_EQ(contact_descriptor(finger_names(), a), "forefinger touches trigger. other fingers touch body.");
  const std::string brief = brief_guidance("use", "sprayer");
  EXPECT_EQ(brief, "To use a trigger sprayer");
  for (int form = 0; form < kTemplateForms; ++form) {
    const auto text = render_guidance(brief, "use", finger_names(), a, form);
    EXPECT_EQ(text.rfind("To use a trigger sprayer, press the trigger with your forefinger", 0), 0u) << text;
  }
}

TEST(Guidance, DescriptorShapes) {
  const auto n = finger_names();
  EXPECT_EQ(contact_descriptor(n, {"", "", "", ""}), "no-contact");
  EXPECT_EQ(contact_descriptor(n, {"body", "body", "body", "body"}), "all fingers touch body.");
  EXPECT_EQ(contact_descriptor(n, {"", "body", "body", "body"}),
            "forefinger, middle finger and ring finger touch body. thumb touches nothing.");
  EXPECT_EQ(contact_descriptor(n, {"cap", "cap", "body", ""}),
            "middle finger touches body. thumb and forefinger touch cap. ring finger touches nothing.");
  EXPECT_EQ(brief_guidance("hand-over", "mug"), "To hand over a mug");
}

TEST(Guidance, TextStartsWithBrief) {
  Rng rng(1);
  const std::vector<std::string> labels{"", "body", "handle", "cap", "trigger"};
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> a(4);
    for (auto& p : a) p = labels[rng.below(labels.size())];
    const auto& verb = verbs()[rng.below(verbs().size())];
    const auto brief = brief_guidance(verb, object::catalog_categories()[rng.below(4)]);
    const auto text = render_guidance(brief, verb, finger_names(), a, static_cast<int>(rng.below(kTemplateForms)));
    EXPECT_EQ(text.rfind(brief, 0), 0u) << text;
    EXPECT_EQ(text.back(), '.');
  }
}

TEST(Guidance, RenderRejectsBadForm) {
  EXPECT_THROW(render_guidance("To hold a mug", "hold", finger_names(), {"", "", "", ""}, 3), ContractViolation);
}

TEST(Guidance, FarHandTouchesNothing) {
  Rng rng(2);
  const auto obj = object::make_catalog_object("sprayer", rng);
  const auto pose = GraspPose::from_rotation(hand::Mat3::Identity(), Vec3(1.0, 0, 0), toy().mid_range());
  const auto g = annotate_guidance(obj, pose, toy(), "use", 0);
  EXPECT_EQ(g.assignment, std::vector<std::string>(4, ""));
  EXPECT_EQ(g.descriptor, "no-contact");
  EXPECT_EQ(g.text, "To use a trigger sprayer.");
}

TEST(Guidance, ContactThresholdIsStrict) {
  const auto obj = testing_support::ball(0.03);
  const Vec3 tip(0.04, 0.0, 0.0);
  const double d = obj.part_sdf(tip, 0);
  EXPECT_EQ(finger_contacts(obj, {tip}, d), std::vector<std::string>{""});
  EXPECT_EQ(finger_contacts(obj, {tip}, std::nextafter(d, 1.0)), std::vector<std::string>{"body"});
  EXPECT_EQ(finger_contacts(obj, {Vec3(0.0399, 0, 0)}), std::vector<std::string>{"body"});
  EXPECT_EQ(finger_contacts(obj, {Vec3(0.0401, 0, 0)}), std::vector<std::string>{""});
}

TEST(Guidance, NearestPartWins) {
  using namespace object;
  const ObjectModel obj("pair", {Primitive{Kind::sphere, Vec3(-0.02, 0, 0), Mat3::Identity(), Vec3(0.01, 0, 0), "left"},
                                 Primitive{Kind::sphere, Vec3(0.02, 0, 0), Mat3::Identity(), Vec3(0.01, 0, 0), "right"}});
  EXPECT_EQ(finger_contacts(obj, {Vec3(0.003, 0, 0), Vec3(-0.003, 0, 0)}), (std::vector<std::string>{"right", "left"}));
}

TEST(VerbPlans, PartsExistAndVerbsAreKnown) {
  Rng rng(3);
  for (const auto& cat : object::catalog_categories()) {
    const auto obj = object::make_catalog_object(cat, rng);
    for (const auto& p : verb_plans(cat)) {
      EXPECT_NE(std::find(verbs().begin(), verbs().end(), p.verb), verbs().end());
      ASSERT_EQ(p.parts.size(), toy().finger_count());
      for (const auto& part : p.parts) EXPECT_GE(obj.part_index(part), 0) << cat << " " << part;
    }
  }
  const auto& sprayer = verb_plans("sprayer");
  const auto use = std::find_if(sprayer.begin(), sprayer.end(), [](const VerbPlan& p) { return p.verb == "use"; });
  ASSERT_NE(use, sprayer.end());
  EXPECT_EQ(use->parts[1], "trigger");
  EXPECT_THROW(verb_plans("teapot"), ContractViolation);
}

TEST(SourceSpec, TargetsNearSurfaceAndPlanned) {
  Rng root(4);
  for (const auto& cat : object::catalog_categories()) {
    Rng rng = root.stream(cat);
    const auto obj = object::make_catalog_object(cat, rng);
    const auto cloud = obj.sample_surface(512, 9);
    for (const auto& plan : verb_plans(cat)) {
      const auto spec = sample_source_spec(obj, cloud, toy(), plan, rng, 0.005);
      EXPECT_NO_THROW(hoir::validate(toy(), spec));
      EXPECT_EQ(spec.parts, plan.parts);
      for (const auto& t : spec.fingertips) EXPECT_LE(std::abs(obj.sdf(t)), 0.02 + 1e-9);
    }
  }
}

TEST(Forge, SplitIsByObject) {
  const auto& d = small();
  std::set<std::uint32_t> train, eval;
  for (const auto& r : d.records) (r.split == Split::train ? train : eval).insert(r.object_id);
  for (auto id : eval) EXPECT_EQ(train.count(id), 0u);
  for (const auto& r : d.records) EXPECT_EQ(r.split, object_of(d, r).split);
  std::map<std::string, std::set<Split>> per_cat;
  for (const auto& o : d.objects) per_cat[o.category].insert(o.split);
  for (const auto& [cat, splits] : per_cat) EXPECT_EQ(splits.size(), 2u) << cat;
}

TEST(Forge, RecordsRespectPenetrationAndLimits) {
  const auto& d = small();
  ASSERT_GE(d.records.size(), 10u);
  for (const auto& r : d.records) {
    const auto& o = object_of(d, r);
    const auto cloud = o.model.sample_surface(r.cloud_points, r.cloud_seed);
    const auto pose = GraspPose::from_vector(r.pose, toy().joint_count());
    EXPECT_LE(losses::max_penetration(cloud.points, toy().forward(pose)), 0.005);
    for (double v : toy().limit_violation(pose.q)) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.guidance.text.rfind(r.guidance.brief, 0), 0u);
    for (const auto& p : r.guidance.assignment)
      if (!p.empty()) EXPECT_GE(o.model.part_index(p), 0);
  }
}

TEST(Forge, GroupsHoldAtLeastTwoDistinctPoses) {
  const auto& d = small();
  std::map<std::tuple<std::uint32_t, std::string, std::vector<std::string>>, std::set<std::vector<double>>> groups;
  for (const auto& r : d.records) groups[{r.object_id, r.guidance.verb, r.guidance.assignment}].insert(r.pose);
  for (const auto& [k, poses] : groups) EXPECT_GE(poses.size(), 2u);
}

TEST(Forge, ContactMapsRecompute) {
  const auto& d = small();
  for (const auto& r : d.records) {
    const auto m = recompute_contact_map(r, object_of(d, r).model, toy());
    ASSERT_EQ(m.size(), r.contact_map.size());
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], r.contact_map[i], 1e-9);
  }
}

TEST(Forge, FailureAccountingCoversAttempts) {
  const auto& d = small();
  for (const auto& cat : object::catalog_categories()) {
    EXPECT_EQ(d.attempts.at(cat), 2 * 6);
    EXPECT_LE(d.failures.at(cat), d.attempts.at(cat));
  }
}

TEST(Forge, ManifestIsDeterministic) {
  ForgeConfig c = small_config();
  c.categories = {"pan"};
  c.grasps_per_object = 3;
  const auto a = manifest_json(generate_dataset(toy(), c));
  c.threads = 2;
  const auto b = manifest_json(generate_dataset(toy(), c));
  EXPECT_EQ(a, b);
}

TEST(Forge, HighFailureRateIsAFaultNamingCategory) {
  ForgeConfig c = small_config();
  c.categories = {"mug"};
  c.grasps_per_object = 1;
  c.max_failure_rate = 0.2;
  c.penetration_threshold = -1.0;
  try {
    generate_dataset(toy(), c);
    FAIL() << "expected a failure-rate fault";
  } catch (const NumericFault& e) {
    EXPECT_EQ(e.where(), "dataset-forge");
    EXPECT_NE(std::string(e.what()).find("'mug'"), std::string::npos) << e.what();
  }
}

TEST(Forge, RejectsDegenerateConfig) {
  ForgeConfig c = small_config();
  c.objects_per_category = 1;
  EXPECT_THROW(generate_dataset(toy(), c), ContractViolation);
  c = small_config();
  c.categories = {"teapot"};
  EXPECT_THROW(generate_dataset(toy(), c), ContractViolation);
}

TEST(Storage, RoundTripIsBitIdentical) {
  const auto& d = small();
  const auto dir = scratch("roundtrip");
  write_dataset(d, dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.records.size(), d.records.size());
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    EXPECT_EQ(back.records[i], d.records[i]);
    EXPECT_EQ(encode_record(back.records[i]), encode_record(d.records[i]));
  }
  ASSERT_EQ(back.objects.size(), d.objects.size());
  for (std::size_t i = 0; i < d.objects.size(); ++i) {
    EXPECT_EQ(back.objects[i].model.to_json_string(), d.objects[i].model.to_json_string());
    EXPECT_EQ(back.objects[i].split, d.objects[i].split);
  }
  EXPECT_EQ(manifest_json(back), manifest_json(d));
  for (const auto& r : back.records) {
    const auto m = recompute_contact_map(r, object_of(back, r).model, toy());
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(m[i], r.contact_map[i], 1e-9);
  }
  fs::remove_all(dir);
}

TEST(Storage, RecordHeaderLayout) {
  GraspRecord r;
  r.guidance.verb = "hold";
  r.guidance.assignment = {"body", "", "", ""};
  r.pose = {0.5, -1.0};
  const auto bytes = encode_record(r);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DGYS");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // record kind
  EXPECT_EQ(decode_record(bytes), r);
}

TEST(Storage, MalformedRecordsAreIoErrors) {
  GraspRecord r;
  r.guidance.verb = "use";
  r.guidance.assignment = {"", "trigger", "", ""};
  r.pose.assign(21, 0.25);
  r.contact_map.assign(8, 0.5);
  const auto good = encode_record(r);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_record(bad_magic), IoError);

  auto bad_version = good;
  bad_version[4] = 7;
  EXPECT_THROW(decode_record(bad_version), IoError);

  auto bad_kind = good;
  bad_kind[8] = static_cast<unsigned char>(io::Kind::checkpoint);
  EXPECT_THROW(decode_record(bad_kind), IoError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{11}, good.size() / 2, good.size() - 1}) {
    const std::vector<unsigned char> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_record(truncated), IoError) << cut;
  }

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_record(trailing), IoError);
}

TEST(Storage, MissingOrCorruptManifest) {
  const auto dir = scratch("corrupt");
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::create_directories(dir);
  const std::string junk = "{\"schema\": ";
  io::write_file(dir / "manifest.json", junk.data(), junk.size());
  EXPECT_THROW(read_dataset(dir), IoError);
  const std::string wrong = "{\"schema\": \"other/9\"}";
  io::write_file(dir / "manifest.json", wrong.data(), wrong.size());
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove_all(dir);
}
