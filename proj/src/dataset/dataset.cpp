#include "langgrasp/dataset/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <json.hpp>
#include <set>
#include <sstream>

#include "langgrasp/error.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/losses/losses.hpp"
#include "langgrasp/parallel.hpp"

namespace langgrasp::dataset {

using json = nlohmann::json;

const char* split_name(Split s) { return s == Split::train ? "train" : "eval"; }

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v{"use", "hold", "lift", "pour", "open", "hand-over"};
  return v;
}

const std::vector<VerbPlan>& verb_plans(const std::string& category) {
  static const std::map<std::string, std::vector<VerbPlan>> table{
      {"bottle",
       {{"hold", {"body", "body", "body", "body"}},
        {"open", {"cap", "cap", "body", "body"}},
        {"pour", {"body", "body", "body", "body"}}}},
      {"sprayer",
       {{"use", {"body", "trigger", "body", "body"}},
        {"hold", {"body", "body", "body", "body"}},
        {"hand-over", {"body", "body", "body", "body"}}}},
      {"mug",
       {{"use", {"handle", "handle", "handle", "body"}},
        {"hold", {"body", "body", "body", "body"}},
        {"hand-over", {"body", "body", "body", "body"}}}},
      {"pan",
       {{"use", {"handle", "handle", "handle", "handle"}},
        {"lift", {"handle", "handle", "handle", "handle"}},
        {"hand-over", {"body", "body", "body", "body"}}}},
  };
  const auto it = table.find(category);
  LANGGRASP_REQUIRE(it != table.end(), "no verb plans for category '" + category + "'");
  return it->second;
}

std::vector<std::string> finger_contacts(const ObjectModel& obj, const std::vector<Vec3>& fingertips, double threshold) {
  std::vector<std::string> out;
  for (const auto& tip : fingertips) {
    double best = threshold;
    std::string part;
    for (std::size_t p = 0; p < obj.parts().size(); ++p) {
      const double d = obj.part_sdf(tip, static_cast<int>(p));
      if (d < best) {
        best = d;
        part = obj.parts()[p];
      }
    }
    out.push_back(part);
  }
  return out;
}

namespace {

std::string verb_phrase(const std::string& verb) { return verb == "hand-over" ? "hand over" : verb; }

std::string join_names(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i > 0) s += (i + 1 == names.size()) ? " and " : ", ";
    s += names[i];
  }
  return s;
}

struct Group {
  std::string part;
  std::vector<std::size_t> fingers;
};

struct Layout {
  std::vector<Group> minority;  // in order of first finger
  Group majority;
  std::vector<std::size_t> idle;
  bool whole_hand = false;       // every finger on the majority part
  bool others_on_majority = false;  // every finger outside the minority groups is on the majority part
};

// Returns false when no finger is in contact.
bool layout_of(const std::vector<std::string>& assignment, Layout& lay) {
  std::vector<Group> groups;
  for (std::size_t f = 0; f < assignment.size(); ++f) {
    if (assignment[f].empty()) {
      lay.idle.push_back(f);
      continue;
    }
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return g.part == assignment[f]; });
    if (it == groups.end()) {
      groups.push_back({assignment[f], {f}});
    } else {
      it->fingers.push_back(f);
    }
  }
  if (groups.empty()) return false;
  std::size_t major = 0;
  for (std::size_t g = 1; g < groups.size(); ++g)
    if (groups[g].fingers.size() > groups[major].fingers.size()) major = g;
  lay.majority = groups[major];
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (g != major) lay.minority.push_back(groups[g]);
  lay.whole_hand = lay.minority.empty() && lay.idle.empty();
  lay.others_on_majority = !lay.minority.empty() && lay.idle.empty() && lay.majority.fingers.size() > 1;
  return true;
}

std::vector<std::string> names_of(const std::vector<std::string>& fingers, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(fingers.at(i));
  return out;
}

std::string action(const std::string& verb, const std::string& part) {
  if (part == "trigger") return "press";
  if (part == "cap" && verb == "open") return "twist";
  if (part == "handle") return "grip";
  return "hold";
}

std::string tail(const std::string& verb) {
  if (verb == "use") return " to operate it";
  if (verb == "hold") return " and keep it steady";
  if (verb == "lift") return " and raise it";
  if (verb == "pour") return " and tilt it to pour";
  if (verb == "open") return " and turn to open it";
  if (verb == "hand-over") return " and offer it to the other person";
  return "";
}

}  // namespace

std::string brief_guidance(const std::string& verb, const std::string& category) {
  const std::string name = object::display_name(category);
  const bool vowel = !name.empty() && std::string("aeiou").find(name[0]) != std::string::npos;
  return "To " + verb_phrase(verb) + (vowel ? " an " : " a ") + name;
}

std::string contact_descriptor(const std::vector<std::string>& fingers, const std::vector<std::string>& assignment) {
  LANGGRASP_REQUIRE(fingers.size() == assignment.size(), "descriptor: finger/assignment length mismatch");
  Layout lay;
  if (!layout_of(assignment, lay)) return "no-contact";
  auto sentence = [&](const std::vector<std::size_t>& idx, const std::string& what) {
    return join_names(names_of(fingers, idx)) + (idx.size() == 1 ? " touches " : " touch ") + what + ".";
  };
  if (lay.whole_hand) return "all fingers touch " + lay.majority.part + ".";
  std::vector<std::string> parts;
  for (const auto& g : lay.minority) parts.push_back(sentence(g.fingers, g.part));
  parts.push_back(lay.others_on_majority ? "other fingers touch " + lay.majority.part + "."
                                         : sentence(lay.majority.fingers, lay.majority.part));
  if (!lay.idle.empty()) parts.push_back(sentence(lay.idle, "nothing"));
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? " " : "") + parts[i];
  return s;
}

std::string render_guidance(const std::string& brief, const std::string& verb, const std::vector<std::string>& fingers,
                            const std::vector<std::string>& assignment, int form) {
  LANGGRASP_REQUIRE(form >= 0 && form < kTemplateForms, "render_guidance: template form out of range");
  LANGGRASP_REQUIRE(fingers.size() == assignment.size(), "render_guidance: finger/assignment length mismatch");
  Layout lay;
  if (!layout_of(assignment, lay)) return brief + ".";
  std::vector<std::string> clauses;
  for (const auto& g : lay.minority)
    clauses.push_back(action(verb, g.part) + " the " + g.part + " with your " + join_names(names_of(fingers, g.fingers)));
  std::string who = lay.whole_hand           ? "all fingers"
                    : lay.others_on_majority ? "other fingers"
                                             : join_names(names_of(fingers, lay.majority.fingers));
  clauses.push_back(action(verb, lay.majority.part) + " the " + lay.majority.part + " with your " + who);

  std::string rest;
  for (std::size_t i = 1; i < clauses.size(); ++i) {
    if (i > 1) rest += form == 2 ? ", then " : " and ";
    rest += clauses[i];
  }
  const std::string head = brief + ", " + clauses[0];
  if (clauses.size() == 1) {
    if (form == 0) return head + ".";
    if (form == 1) return head + " firmly.";
    return head + tail(verb) + ".";
  }
  if (form == 0) return head + " and " + rest + ".";
  if (form == 1) return head + " while you " + rest + ".";
  return head + ", then " + rest + tail(verb) + ".";
}

GuidanceSpec annotate_guidance(const ObjectModel& obj, const GraspPose& pose, const HandModel& hand,
                               const std::string& verb, int form, double threshold) {
  LANGGRASP_REQUIRE(std::find(verbs().begin(), verbs().end(), verb) != verbs().end(), "unknown verb '" + verb + "'");
  LANGGRASP_REQUIRE(pose.q.size() == hand.joint_count(), "annotate_guidance: pose has wrong joint count");
  std::vector<std::string> names;
  for (const auto& f : hand.fingers()) names.push_back(f.name);
  GuidanceSpec g;
  g.verb = verb;
  g.assignment = finger_contacts(obj, hand.forward(pose).fingertips, threshold);
  g.descriptor = contact_descriptor(names, g.assignment);
  g.brief = brief_guidance(verb, obj.category());
  g.text = render_guidance(g.brief, verb, names, g.assignment, form);
  return g;
}

GuidanceSpec annotate_guidance(const ObjectModel& obj, const GraspPose& pose, const HandModel& hand,
                               const std::string& verb, Rng& rng, double threshold) {
  return annotate_guidance(obj, pose, hand, verb, static_cast<int>(rng.below(kTemplateForms)), threshold);
}

namespace {

Vec3 random_unit(Rng& rng) {
  Vec3 v(rng.normal(), rng.normal(), rng.normal());
  while (v.norm() < 1e-9) v = Vec3(rng.normal(), rng.normal(), rng.normal());
  return v.normalized();
}

// Source grasp sampling. The hidden hand starts opened from mid-range, slides
// in to first contact and curls each finger back toward mid-range until it
// touches, so step 2 only has to travel a short way in joint space.
constexpr double kSourceDepth = 0.0005;
constexpr double kSourceJointSwing = 0.15;
constexpr double kSnapDistance = 0.01;
constexpr int kSourceCandidates = 12;
constexpr double kMaxTargetGap = 0.02;

// Closest point on a part's own surface by Newton steps on its distance field.
// Fails when the point ends up buried inside another part.
bool project_to_part(const ObjectModel& obj, int part, const Vec3& x, Vec3& p, Vec3& n) {
  constexpr double h = 1e-6;
  p = x;
  for (int it = 0; it < 4; ++it) {
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e[k] = h;
      g[k] = (obj.part_sdf(p + e, part) - obj.part_sdf(p - e, part)) / (2 * h);
    }
    if (g.norm() < 1e-9) return false;
    n = g.normalized();
    p -= obj.part_sdf(p, part) * n;
  }
  return std::abs(obj.part_sdf(p, part)) < 1e-6 && obj.sdf(p) > -1e-4;
}

double finger_penetration(const std::vector<Vec3>& pts, const HandModel& hand, const hand::HandCloud& hc, std::size_t f) {
  const std::size_t first = hand.link_of(f, 0), last = hand.link_of(f, hand.fingers()[f].joints.size() - 1);
  double worst = 0;
  for (std::size_t c = 0; c < hc.capsules.size(); ++c) {
    const auto link = static_cast<std::size_t>(hand.capsule_link()[c]);
    if (link < first || link > last) continue;
    const auto& cap = hc.capsules[c];
    const Vec3 seg = cap.b - cap.a;
    for (const auto& x : pts) {
      const double u = std::clamp((x - cap.a).dot(seg) / seg.squaredNorm(), 0.0, 1.0);
      worst = std::max(worst, cap.radius - (x - cap.a - u * seg).norm());
    }
  }
  return worst;
}

}  // namespace

hoir::SourceGraspSpec sample_source_spec(const ObjectModel& obj, const object::ObjectCloud& cloud,
                                         const HandModel& hand, const VerbPlan& plan, Rng& rng, double inward) {
  LANGGRASP_REQUIRE(plan.parts.size() == hand.finger_count(), "verb plan does not cover every finger");
  auto part_points = [&](const std::string& label) {
    const int p = obj.part_index(label);
    LANGGRASP_REQUIRE(p >= 0, "object '" + obj.category() + "' has no part '" + label + "'");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < cloud.points.size(); ++i)
      if (cloud.part[i] == p) idx.push_back(i);
    LANGGRASP_REQUIRE(!idx.empty(), "object cloud has no points on part '" + label + "'");
    return idx;
  };

  // Approach the lead finger's part along jittered surface normals and keep
  // the candidate with the most fingers landing on their planned parts.
  const std::size_t lead = hand.finger_count() > 1 ? 1 : 0;
  const auto anchor_pts = part_points(plan.parts[lead]);
  std::vector<std::vector<std::size_t>> finger_pts;
  std::vector<int> part_ids;
  for (const auto& label : plan.parts) {
    finger_pts.push_back(part_points(label));
    part_ids.push_back(obj.part_index(label));
  }
  const Vec3 grasp_center(0.0, 0.02, 0.07);

  hoir::SourceGraspSpec best;
  double best_score = std::numeric_limits<double>::infinity();
  for (int c = 0; c < kSourceCandidates; ++c) {
    const std::size_t a = anchor_pts[rng.below(anchor_pts.size())];
    const Vec3 dir = (cloud.normals[a] + 0.3 * random_unit(rng)).normalized();
    Vec3 side = random_unit(rng);
    side = (side - side.dot(dir) * dir).normalized();
    hand::Mat3 r;
    r.col(1) = -dir;
    r.col(2) = side;
    r.col(0) = r.col(1).cross(r.col(2));
    std::vector<double> q = hand.mid_range();
    for (std::size_t j = 0; j < q.size(); ++j) q[j] = std::max(q[j] - kSourceJointSwing, hand.lower()[j]);
    auto pose_at = [&](double s) { return GraspPose::from_rotation(r, cloud.points[a] + s * dir - r * grasp_center, q); };

    // Slide in from outside until the hand first reaches the contact depth.
    // Moving the hand by s * dir is the same as moving the object by -s * dir.
    const auto rest = hand.forward(pose_at(0.0));
    auto depth_at = [&](double s) {
      double worst = 0;
      for (const auto& x : cloud.points) worst = std::max(worst, -losses::hand_sdf(rest, x - s * dir));
      return worst;
    };
    double s = 0.15;
    while (s > -0.1 && depth_at(s - 0.008) < kSourceDepth) s -= 0.008;
    for (double step = 0.004; step > 2.5e-4; step *= 0.5)
      if (depth_at(s - step) < kSourceDepth) s -= step;
    GraspPose pose = pose_at(s);

    // Curl each finger joint by joint, proximal first, until it touches.
    for (std::size_t f = 0; f < hand.finger_count(); ++f) {
      for (std::size_t j = 0; j < hand.fingers()[f].joints.size(); ++j) {
        const std::size_t idx = hand.joint_index(f, j);
        const double cap = std::min(hand.mid_range()[idx] + kSourceJointSwing, hand.upper()[idx]);
        for (double step : {0.06, 0.03, 0.015}) {
          while (pose.q[idx] < cap) {
            GraspPose next = pose;
            next.q[idx] = std::min(pose.q[idx] + step, cap);
            if (finger_penetration(cloud.points, hand, hand.forward(next), f) > kSourceDepth) break;
            pose = next;
          }
        }
      }
    }

    hoir::SourceGraspSpec spec;
    spec.wrist_rotation = r;
    spec.wrist_translation = pose.t;
    spec.parts = plan.parts;
    const auto tips = hand.forward(pose).fingertips;
    double score = 0;
    for (std::size_t f = 0; f < hand.finger_count(); ++f) {
      const Vec3 tip = tips[f];
      Vec3 p, n;
      if (!project_to_part(obj, part_ids[f], tip, p, n)) {
        const auto& cand = finger_pts[f];
        const std::size_t i = *std::min_element(cand.begin(), cand.end(), [&](std::size_t x, std::size_t y) {
          return (cloud.points[x] - tip).squaredNorm() < (cloud.points[y] - tip).squaredNorm();
        });
        p = cloud.points[i];
        n = cloud.normals[i];
      }
      // A finger that ends far from its part keeps its own tip as the target,
      // pulled in to within the target gap of the part.
      const Vec3 gap = tip - p;
      if (gap.norm() > kSnapDistance) {
        const bool far = gap.norm() > kMaxTargetGap;
        spec.fingertips.push_back(far ? Vec3(p + kMaxTargetGap * gap.normalized()) : tip);
        score += far ? 100.0 : 1.0;
        continue;
      }
      spec.fingertips.push_back(p - inward * n);
      score += gap.squaredNorm();
    }
    if (score < best_score) {
      best_score = score;
      best = std::move(spec);
    }
  }
  return best;
}

namespace {

struct ObjectResult {
  ObjectEntry entry;
  std::vector<GraspRecord> records;
  int attempts = 0;
  int failures = 0;
};

ObjectResult forge_object(const HandModel& hand, const ForgeConfig& cfg, const std::string& category, std::uint32_t id,
                          const Rng& root) {
  ObjectResult out;
  Rng rng = root.stream("object").stream(id);
  out.entry.id = id;
  out.entry.category = category;
  out.entry.model = object::make_catalog_object(category, rng);
  out.entry.cloud_seed = rng.next_u64();
  const auto cloud = out.entry.model.sample_surface(static_cast<std::size_t>(cfg.cloud_points), out.entry.cloud_seed);
  const auto& plans = verb_plans(category);
  for (int g = 0; g < cfg.grasps_per_object; ++g) {
    Rng grng = rng.stream(static_cast<std::uint64_t>(g));
    const VerbPlan& plan = plans[static_cast<std::size_t>(g) % plans.size()];
    ++out.attempts;
    try {
      const auto spec = sample_source_spec(out.entry.model, cloud, hand, plan, grng, cfg.inward_offset);
      auto pose = hoir::retarget(hand, cloud.points, spec, cfg.hoir).pose;
      for (std::size_t j = 0; j < pose.q.size(); ++j) pose.q[j] = std::clamp(pose.q[j], hand.lower()[j], hand.upper()[j]);
      const auto hc = hand.forward(pose);
      if (losses::max_penetration(cloud.points, hc) > cfg.penetration_threshold) {
        ++out.failures;
        continue;
      }
      GraspRecord rec;
      rec.object_id = id;
      rec.guidance = annotate_guidance(out.entry.model, pose, hand, plan.verb, grng, cfg.contact_threshold);
      rec.pose = pose.to_vector();
      rec.cloud_seed = out.entry.cloud_seed;
      rec.cloud_points = static_cast<std::uint32_t>(cfg.cloud_points);
      rec.contact_map = losses::contact_map(cloud.points, hc.points);
      out.records.push_back(std::move(rec));
    } catch (const NumericFault&) {
      ++out.failures;
    }
  }
  return out;
}

}  // namespace

Dataset generate_dataset(const HandModel& hand, const ForgeConfig& cfg) {
  LANGGRASP_REQUIRE(!cfg.categories.empty(), "dataset: no categories");
  LANGGRASP_REQUIRE(cfg.objects_per_category >= 2, "dataset: need at least two objects per category for a split");
  LANGGRASP_REQUIRE(cfg.grasps_per_object >= 1 && cfg.cloud_points >= 16, "dataset: bad grasp or cloud counts");
  LANGGRASP_REQUIRE(cfg.train_fraction > 0 && cfg.train_fraction < 1, "dataset: train fraction must be in (0, 1)");
  for (const auto& c : cfg.categories) verb_plans(c);

  const Rng root(cfg.seed);
  std::vector<std::pair<std::string, std::uint32_t>> jobs;
  for (const auto& c : cfg.categories)
    for (int k = 0; k < cfg.objects_per_category; ++k) jobs.emplace_back(c, static_cast<std::uint32_t>(jobs.size()));

  std::vector<ObjectResult> results(jobs.size());
  parallel_for(jobs.size(), cfg.threads,
               [&](std::size_t i) { results[i] = forge_object(hand, cfg, jobs[i].first, jobs[i].second, root); });

  Dataset d;
  d.config = cfg;
  d.hand_name = hand.name();
  // Object-level split per category.
  for (const auto& c : cfg.categories) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < jobs.size(); ++i)
      if (jobs[i].first == c) members.push_back(i);
    Rng srng = root.stream("split").stream(c);
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[srng.below(i)]);
    const auto n = members.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    for (std::size_t k = 0; k < n; ++k) results[members[k]].entry.split = k < n_train ? Split::train : Split::eval;
  }

  for (auto& r : results) {
    d.attempts[r.entry.category] += r.attempts;
    d.failures[r.entry.category] += r.failures;
  }
  for (const auto& [cat, att] : d.attempts) {
    const double rate = static_cast<double>(d.failures[cat]) / static_cast<double>(std::max(att, 1));
    if (rate > cfg.max_failure_rate) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "category '%s': oracle failure rate %.3f (%d of %d) exceeds %.3f", cat.c_str(), rate,
                    d.failures[cat], att, cfg.max_failure_rate);
      throw NumericFault("dataset-forge", buf);
    }
  }

  // Keep only (object, verb, assignment) groups with at least two grasps.
  std::uint32_t next_id = 0;
  for (auto& r : results) {
    std::map<std::pair<std::string, std::vector<std::string>>, int> count;
    for (const auto& rec : r.records) ++count[{rec.guidance.verb, rec.guidance.assignment}];
    for (auto& rec : r.records) {
      if (count[{rec.guidance.verb, rec.guidance.assignment}] < 2) continue;
      rec.id = next_id++;
      rec.split = r.entry.split;
      d.records.push_back(std::move(rec));
    }
    d.objects.push_back(std::move(r.entry));
  }
  return d;
}

std::vector<unsigned char> encode_record(const GraspRecord& r) {
  io::Writer w(io::Kind::record);
  w.u32(r.id);
  w.u32(r.object_id);
  w.u32(static_cast<std::uint32_t>(r.split));
  w.str(r.guidance.verb);
  w.u32(static_cast<std::uint32_t>(r.guidance.assignment.size()));
  for (const auto& p : r.guidance.assignment) w.str(p);
  w.str(r.guidance.descriptor);
  w.str(r.guidance.brief);
  w.str(r.guidance.text);
  w.f64s(r.pose);
  w.u64(r.cloud_seed);
  w.u32(r.cloud_points);
  w.f64s(r.contact_map);
  return w.bytes();
}

GraspRecord decode_record(std::vector<unsigned char> bytes, const std::string& what) {
  io::Reader rd(std::move(bytes), io::Kind::record, what);
  GraspRecord r;
  r.id = rd.u32();
  r.object_id = rd.u32();
  const std::uint32_t split = rd.u32();
  if (split > 1) throw IoError(what + ": bad split tag " + std::to_string(split));
  r.split = static_cast<Split>(split);
  r.guidance.verb = rd.str();
  const std::uint32_t nf = rd.u32();
  if (nf > 64) throw IoError(what + ": implausible finger count " + std::to_string(nf));
  for (std::uint32_t i = 0; i < nf; ++i) r.guidance.assignment.push_back(rd.str());
  r.guidance.descriptor = rd.str();
  r.guidance.brief = rd.str();
  r.guidance.text = rd.str();
  r.pose = rd.f64s();
  r.cloud_seed = rd.u64();
  r.cloud_points = rd.u32();
  r.contact_map = rd.f64s();
  rd.finish();
  return r;
}

namespace {

std::string object_file(std::uint32_t id) {
  char b[32];
  std::snprintf(b, sizeof b, "objects/obj_%04u.json", id);
  return b;
}

std::string record_file(std::uint32_t id) {
  char b[32];
  std::snprintf(b, sizeof b, "records/rec_%05u.dgys", id);
  return b;
}

json config_json(const ForgeConfig& c) {
  return json{{"categories", c.categories},
              {"objects_per_category", c.objects_per_category},
              {"grasps_per_object", c.grasps_per_object},
              {"cloud_points", c.cloud_points},
              {"train_fraction", c.train_fraction},
              {"contact_threshold", c.contact_threshold},
              {"penetration_threshold", c.penetration_threshold},
              {"inward_offset", c.inward_offset},
              {"max_failure_rate", c.max_failure_rate},
              {"seed", c.seed},
              {"hoir",
               {{"align_steps", c.hoir.align_steps},
                {"align_lr", c.hoir.align_lr},
                {"refine_steps", c.hoir.refine_steps},
                {"refine_lr", c.hoir.refine_lr}}}};
}

ForgeConfig config_from(const json& j) {
  ForgeConfig c;
  c.categories = j.at("categories").get<std::vector<std::string>>();
  c.objects_per_category = j.at("objects_per_category").get<int>();
  c.grasps_per_object = j.at("grasps_per_object").get<int>();
  c.cloud_points = j.at("cloud_points").get<int>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.contact_threshold = j.at("contact_threshold").get<double>();
  c.penetration_threshold = j.at("penetration_threshold").get<double>();
  c.inward_offset = j.at("inward_offset").get<double>();
  c.max_failure_rate = j.at("max_failure_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& h = j.at("hoir");
  c.hoir.align_steps = h.at("align_steps").get<int>();
  c.hoir.align_lr = h.at("align_lr").get<double>();
  c.hoir.refine_steps = h.at("refine_steps").get<int>();
  c.hoir.refine_lr = h.at("refine_lr").get<double>();
  return c;
}

}  // namespace

std::string manifest_json(const Dataset& d) {
  json objs = json::array();
  std::map<std::uint32_t, int> per_object;
  for (const auto& r : d.records) ++per_object[r.object_id];
  for (const auto& o : d.objects)
    objs.push_back({{"id", o.id},
                    {"category", o.category},
                    {"split", split_name(o.split)},
                    {"file", object_file(o.id)},
                    {"cloud_seed", o.cloud_seed},
                    {"records", per_object[o.id]}});
  json recs = json::array();
  std::size_t n_train = 0;
  for (const auto& r : d.records) {
    n_train += r.split == Split::train;
    recs.push_back({{"id", r.id},
                    {"object", r.object_id},
                    {"split", split_name(r.split)},
                    {"verb", r.guidance.verb},
                    {"assignment", r.guidance.assignment},
                    {"file", record_file(r.id)}});
  }
  json cats = json::object();
  for (const auto& [c, a] : d.attempts) cats[c] = {{"attempts", a}, {"failures", d.failures.at(c)}};
  json m{{"schema", kManifestSchema},
         {"format", {{"magic", "DGYS"}, {"version", io::kFormatVersion}, {"endianness", "little"}}},
         {"hand", d.hand_name},
         {"config", config_json(d.config)},
         {"verbs", verbs()},
         {"categories", cats},
         {"counts",
          {{"objects", d.objects.size()},
           {"records", d.records.size()},
           {"train_records", n_train},
           {"eval_records", d.records.size() - n_train}}},
         {"objects", objs},
         {"records", recs}};
  return m.dump(2) + "\n";
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "objects");
  std::filesystem::create_directories(dir / "records");
  for (const auto& o : d.objects) o.model.save(dir / object_file(o.id));
  for (const auto& r : d.records) {
    const auto bytes = encode_record(r);
    io::write_file(dir / record_file(r.id), bytes.data(), bytes.size());
  }
  const std::string m = manifest_json(d);
  io::write_file(dir / "manifest.json", m.data(), m.size());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw IoError("dataset manifest not found: " + path.string());
  json m;
  try {
    const auto raw = io::read_file(path);
    m = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  try {
    if (m.at("schema").get<std::string>() != kManifestSchema)
      throw IoError(path.string() + ": unsupported schema " + m.at("schema").dump());
    Dataset d;
    d.config = config_from(m.at("config"));
    d.hand_name = m.at("hand").get<std::string>();
    for (const auto& [c, v] : m.at("categories").items()) {
      d.attempts[c] = v.at("attempts").get<int>();
      d.failures[c] = v.at("failures").get<int>();
    }
    for (const auto& o : m.at("objects")) {
      ObjectEntry e;
      e.id = o.at("id").get<std::uint32_t>();
      e.category = o.at("category").get<std::string>();
      e.split = o.at("split").get<std::string>() == "eval" ? Split::eval : Split::train;
      e.cloud_seed = o.at("cloud_seed").get<std::uint64_t>();
      e.model = ObjectModel::load(dir / o.at("file").get<std::string>());
      d.objects.push_back(std::move(e));
    }
    for (const auto& r : m.at("records")) {
      const auto file = dir / r.at("file").get<std::string>();
      d.records.push_back(decode_record(io::read_file(file), file.string()));
    }
    return d;
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

const ObjectEntry& object_of(const Dataset& d, const GraspRecord& r) {
  for (const auto& o : d.objects)
    if (o.id == r.object_id) return o;
  throw ContractViolation("record " + std::to_string(r.id) + " names unknown object " + std::to_string(r.object_id));
}

std::vector<double> recompute_contact_map(const GraspRecord& r, const ObjectModel& obj, const HandModel& hand) {
  const auto cloud = obj.sample_surface(r.cloud_points, r.cloud_seed);
  const auto pose = GraspPose::from_vector(r.pose, hand.joint_count());
  return losses::contact_map(cloud.points, hand.forward(pose).points);
}

}  // namespace langgrasp::dataset
