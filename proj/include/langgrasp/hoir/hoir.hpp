#pragma once

// Three-step retargeting of a source grasp onto the dexterous hand: copy the
// wrist, align fingertips, then refine interaction with the object.

#include <string>
#include <vector>

#include "langgrasp/hand/hand_model.hpp"
#include "langgrasp/losses/losses.hpp"
#include "langgrasp/rng.hpp"

namespace langgrasp::hoir {

using hand::GraspPose;
using hand::HandModel;
using hand::Mat3;
using hand::Vec3;

struct SourceGraspSpec {
  std::vector<Vec3> fingertips;  // world frame, one per finger
  Mat3 wrist_rotation = Mat3::Identity();
  Vec3 wrist_translation = Vec3::Zero();
  std::vector<std::string> parts;  // per finger target part, may be empty
};

struct HoirConfig {
  int align_steps = 20;
  double align_lr = 0.01;
  int refine_steps = 300;
  double refine_lr = 1e-4;
  losses::LossWeights refine_weights = losses::hoir_refine_weights();
  double early_exit_residual = 1e-6;  // meters
  // Fault when the objective exceeds factor * max(initial, floor).
  double divergence_factor = 10.0;
  double divergence_floor = 1e-6;
  // Optimizers see t / translation_scale so one Adam step moves all pose
  // coordinates by comparable distances.
  double translation_scale = 0.1;
};

struct RetargetReport {
  std::vector<double> align_losses;   // entry k is the objective after k steps
  std::vector<double> refine_losses;
  GraspPose final_pose;
  double fingertip_residual = 0.0;  // RMS over fingers, meters
  double max_penetration = 0.0;     // meters
  double cmap_drift = 0.0;          // contact-map distance to the step-2 map
};

struct RetargetResult {
  GraspPose pose;
  RetargetReport report;
};

void validate(const HandModel& hand, const SourceGraspSpec& spec);

GraspPose step1_initialize(const HandModel& hand, const SourceGraspSpec& spec);

// Adam on the summed squared fingertip error. Fills `history` when given.
GraspPose step2_fingertip_align(const HandModel& hand, const SourceGraspSpec& spec, const GraspPose& init,
                                const HoirConfig& cfg = {}, std::vector<double>* history = nullptr);

// Adam on the weighted penetration, self-penetration, joint and contact-map
// terms with the translation held fixed. The contact-map target is pose2's map.
RetargetResult step3_interaction_refine(const HandModel& hand, const std::vector<Vec3>& object_points,
                                        const GraspPose& pose2, const HoirConfig& cfg = {});

RetargetResult retarget(const HandModel& hand, const std::vector<Vec3>& object_points, const SourceGraspSpec& spec,
                        const HoirConfig& cfg = {});

double fingertip_residual(const HandModel& hand, const GraspPose& pose, const SourceGraspSpec& spec);

// Pipeline variants compared in the retargeting ablation.
enum class Variant { step1, step1_2, full, all_in_one, free_translation };
const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);

// all_in_one: one objective (fingertip plus the refinement terms, contact target
// taken from the step-1 pose) run over both step schedules with a free
// translation. free_translation: the full pipeline with t optimized in step 3.
GraspPose run_variant(const HandModel& hand, const std::vector<Vec3>& object_points, const SourceGraspSpec& spec,
                      Variant v, const HoirConfig& cfg = {});

// A spec built from a hidden hand pose placed against the object.
struct ConstructedCase {
  SourceGraspSpec spec;
  GraspPose hidden;
};

struct ConstructOptions {
  double penetration = 0.0;     // target max penetration of the hidden pose, meters
  // Hidden joints sit at mid-range +- a magnitude drawn from [q_min, q_max].
  double q_min = 0.05;
  double q_max = 0.15;
  // Spec wrist error: rotation about a random axis by an angle in
  // [angle_min, angle_max]; per-axis translation error with magnitude in
  // [offset_min, offset_max] meters.
  double angle_min = 0.02, angle_max = 0.08;
  double offset_min = 0.003, offset_max = 0.01;
  double clearance = 0.004;     // contact gap used when penetration == 0
};

// Places a hand with its palm toward the object along a random direction, then
// slides it along that direction until the requested penetration (or clearance)
// is met. Throws NumericFault if no placement is found.
ConstructedCase construct_case(const HandModel& hand, const std::vector<Vec3>& object_points, Rng& rng,
                               const ConstructOptions& opt = {});

// Seeded benchmark: catalog objects (cycling through the categories) with a
// constructed case each whose hidden pose penetrates between 1 and 5 mm.
struct BenchmarkCase {
  std::string category;
  std::vector<Vec3> object_points;
  ConstructedCase c;
};
std::vector<BenchmarkCase> benchmark_cases(const HandModel& hand, std::size_t n, std::uint64_t seed,
                                           std::size_t object_points = 512);

}  // namespace langgrasp::hoir
