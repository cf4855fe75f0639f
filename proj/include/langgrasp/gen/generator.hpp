#pragma once

// Two-component grasp generator: a conditional diffusion model over
// normalized poses (IDGC) and a residual refiner (QGC).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "langgrasp/ad/adam.hpp"
#include "langgrasp/dataset/dataset.hpp"
#include "langgrasp/gen/diffusion.hpp"
#include "langgrasp/gen/nn.hpp"
#include "langgrasp/hand/hand_model.hpp"
#include "langgrasp/losses/losses.hpp"

namespace langgrasp::gen {

using dataset::Dataset;
using dataset::Split;
using hand::GraspPose;
using hand::HandModel;
using hand::Vec3;
using object::ObjectModel;

// Pose layout (t, r6, q). t is divided by t_scale, r6 is kept, q is mapped
// from the fitted [q_lo, q_hi] range onto [-1, 1].
struct PoseNormalizer {
  double t_scale = 0.1;
  std::vector<double> q_lo, q_hi;

  // Fits the joint ranges on the given poses (meters, radians). Joints whose
  // range is degenerate fall back to the hand limits.
  static PoseNormalizer fit(const std::vector<std::vector<double>>& poses, const HandModel& hand);
  std::size_t dim() const { return 9 + q_lo.size(); }
  std::vector<double> normalize(std::span<const double> pose) const;
  std::vector<double> denormalize(std::span<const double> x) const;
  // Graph version on a (B, dim) batch.
  ad::Tensor denormalize(const ad::Tensor& x) const;
  // Per-coordinate meters (or radians) per normalized unit.
  std::vector<double> scale() const;
};

// Part tokens; "" is the no-contact token.
const std::vector<std::string>& part_vocabulary();
std::size_t verb_token(const std::string& verb);
std::size_t part_token(const std::string& part);

struct ModelConfig {
  std::size_t encoder_points = 64;  // object points seen by the encoders
  std::size_t loss_points = 128;    // object points used by penetration and contact losses
  std::size_t hand_points = 70;     // coarse hand points seen by the refiner
  std::size_t point_hidden = 64;
  std::size_t object_width = 128;
  std::size_t hand_width = 64;
  std::size_t verb_width = 16;
  std::size_t part_width = 12;
  std::size_t time_width = 32;
  std::size_t hidden = 256;
  std::size_t layers = 3;
  int diffusion_steps = 100;
  double beta_first = 1e-4;
  double beta_last = 0.02;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Object geometry in its own (centroid) frame, as consumed by the networks.
struct ObjectInputs {
  ObjectModel model;
  object::ObjectCloud cloud;  // full evaluation cloud
  std::vector<Vec3> encoder_points;
  std::vector<Vec3> loss_points;
};
ObjectInputs object_inputs(const ObjectModel& obj, std::uint64_t cloud_seed, std::size_t cloud_points,
                           const ModelConfig& cfg);

struct Condition {
  std::size_t object = 0;  // index into the object table
  std::string verb;
  std::vector<std::string> assignment;  // per finger
};

// Objects of a whole dataset plus the records of one split.
struct TrainingSet {
  std::vector<ObjectInputs> objects;   // parallel to Dataset::objects
  std::vector<Condition> conditions;   // per record
  std::vector<std::vector<double>> poses;
  std::vector<std::uint32_t> record_ids;
};
TrainingSet make_training_set(const Dataset& d, Split split, const ModelConfig& cfg);

struct Denoiser {
  ModelConfig cfg;
  PointEncoder object;
  ad::Tensor verb_table;  // (verbs, verb_width)
  ad::Tensor part_table;  // (parts, part_width)
  Mlp mlp;

  static Denoiser make(const ModelConfig& cfg, std::size_t pose_dim, std::size_t fingers, Rng& rng);
  ParamList params();
  std::size_t fingers() const;

  // (B, object_width) features of conds[i].object.
  ad::Tensor object_features(const std::vector<ObjectInputs>& objects, const std::vector<Condition>& conds) const;
  ad::Tensor guidance_features(const std::vector<Condition>& conds) const;
  ad::Tensor predict(const ad::Tensor& x_t, const std::vector<int>& steps, const ad::Tensor& object_feat,
                     const ad::Tensor& guidance_feat) const;
};

struct IdgcModel {
  DiffusionSchedule schedule;
  PoseNormalizer norm;
  Denoiser net;

  void save(const std::filesystem::path& path) const;
  static IdgcModel load(const std::filesystem::path& path);
  std::vector<unsigned char> to_bytes() const;
};

struct IdgcConfig {
  ModelConfig model;
  int epochs = 100;
  std::size_t batch = 64;
  double lambda_para = 10.0;
  double lambda_chamfer = 1.0;
  double lambda_pen = 0.0;
  // From this epoch on the penetration weight becomes lambda_pen_late (< 0: never).
  int pen_switch_epoch = -1;
  double lambda_pen_late = 0.0;
  ad::CosineSchedule lr;
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
  long max_steps = -1;  // stop early after this many optimizer steps (< 0: no limit)
};

struct TrainLog {
  std::vector<std::string> lines;  // one JSON object per epoch
  long steps = 0;
  long pen_evaluations = 0;  // batches on which the penetration loss was built
  std::vector<double> step_para;  // unweighted parameter loss per step
  std::vector<double> step_loss;
};

struct LossParts {
  double para = 0, chamfer = 0, pen = 0, cmap = 0, spen = 0, total = 0;
};

// Batch-mean IDGC objective for the given records, steps and noise (row-major
// (B, dim)). Evaluates the penetration term only when lambda_pen > 0.
ad::Tensor idgc_loss(const IdgcModel& m, const HandModel& hand, const TrainingSet& set,
                     const std::vector<std::size_t>& rows, const std::vector<int>& steps,
                     const std::vector<double>& noise, double lambda_para, double lambda_chamfer, double lambda_pen,
                     LossParts* parts = nullptr, long* pen_evaluations = nullptr);

// Throws NumericFault("idgc-train", ...) on a non-finite loss.
IdgcModel train_idgc(const HandModel& hand, const TrainingSet& set, const IdgcConfig& cfg, TrainLog* log = nullptr);

// n samples per condition in meters, row c * n + k. Deterministic in seed;
// the thread count does not change the result.
std::vector<std::vector<double>> idgc_sample(const IdgcModel& m, const std::vector<ObjectInputs>& objects,
                                             const std::vector<Condition>& conds, std::size_t n, std::uint64_t seed,
                                             int threads = 1);

// Index of the candidate hand cloud with the smallest chamfer distance to the
// query (lowest index on ties). Throws ContractViolation when empty.
std::size_t nearest_by_chamfer(const std::vector<Vec3>& query, const std::vector<const std::vector<Vec3>*>& candidates);

struct QgcPair {
  std::size_t object = 0;
  std::vector<double> coarse;  // meters
  std::vector<double> target;
  double chamfer = 0.0;
};

// Candidate group of a condition: records of the same object with the same
// verb and finger assignment.
std::vector<std::size_t> intent_group(const TrainingSet& set, const Condition& c);

// per_condition coarse samples for every record of the set, each matched to
// the nearest ground truth of its intent group. Empty groups are skipped and
// reported through `warnings`.
std::vector<QgcPair> qgc_build_pairs(const IdgcModel& m, const HandModel& hand, const TrainingSet& set,
                                     std::size_t per_condition, std::uint64_t seed, int threads = 1,
                                     std::vector<std::string>* warnings = nullptr);
// Same for explicit query conditions matched against the ground truth of `set`.
std::vector<QgcPair> qgc_build_pairs(const IdgcModel& m, const HandModel& hand, const TrainingSet& set,
                                     const std::vector<Condition>& queries, std::size_t per_condition,
                                     std::uint64_t seed, int threads = 1,
                                     std::vector<std::string>* warnings = nullptr);

struct Refiner {
  ModelConfig cfg;
  PointEncoder object;  // (x, y, z, hand distance) per object point
  PointEncoder hand;    // (x, y, z, object distance) per hand point
  Mlp mlp;              // zero-initialized output layer

  static Refiner make(const ModelConfig& cfg, std::size_t pose_dim, Rng& rng);
  ParamList params();
};

struct QgcModel {
  PoseNormalizer norm;
  Refiner net;

  void save(const std::filesystem::path& path) const;
  static QgcModel load(const std::filesystem::path& path);
  std::vector<unsigned char> to_bytes() const;
};

struct QgcConfig {
  ModelConfig model;
  int epochs = 20;
  std::size_t batch = 64;
  losses::LossWeights weights = losses::qgc_weights();
  ad::CosineSchedule lr{2.0e-4, 2.0e-5, 20};
  ad::AdamConfig adam;
  std::uint64_t seed = 0;
  long max_steps = -1;
};

// Refiner inputs derived from a coarse pose; constant during training.
struct RefinerInput {
  std::vector<double> pose;         // normalized coarse pose
  std::vector<double> object_feat;  // encoder_points * 4
  std::vector<double> hand_feat;    // hand_points * 4
};
RefinerInput refiner_input(const PoseNormalizer& norm, const HandModel& hand, const ObjectInputs& obj,
                           const std::vector<double>& coarse, const ModelConfig& cfg);

// Head output: the normalized residual (B, dim).
ad::Tensor refine_delta(const Refiner& net, const std::vector<const RefinerInput*>& inputs);

ad::Tensor qgc_loss(const QgcModel& m, const HandModel& hand, const std::vector<ObjectInputs>& objects,
                    const std::vector<QgcPair>& pairs, const std::vector<RefinerInput>& inputs,
                    const std::vector<std::size_t>& rows, const losses::LossWeights& w, LossParts* parts = nullptr);

QgcModel train_qgc(const HandModel& hand, const std::vector<ObjectInputs>& objects, const std::vector<QgcPair>& pairs,
                   const PoseNormalizer& norm, const QgcConfig& cfg, TrainLog* log = nullptr);

// Refines each coarse pose (meters) independently on objects[object_of[i]].
std::vector<std::vector<double>> qgc_refine(const QgcModel& m, const HandModel& hand,
                                            const std::vector<ObjectInputs>& objects,
                                            const std::vector<std::size_t>& object_of,
                                            const std::vector<std::vector<double>>& coarse, int threads = 1);

// IDGC samples refined by QGC; row c * n + k.
std::vector<std::vector<double>> generate(const IdgcModel& idgc, const QgcModel& qgc, const HandModel& hand,
                                          const std::vector<ObjectInputs>& objects,
                                          const std::vector<Condition>& conds, std::size_t n, std::uint64_t seed,
                                          int threads = 1);

}  // namespace langgrasp::gen
