#pragma once

// Hand-object grasp losses. Graph versions take batched tensors and return the
// sum over the batch of each sample's loss; callers wanting a batch mean scale
// by 1/B. Nearest-neighbour selection runs on plain values (lowest index wins
// ties) and the gradient flows through the selected points.

#include <cstddef>
#include <vector>

#include "langgrasp/ad/tensor.hpp"
#include "langgrasp/hand/hand_model.hpp"

namespace langgrasp::losses {

using ad::Tensor;
using hand::Vec3;

struct LossWeights {
  double para = 0, chamfer = 0, cmap = 0, pen = 0, spen = 0, joint = 0;
};

// Stage defaults: HOIR step 3, IDGC and QGC.
LossWeights hoir_refine_weights();
LossWeights idgc_weights();
LossWeights qgc_weights();

// (B, D) pose batches; per sample the mean of squared differences.
Tensor loss_para(const Tensor& pred, const Tensor& target);

// (B, N, 3) and (B, M, 3); per sample sum of squared nearest distances both ways.
Tensor loss_chamfer(const Tensor& a, const Tensor& b);

// (B, No, 3) object points, (B, Nh, 3) hand points -> (B, No) distances.
Tensor contact_map(const Tensor& object_points, const Tensor& hand_points);

// (B, No) maps; per sample sum of squared differences.
Tensor loss_cmap(const Tensor& pred, const Tensor& target);

// Object points (B, No, 3) against the posed capsule union; per sample
// sum of max(0, -sdf_hand).
Tensor loss_pen(const Tensor& object_points, const hand::HandModel& model, const hand::PosedHand& posed);

// Over ordered anchor pairs on non-adjacent links: max(delta - distance, 0).
Tensor loss_spen(const hand::HandModel& model, const hand::PosedHand& posed);

// (B, 9 + J) poses; per sample sum of limit violations.
Tensor loss_joint(const hand::HandModel& model, const Tensor& poses);

// Sum over fingers of squared fingertip error; targets (B, F, 3).
Tensor loss_fingertip(const hand::PosedHand& posed, const Tensor& targets);

// Plain evaluations for metrics and oracles.
std::vector<std::size_t> nearest_indices(const std::vector<Vec3>& from, const std::vector<Vec3>& to);
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);
std::vector<double> contact_map(const std::vector<Vec3>& object_points, const std::vector<Vec3>& hand_points);
double cmap_distance(const std::vector<double>& a, const std::vector<double>& b);
// Signed distance to the posed capsule union, positive outside.
double hand_sdf(const hand::HandCloud& hand, const Vec3& x);
// Deepest object point inside the hand, meters (0 if none).
double max_penetration(const std::vector<Vec3>& object_points, const hand::HandCloud& hand);
double self_penetration(const hand::HandModel& model, const hand::HandCloud& hand);

// Stacks B copies of a point set into a (B, N, 3) constant.
Tensor stack_points(const std::vector<const std::vector<Vec3>*>& sets);
std::vector<Vec3> points_of(const Tensor& batch, std::size_t b);

}  // namespace langgrasp::losses
