#include "langgrasp/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "langgrasp/error.hpp"

namespace langgrasp::losses {

namespace {

void require_points(const Tensor& x, const char* what) {
  LANGGRASP_REQUIRE(x.rank() == 3 && x.dim(2) == 3, std::string(what) + ": expected (B, N, 3), got " + ad::to_string(x.shape()));
  LANGGRASP_REQUIRE(x.dim(1) > 0, std::string(what) + ": empty point set");
}

double sq_dist(const double* p, const double* q) {
  const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
  return dx * dx + dy * dy + dz * dz;
}

// For every point of a[b], flat index (b * M + j) of its nearest point in b[b].
std::vector<std::size_t> batched_nearest(const Tensor& a, const Tensor& b) {
  const std::size_t nb = a.dim(0), n = a.dim(1), m = b.dim(1);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<std::size_t> out(nb * n);
  for (std::size_t s = 0; s < nb; ++s)
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = av + 3 * (s * n + i);
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = sq_dist(p, bv + 3 * (s * m + j));
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      out[s * n + i] = s * m + arg;
    }
  return out;
}

// Sum over points of squared distance to the selected partner.
Tensor directed(const Tensor& a, const Tensor& b) {
  const auto idx = batched_nearest(a, b);
  const Tensor af = ad::reshape(a, {a.dim(0) * a.dim(1), 3});
  const Tensor bf = ad::reshape(b, {b.dim(0) * b.dim(1), 3});
  return ad::sum(ad::square(af - ad::gather(bf, 0, idx)));
}

double segment_distance(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 d = b - a;
  const double l2 = d.squaredNorm();
  const double s = l2 > 0 ? std::clamp((x - a).dot(d) / l2, 0.0, 1.0) : 0.0;
  return (x - a - s * d).norm();
}

}  // namespace

LossWeights hoir_refine_weights() { return {.para = 0, .chamfer = 0, .cmap = 10, .pen = 100, .spen = 10, .joint = 10}; }
LossWeights idgc_weights() { return {.para = 10, .chamfer = 1, .cmap = 0, .pen = 0, .spen = 0, .joint = 0}; }
LossWeights qgc_weights() { return {.para = 10, .chamfer = 1, .cmap = 10, .pen = 100, .spen = 10, .joint = 0}; }

Tensor loss_para(const Tensor& pred, const Tensor& target) {
  LANGGRASP_REQUIRE(pred.shape() == target.shape() && pred.rank() == 2,
                    "loss_para: shapes " + ad::to_string(pred.shape()) + " and " + ad::to_string(target.shape()));
  return ad::sum(ad::square(pred - target)) * (1.0 / static_cast<double>(pred.dim(1)));
}

Tensor loss_chamfer(const Tensor& a, const Tensor& b) {
  require_points(a, "loss_chamfer");
  require_points(b, "loss_chamfer");
  LANGGRASP_REQUIRE(a.dim(0) == b.dim(0), "loss_chamfer: batch mismatch");
  return directed(a, b) + directed(b, a);
}

Tensor contact_map(const Tensor& object_points, const Tensor& hand_points) {
  require_points(object_points, "contact_map");
  require_points(hand_points, "contact_map");
  LANGGRASP_REQUIRE(object_points.dim(0) == hand_points.dim(0), "contact_map: batch mismatch");
  const std::size_t nb = object_points.dim(0), no = object_points.dim(1);
  const auto idx = batched_nearest(object_points, hand_points);
  const Tensor hf = ad::reshape(hand_points, {nb * hand_points.dim(1), 3});
  const Tensor of = ad::reshape(object_points, {nb * no, 3});
  return ad::reshape(ad::sqrt(ad::sum(ad::square(of - ad::gather(hf, 0, idx)), 1)), {nb, no});
}

Tensor loss_cmap(const Tensor& pred, const Tensor& target) {
  LANGGRASP_REQUIRE(pred.shape() == target.shape(),
                    "loss_cmap: length mismatch " + ad::to_string(pred.shape()) + " vs " + ad::to_string(target.shape()));
  return ad::sum(ad::square(pred - target));
}

Tensor loss_pen(const Tensor& object_points, const hand::HandModel& model, const hand::PosedHand& posed) {
  require_points(object_points, "loss_pen");
  const std::size_t nb = object_points.dim(0), no = object_points.dim(1), nc = model.capsule_count();
  LANGGRASP_REQUIRE(posed.seg_a.dim(0) == nb, "loss_pen: batch mismatch");
  const double* ov = object_points.values().data();
  const double* av = posed.seg_a.values().data();
  const double* bv = posed.seg_b.values().data();
  const auto& radius = model.capsule_radius();

  std::vector<double> pts, inv_len2, rad;
  std::vector<std::size_t> cap;
  for (std::size_t s = 0; s < nb; ++s)
    for (std::size_t i = 0; i < no; ++i) {
      const Vec3 x(ov + 3 * (s * no + i));
      double best = 0.0;
      std::size_t arg = nc;
      for (std::size_t c = 0; c < nc; ++c) {
        const double d = segment_distance(x, Vec3(av + 3 * (s * nc + c)), Vec3(bv + 3 * (s * nc + c))) - radius[c];
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (arg == nc) continue;
      pts.insert(pts.end(), {x.x(), x.y(), x.z()});
      cap.push_back(s * nc + arg);
      const double l2 = (Vec3(bv + 3 * (s * nc + arg)) - Vec3(av + 3 * (s * nc + arg))).squaredNorm();
      inv_len2.push_back(l2 > 0 ? 1.0 / l2 : 0.0);
      rad.push_back(radius[arg]);
    }
  if (cap.empty()) return Tensor::scalar(0.0);
  const std::size_t k = cap.size();
  const Tensor p = Tensor::from({k, 3}, std::move(pts));
  const Tensor a = ad::gather(ad::reshape(posed.seg_a, {nb * nc, 3}), 0, cap);
  const Tensor b = ad::gather(ad::reshape(posed.seg_b, {nb * nc, 3}), 0, cap);
  const Tensor d = b - a;
  const Tensor s = ad::clamp(ad::sum((p - a) * d, 1, true) * Tensor::from({k, 1}, std::move(inv_len2)), 0.0, 1.0);
  const Tensor dist = ad::sqrt(ad::sum(ad::square(p - a - s * d), 1));
  return ad::sum(ad::relu(Tensor::from({k}, std::move(rad)) - dist));
}

Tensor loss_spen(const hand::HandModel& model, const hand::PosedHand& posed) {
  const auto& pairs = model.self_pairs();
  if (pairs.empty()) return Tensor::scalar(0.0);
  std::vector<std::size_t> ii, jj;
  std::vector<double> delta;
  for (const auto& p : pairs) {
    ii.push_back(p.i);
    jj.push_back(p.j);
    delta.push_back(p.delta);
  }
  const Tensor diff = ad::gather(posed.anchors, 1, ii) - ad::gather(posed.anchors, 1, jj);
  const Tensor dist = ad::sqrt(ad::sum(ad::square(diff), 2));
  return ad::sum(ad::relu(Tensor::from({pairs.size()}, std::move(delta)) - dist)) * 2.0;
}

Tensor loss_joint(const hand::HandModel& model, const Tensor& poses) {
  LANGGRASP_REQUIRE(poses.rank() == 2 && poses.dim(1) == model.pose_dim(), "loss_joint: pose batch has wrong shape");
  const std::size_t j = model.joint_count();
  const Tensor q = ad::slice(poses, 1, 9, 9 + j);
  const Tensor lo = Tensor::from({1, j}, model.lower());
  const Tensor hi = Tensor::from({1, j}, model.upper());
  return ad::sum(ad::relu(q - hi) + ad::relu(lo - q));
}

Tensor loss_fingertip(const hand::PosedHand& posed, const Tensor& targets) {
  LANGGRASP_REQUIRE(posed.fingertips.shape() == targets.shape(), "loss_fingertip: target shape mismatch");
  return ad::sum(ad::square(posed.fingertips - targets));
}

std::vector<std::size_t> nearest_indices(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  LANGGRASP_REQUIRE(!from.empty() && !to.empty(), "nearest_indices: empty point set");
  std::vector<std::size_t> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < to.size(); ++j) {
      const double d = sq_dist(from[i].data(), to[j].data());
      if (d < best) {
        best = d;
        out[i] = j;
      }
    }
  }
  return out;
}

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  LANGGRASP_REQUIRE(!a.empty() && !b.empty(), "chamfer: empty point set");
  double ab = 0, ba = 0;
  const auto na = nearest_indices(a, b), nb = nearest_indices(b, a);
  for (std::size_t i = 0; i < a.size(); ++i) ab += sq_dist(a[i].data(), b[na[i]].data());
  for (std::size_t j = 0; j < b.size(); ++j) ba += sq_dist(b[j].data(), a[nb[j]].data());
  return ab + ba;
}

std::vector<double> contact_map(const std::vector<Vec3>& object_points, const std::vector<Vec3>& hand_points) {
  const auto idx = nearest_indices(object_points, hand_points);
  std::vector<double> out(object_points.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(sq_dist(object_points[i].data(), hand_points[idx[i]].data()));
  return out;
}

double cmap_distance(const std::vector<double>& a, const std::vector<double>& b) {
  LANGGRASP_REQUIRE(a.size() == b.size(), "cmap_distance: length mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

double hand_sdf(const hand::HandCloud& hand, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : hand.capsules) best = std::min(best, segment_distance(x, c.a, c.b) - c.radius);
  return best;
}

double max_penetration(const std::vector<Vec3>& object_points, const hand::HandCloud& hand) {
  double worst = 0;
  for (const auto& x : object_points) worst = std::max(worst, -hand_sdf(hand, x));
  return worst;
}

double self_penetration(const hand::HandModel& model, const hand::HandCloud& hand) {
  double s = 0;
  for (const auto& p : model.self_pairs()) s += std::max(0.0, p.delta - (hand.anchors[p.i] - hand.anchors[p.j]).norm());
  return 2 * s;
}

Tensor stack_points(const std::vector<const std::vector<Vec3>*>& sets) {
  LANGGRASP_REQUIRE(!sets.empty(), "stack_points: no point sets");
  const std::size_t n = sets[0]->size();
  std::vector<double> v;
  v.reserve(sets.size() * n * 3);
  for (const auto* s : sets) {
    LANGGRASP_REQUIRE(s->size() == n, "stack_points: point sets differ in size");
    for (const auto& p : *s) v.insert(v.end(), {p.x(), p.y(), p.z()});
  }
  return Tensor::from({sets.size(), n, 3}, std::move(v));
}

std::vector<Vec3> points_of(const Tensor& batch, std::size_t b) {
  const std::size_t n = batch.dim(1);
  std::vector<Vec3> out(n);
  const double* v = batch.values().data() + 3 * n * b;
  for (std::size_t i = 0; i < n; ++i) out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

}  // namespace langgrasp::losses
