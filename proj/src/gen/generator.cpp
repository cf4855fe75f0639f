#include "langgrasp/gen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>

#include "langgrasp/error.hpp"
#include "langgrasp/parallel.hpp"

namespace langgrasp::gen {

using ad::Tensor;
using nlohmann::json;

namespace {

constexpr double kPointScale = 0.1;    // meters -> encoder units
constexpr double kFeatureDist = 0.01;  // meters per unit of signed-distance features
constexpr std::size_t kChunk = 64;     // rows per sampling / refinement batch

double clamp_unit(double x) { return std::clamp(x, -2.0, 2.0); }

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), d}, std::move(v));
}

Tensor points_tensor(const std::vector<const std::vector<Vec3>*>& sets, double scale) {
  const std::size_t n = sets.front()->size();
  std::vector<double> v;
  v.reserve(sets.size() * n * 3);
  for (const auto* s : sets) {
    LANGGRASP_REQUIRE(s->size() == n, "point batch: ragged point sets");
    for (const auto& p : *s) v.insert(v.end(), {p.x() * scale, p.y() * scale, p.z() * scale});
  }
  return Tensor::from({sets.size(), n, 3}, std::move(v));
}

Tensor features_tensor(const std::vector<const std::vector<double>*>& feats, std::size_t width) {
  const std::size_t n = feats.front()->size() / width;
  std::vector<double> v;
  v.reserve(feats.size() * n * width);
  for (const auto* f : feats) v.insert(v.end(), f->begin(), f->end());
  return Tensor::from({feats.size(), n, width}, std::move(v));
}

std::vector<Vec3> strided(const std::vector<Vec3>& pts, std::size_t n) {
  LANGGRASP_REQUIRE(n >= 1 && pts.size() >= n, "point subsample: need " + std::to_string(n) + " of " +
                                                   std::to_string(pts.size()) + " points");
  const std::size_t stride = pts.size() / n;
  std::vector<Vec3> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = pts[i * stride];
  return out;
}

std::vector<std::vector<double>> split_rows(std::span<const double> flat, std::size_t d) {
  std::vector<std::vector<double>> out(flat.size() / d);
  for (std::size_t r = 0; r < out.size(); ++r) out[r].assign(flat.begin() + r * d, flat.begin() + (r + 1) * d);
  return out;
}

Tensor hand_points_const(const HandModel& hand, const std::vector<std::vector<double>>& poses) {
  ad::NoGradGuard ng;
  return hand.forward(rows_tensor(poses)).points;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::string fmt_parts(const LossParts& p) {
  std::ostringstream s;
  s.precision(6);
  s << "total=" << p.total << " para=" << p.para << " chamfer=" << p.chamfer << " pen=" << p.pen
    << " cmap=" << p.cmap << " spen=" << p.spen;
  return s.str();
}

json parts_json(const LossParts& p) {
  return {{"loss", p.total}, {"para", p.para}, {"chamfer", p.chamfer}, {"pen", p.pen}, {"cmap", p.cmap}, {"spen", p.spen}};
}

void accumulate(LossParts& acc, const LossParts& p) {
  acc.para += p.para;
  acc.chamfer += p.chamfer;
  acc.pen += p.pen;
  acc.cmap += p.cmap;
  acc.spen += p.spen;
  acc.total += p.total;
}

LossParts averaged(LossParts p, double n) {
  if (n <= 0) return p;
  for (double* x : {&p.para, &p.chamfer, &p.pen, &p.cmap, &p.spen, &p.total}) *x /= n;
  return p;
}

void write_norm(io::Writer& w, const PoseNormalizer& n) {
  w.f64(n.t_scale);
  w.f64s(n.q_lo);
  w.f64s(n.q_hi);
}

PoseNormalizer read_norm(io::Reader& r) {
  PoseNormalizer n;
  n.t_scale = r.f64();
  n.q_lo = r.f64s();
  n.q_hi = r.f64s();
  if (n.q_lo.size() != n.q_hi.size() || !(n.t_scale > 0)) throw IoError("checkpoint: malformed pose normalizer");
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pose normalization

PoseNormalizer PoseNormalizer::fit(const std::vector<std::vector<double>>& poses, const HandModel& hand) {
  const std::size_t j = hand.joint_count();
  PoseNormalizer n;
  n.q_lo.assign(j, std::numeric_limits<double>::infinity());
  n.q_hi.assign(j, -std::numeric_limits<double>::infinity());
  for (const auto& p : poses) {
    LANGGRASP_REQUIRE(p.size() == 9 + j, "normalizer: pose size mismatch");
    for (std::size_t k = 0; k < j; ++k) {
      n.q_lo[k] = std::min(n.q_lo[k], p[9 + k]);
      n.q_hi[k] = std::max(n.q_hi[k], p[9 + k]);
    }
  }
  for (std::size_t k = 0; k < j; ++k)
    if (!(n.q_hi[k] - n.q_lo[k] > 1e-6)) {
      n.q_lo[k] = hand.lower()[k];
      n.q_hi[k] = hand.upper()[k];
    }
  return n;
}

std::vector<double> PoseNormalizer::normalize(std::span<const double> pose) const {
  LANGGRASP_REQUIRE(pose.size() == dim(), "normalize: pose size mismatch");
  std::vector<double> x(pose.begin(), pose.end());
  for (int i = 0; i < 3; ++i) x[i] = pose[i] / t_scale;
  for (std::size_t k = 0; k < q_lo.size(); ++k) {
    const double half = 0.5 * (q_hi[k] - q_lo[k]), mid = q_lo[k] + half;
    x[9 + k] = (pose[9 + k] - mid) / half;
  }
  return x;
}

std::vector<double> PoseNormalizer::denormalize(std::span<const double> x) const {
  LANGGRASP_REQUIRE(x.size() == dim(), "denormalize: size mismatch");
  std::vector<double> p(x.begin(), x.end());
  for (int i = 0; i < 3; ++i) p[i] = x[i] * t_scale;
  for (std::size_t k = 0; k < q_lo.size(); ++k) {
    const double half = 0.5 * (q_hi[k] - q_lo[k]), mid = q_lo[k] + half;
    p[9 + k] = x[9 + k] * half + mid;
  }
  return p;
}

std::vector<double> PoseNormalizer::scale() const {
  std::vector<double> s(dim(), 1.0);
  for (int i = 0; i < 3; ++i) s[i] = t_scale;
  for (std::size_t k = 0; k < q_lo.size(); ++k) s[9 + k] = 0.5 * (q_hi[k] - q_lo[k]);
  return s;
}

Tensor PoseNormalizer::denormalize(const Tensor& x) const {
  LANGGRASP_REQUIRE(x.rank() == 2 && x.dim(1) == dim(), "denormalize: expected (B, " + std::to_string(dim()) + ")");
  std::vector<double> scale(dim(), 1.0), offset(dim(), 0.0);
  for (int i = 0; i < 3; ++i) scale[i] = t_scale;
  for (std::size_t k = 0; k < q_lo.size(); ++k) {
    scale[9 + k] = 0.5 * (q_hi[k] - q_lo[k]);
    offset[9 + k] = q_lo[k] + scale[9 + k];
  }
  return x * Tensor::from({1, dim()}, std::move(scale)) + Tensor::from({1, dim()}, std::move(offset));
}

// ---------------------------------------------------------------------------
// Tokens and inputs

const std::vector<std::string>& part_vocabulary() {
  static const std::vector<std::string> v{"", "body", "cap", "handle", "trigger"};
  return v;
}

std::size_t verb_token(const std::string& verb) {
  const auto& v = dataset::verbs();
  auto it = std::find(v.begin(), v.end(), verb);
  if (it == v.end()) throw ContractViolation("unknown verb '" + verb + "'");
  return static_cast<std::size_t>(it - v.begin());
}

std::size_t part_token(const std::string& part) {
  const auto& v = part_vocabulary();
  auto it = std::find(v.begin(), v.end(), part);
  if (it == v.end()) throw ContractViolation("unknown part '" + part + "'");
  return static_cast<std::size_t>(it - v.begin());
}

std::string ModelConfig::to_json() const {
  json j{{"encoder_points", encoder_points}, {"loss_points", loss_points}, {"hand_points", hand_points},
         {"point_hidden", point_hidden},     {"object_width", object_width}, {"hand_width", hand_width},
         {"verb_width", verb_width},         {"part_width", part_width},     {"time_width", time_width},
         {"hidden", hidden},                 {"layers", layers},             {"diffusion_steps", diffusion_steps},
         {"beta_first", beta_first},         {"beta_last", beta_last}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.encoder_points = j.at("encoder_points");
    c.loss_points = j.at("loss_points");
    c.hand_points = j.at("hand_points");
    c.point_hidden = j.at("point_hidden");
    c.object_width = j.at("object_width");
    c.hand_width = j.at("hand_width");
    c.verb_width = j.at("verb_width");
    c.part_width = j.at("part_width");
    c.time_width = j.at("time_width");
    c.hidden = j.at("hidden");
    c.layers = j.at("layers");
    c.diffusion_steps = j.at("diffusion_steps");
    c.beta_first = j.at("beta_first");
    c.beta_last = j.at("beta_last");
  } catch (const json::exception& e) {
    throw IoError(std::string("model config: ") + e.what());
  }
  return c;
}

ObjectInputs object_inputs(const ObjectModel& obj, std::uint64_t cloud_seed, std::size_t cloud_points,
                           const ModelConfig& cfg) {
  const object::ObjectCloud cloud = obj.sample_surface(cloud_points, cloud_seed);
  ObjectInputs in{obj, cloud, strided(cloud.points, cfg.encoder_points), strided(cloud.points, cfg.loss_points)};
  return in;
}

TrainingSet make_training_set(const Dataset& d, Split split, const ModelConfig& cfg) {
  TrainingSet set;
  std::map<std::uint32_t, std::size_t> index;
  for (const auto& e : d.objects) {
    index[e.id] = set.objects.size();
    set.objects.push_back(object_inputs(e.model, e.cloud_seed, static_cast<std::size_t>(d.config.cloud_points), cfg));
  }
  for (const auto& r : d.records) {
    if (r.split != split) continue;
    auto it = index.find(r.object_id);
    if (it == index.end()) throw IoError("record " + std::to_string(r.id) + " names a missing object");
    set.conditions.push_back({it->second, r.guidance.verb, r.guidance.assignment});
    set.poses.push_back(r.pose);
    set.record_ids.push_back(r.id);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Denoiser

Denoiser Denoiser::make(const ModelConfig& cfg, std::size_t pose_dim, std::size_t fingers, Rng& rng) {
  Denoiser d;
  d.cfg = cfg;
  d.object = PointEncoder::make(3, cfg.point_hidden, cfg.object_width, rng);
  auto table = [&](std::size_t rows, std::size_t width) {
    std::vector<double> v(rows * width);
    for (auto& x : v) x = rng.normal();
    return Tensor::from({rows, width}, std::move(v), true);
  };
  d.verb_table = table(dataset::verbs().size(), cfg.verb_width);
  d.part_table = table(part_vocabulary().size(), cfg.part_width);
  std::vector<std::size_t> widths{pose_dim + cfg.time_width + cfg.object_width + cfg.verb_width + fingers * cfg.part_width};
  for (std::size_t i = 0; i < cfg.layers; ++i) widths.push_back(cfg.hidden);
  widths.push_back(pose_dim);
  d.mlp = Mlp::make(widths, rng);
  return d;
}

ParamList Denoiser::params() {
  ParamList p;
  p.add("object", object.mlp);
  p.add("verb_table", verb_table);
  p.add("part_table", part_table);
  p.add("mlp", mlp);
  return p;
}

std::size_t Denoiser::fingers() const {
  const std::size_t rest = mlp.in_width() - mlp.out_width() - cfg.time_width - cfg.object_width - cfg.verb_width;
  return rest / cfg.part_width;
}

Tensor Denoiser::object_features(const std::vector<ObjectInputs>& objects, const std::vector<Condition>& conds) const {
  std::vector<std::size_t> unique, slot(conds.size());
  std::map<std::size_t, std::size_t> seen;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    LANGGRASP_REQUIRE(conds[i].object < objects.size(), "condition names a missing object");
    auto [it, fresh] = seen.emplace(conds[i].object, unique.size());
    if (fresh) unique.push_back(conds[i].object);
    slot[i] = it->second;
  }
  std::vector<const std::vector<Vec3>*> sets;
  for (auto u : unique) sets.push_back(&objects[u].encoder_points);
  const Tensor feat = object(points_tensor(sets, 1.0 / kPointScale));
  return ad::gather(feat, 0, slot);
}

Tensor Denoiser::guidance_features(const std::vector<Condition>& conds) const {
  const std::size_t f = fingers();
  std::vector<std::size_t> verbs, parts;
  for (const auto& c : conds) {
    LANGGRASP_REQUIRE(c.assignment.size() == f, "condition: expected one part per finger");
    verbs.push_back(verb_token(c.verb));
    for (const auto& p : c.assignment) parts.push_back(part_token(p));
  }
  const Tensor v = ad::gather(verb_table, 0, verbs);
  const Tensor p = ad::reshape(ad::gather(part_table, 0, parts), {conds.size(), f * cfg.part_width});
  return ad::concat({v, p}, 1);
}

Tensor Denoiser::predict(const Tensor& x_t, const std::vector<int>& steps, const Tensor& object_feat,
                         const Tensor& guidance_feat) const {
  return mlp(ad::concat({x_t, time_embedding(steps, cfg.time_width), object_feat, guidance_feat}, 1));
}

// ---------------------------------------------------------------------------
// IDGC

std::vector<unsigned char> IdgcModel::to_bytes() const {
  io::Writer w(io::Kind::checkpoint);
  w.str("idgc");
  w.str(net.cfg.to_json());
  w.f64s(schedule.beta);
  write_norm(w, norm);
  w.u32(static_cast<std::uint32_t>(net.fingers()));
  const_cast<Denoiser&>(net).params().write(w);
  return w.bytes();
}

void IdgcModel::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  io::write_file(path, bytes.data(), bytes.size());
}

IdgcModel IdgcModel::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::open(path, io::Kind::checkpoint);
  if (r.str() != "idgc") throw IoError(path.string() + ": not an IDGC checkpoint");
  const ModelConfig cfg = ModelConfig::from_json(r.str());
  std::vector<double> betas = r.f64s();
  IdgcModel m;
  try {
    m.schedule = DiffusionSchedule::from_betas(std::move(betas));
  } catch (const ContractViolation& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  m.norm = read_norm(r);
  const std::uint32_t fingers = r.u32();
  Rng rng(0);
  m.net = Denoiser::make(cfg, m.norm.dim(), fingers, rng);
  auto params = m.net.params();
  params.read(r);
  r.finish();
  return m;
}

Tensor idgc_loss(const IdgcModel& m, const HandModel& hand, const TrainingSet& set, const std::vector<std::size_t>& rows,
                 const std::vector<int>& steps, const std::vector<double>& noise, double lambda_para,
                 double lambda_chamfer, double lambda_pen, LossParts* parts, long* pen_evaluations) {
  const std::size_t b = rows.size(), d = m.norm.dim();
  LANGGRASP_REQUIRE(b > 0 && steps.size() == b && noise.size() == b * d, "idgc_loss: batch shape mismatch");
  std::vector<std::vector<double>> x0(b), gt(b);
  std::vector<double> xt(b * d);
  std::vector<Condition> conds;
  for (std::size_t i = 0; i < b; ++i) {
    gt[i] = set.poses.at(rows[i]);
    x0[i] = m.norm.normalize(gt[i]);
    const auto x = forward_diffuse(m.schedule, x0[i], steps[i], std::span<const double>(noise).subspan(i * d, d));
    std::copy(x.begin(), x.end(), xt.begin() + i * d);
    conds.push_back(set.conditions.at(rows[i]));
  }
  const Tensor pred = m.net.predict(Tensor::from({b, d}, std::move(xt)), steps, m.net.object_features(set.objects, conds),
                                    m.net.guidance_features(conds));
  const double inv_b = 1.0 / static_cast<double>(b);
  const Tensor para = losses::loss_para(pred, rows_tensor(x0)) * inv_b;
  const hand::PosedHand posed = hand.forward(m.norm.denormalize(pred));
  const Tensor cham = losses::loss_chamfer(posed.points, hand_points_const(hand, gt)) * inv_b;
  Tensor total = para * lambda_para + cham * lambda_chamfer;
  LossParts p{.para = para.item(), .chamfer = cham.item()};
  if (lambda_pen > 0.0) {
    std::vector<const std::vector<Vec3>*> sets;
    for (const auto& c : conds) sets.push_back(&set.objects[c.object].loss_points);
    const Tensor pen = losses::loss_pen(losses::stack_points(sets), hand, posed) * inv_b;
    total = total + pen * lambda_pen;
    p.pen = pen.item();
    if (pen_evaluations) ++*pen_evaluations;
  }
  p.total = total.item();
  if (parts) *parts = p;
  return total;
}

IdgcModel train_idgc(const HandModel& hand, const TrainingSet& set, const IdgcConfig& cfg, TrainLog* log) {
  LANGGRASP_REQUIRE(!set.poses.empty(), "train_idgc: empty training set");
  LANGGRASP_REQUIRE(cfg.epochs >= 1 && cfg.batch >= 1, "train_idgc: epochs and batch must be positive");
  const Rng root(cfg.seed);
  Rng init = root.stream("init");
  IdgcModel m;
  m.schedule = DiffusionSchedule::linear(cfg.model.diffusion_steps, cfg.model.beta_first, cfg.model.beta_last);
  m.norm = PoseNormalizer::fit(set.poses, hand);
  m.net = Denoiser::make(cfg.model, m.norm.dim(), hand.finger_count(), init);
  ad::Adam opt(m.net.params().handles(), cfg.adam);
  ad::CosineSchedule lr = cfg.lr;
  lr.total_epochs = cfg.epochs;

  const std::size_t d = m.norm.dim();
  const int t_max = m.schedule.steps();
  long step = 0;
  TrainLog local;
  TrainLog& out = log ? *log : local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lambda_pen = cfg.pen_switch_epoch >= 0 && epoch >= cfg.pen_switch_epoch ? cfg.lambda_pen_late : cfg.lambda_pen;
    const double rate = lr.at(epoch);
    const auto order = shuffled(set.poses.size(), root.stream("epoch").stream(static_cast<std::uint64_t>(epoch)));
    LossParts sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      if (cfg.max_steps >= 0 && step >= cfg.max_steps) break;
      const std::vector<std::size_t> rows(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch));
      Rng srng = root.stream("step").stream(static_cast<std::uint64_t>(step));
      std::vector<int> steps(rows.size());
      for (auto& t : steps) t = 1 + static_cast<int>(srng.below(static_cast<std::uint64_t>(t_max)));
      std::vector<double> noise(rows.size() * d);
      for (auto& z : noise) z = srng.normal();
      LossParts parts;
      const Tensor loss =
          idgc_loss(m, hand, set, rows, steps, noise, cfg.lambda_para, cfg.lambda_chamfer, lambda_pen, &parts, &out.pen_evaluations);
      if (!std::isfinite(parts.total))
        throw NumericFault("idgc-train", "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                             std::to_string(step) + " (" + fmt_parts(parts) + ")");
      try {
        ad::backward(loss);
      } catch (const NumericFault& e) {
        throw NumericFault("idgc-train", "epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
      opt.step(rate);
      opt.zero_grad();
      out.step_para.push_back(parts.para);
      out.step_loss.push_back(parts.total);
      accumulate(sum, parts);
      ++batches;
      ++step;
    }
    if (batches == 0) break;
    json line = parts_json(averaged(sum, batches));
    line["epoch"] = epoch;
    line["lr"] = rate;
    line["lambda_pen"] = lambda_pen;
    line["steps"] = step;
    out.lines.push_back(line.dump());
  }
  out.steps = step;
  return m;
}

std::vector<std::vector<double>> idgc_sample(const IdgcModel& m, const std::vector<ObjectInputs>& objects,
                                             const std::vector<Condition>& conds, std::size_t n, std::uint64_t seed,
                                             int threads) {
  const std::size_t d = m.norm.dim();
  const Rng root(seed);
  std::vector<std::vector<double>> out(conds.size() * n);
  const std::size_t per_chunk = std::max<std::size_t>(1, kChunk / std::max<std::size_t>(n, 1));
  const std::size_t chunks = (conds.size() + per_chunk - 1) / per_chunk;
  parallel_for(chunks, threads, [&](std::size_t ci) {
    ad::NoGradGuard ng;
    const std::size_t c0 = ci * per_chunk, c1 = std::min(conds.size(), c0 + per_chunk);
    std::vector<Condition> rows;
    std::vector<Rng> rngs;
    for (std::size_t c = c0; c < c1; ++c)
      for (std::size_t k = 0; k < n; ++k) {
        rows.push_back(conds[c]);
        rngs.push_back(root.stream(static_cast<std::uint64_t>(c)).stream(static_cast<std::uint64_t>(k)));
      }
    if (rows.empty()) return;
    const Tensor of = m.net.object_features(objects, rows);
    const Tensor gf = m.net.guidance_features(rows);
    const X0Fn fn = [&](const std::vector<double>& x, int t) {
      const Tensor pred = m.net.predict(Tensor::from({rows.size(), d}, x), std::vector<int>(rows.size(), t), of, gf);
      return std::vector<double>(pred.values().begin(), pred.values().end());
    };
    const std::vector<double> x = ddpm_sample(m.schedule, fn, d, rngs);
    for (std::size_t r = 0; r < rows.size(); ++r)
      out[c0 * n + r] = m.norm.denormalize(std::span<const double>(x).subspan(r * d, d));
  });
  return out;
}

// ---------------------------------------------------------------------------
// QGC pairs

std::size_t nearest_by_chamfer(const std::vector<Vec3>& query, const std::vector<const std::vector<Vec3>*>& candidates) {
  LANGGRASP_REQUIRE(!candidates.empty(), "nearest_by_chamfer: empty candidate set");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double c = losses::chamfer(query, *candidates[i]);
    if (c < best_d) {
      best_d = c;
      best = i;
    }
  }
  return best;
}

std::vector<std::size_t> intent_group(const TrainingSet& set, const Condition& c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < set.conditions.size(); ++i) {
    const auto& o = set.conditions[i];
    if (o.object == c.object && o.verb == c.verb && o.assignment == c.assignment) out.push_back(i);
  }
  return out;
}

std::vector<QgcPair> qgc_build_pairs(const IdgcModel& m, const HandModel& hand, const TrainingSet& set,
                                     std::size_t per_condition, std::uint64_t seed, int threads,
                                     std::vector<std::string>* warnings) {
  return qgc_build_pairs(m, hand, set, set.conditions, per_condition, seed, threads, warnings);
}

std::vector<QgcPair> qgc_build_pairs(const IdgcModel& m, const HandModel& hand, const TrainingSet& set,
                                     const std::vector<Condition>& queries, std::size_t per_condition,
                                     std::uint64_t seed, int threads, std::vector<std::string>* warnings) {
  const auto coarse = idgc_sample(m, set.objects, queries, per_condition, seed, threads);
  const std::size_t j = hand.joint_count();
  std::vector<std::vector<Vec3>> gt_clouds(set.poses.size());
  parallel_for(set.poses.size(), threads,
               [&](std::size_t i) { gt_clouds[i] = hand.forward(GraspPose::from_vector(set.poses[i], j)).points; });
  std::vector<std::vector<QgcPair>> per_record(queries.size());
  std::vector<char> empty(queries.size(), 0);
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto group = intent_group(set, queries[i]);
    if (group.empty()) {
      empty[i] = 1;
      return;
    }
    std::vector<const std::vector<Vec3>*> cands;
    for (auto g : group) cands.push_back(&gt_clouds[g]);
    for (std::size_t k = 0; k < per_condition; ++k) {
      const auto& pose = coarse[i * per_condition + k];
      const auto cloud = hand.forward(GraspPose::from_vector(pose, j)).points;
      const std::size_t best = nearest_by_chamfer(cloud, cands);
      per_record[i].push_back({queries[i].object, pose, set.poses[group[best]], losses::chamfer(cloud, *cands[best])});
    }
  });
  std::vector<QgcPair> pairs;
  for (std::size_t i = 0; i < per_record.size(); ++i) {
    if (empty[i] && warnings)
      warnings->push_back("qgc pairs: condition " + std::to_string(i) + " has an empty intent group, skipped");
    for (auto& p : per_record[i]) pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// QGC

Refiner Refiner::make(const ModelConfig& cfg, std::size_t pose_dim, Rng& rng) {
  Refiner r;
  r.cfg = cfg;
  r.object = PointEncoder::make(4, cfg.point_hidden, cfg.object_width, rng);
  r.hand = PointEncoder::make(4, cfg.point_hidden, cfg.hand_width, rng);
  std::vector<std::size_t> widths{pose_dim + cfg.object_width + cfg.hand_width};
  for (std::size_t i = 0; i < cfg.layers; ++i) widths.push_back(cfg.hidden);
  widths.push_back(pose_dim);
  r.mlp = Mlp::make(widths, rng, true);
  return r;
}

ParamList Refiner::params() {
  ParamList p;
  p.add("object", object.mlp);
  p.add("hand", hand.mlp);
  p.add("mlp", mlp);
  return p;
}

std::vector<unsigned char> QgcModel::to_bytes() const {
  io::Writer w(io::Kind::checkpoint);
  w.str("qgc");
  w.str(net.cfg.to_json());
  write_norm(w, norm);
  const_cast<Refiner&>(net).params().write(w);
  return w.bytes();
}

void QgcModel::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  io::write_file(path, bytes.data(), bytes.size());
}

QgcModel QgcModel::load(const std::filesystem::path& path) {
  io::Reader r = io::Reader::open(path, io::Kind::checkpoint);
  if (r.str() != "qgc") throw IoError(path.string() + ": not a QGC checkpoint");
  const ModelConfig cfg = ModelConfig::from_json(r.str());
  QgcModel m;
  m.norm = read_norm(r);
  Rng rng(0);
  m.net = Refiner::make(cfg, m.norm.dim(), rng);
  auto params = m.net.params();
  params.read(r);
  r.finish();
  return m;
}

RefinerInput refiner_input(const PoseNormalizer& norm, const HandModel& hand, const ObjectInputs& obj,
                           const std::vector<double>& coarse, const ModelConfig& cfg) {
  const hand::HandCloud hc = hand.forward(GraspPose::from_vector(coarse, hand.joint_count()));
  RefinerInput in;
  in.pose = norm.normalize(coarse);
  for (const auto& p : obj.encoder_points) {
    const Vec3 s = p / kPointScale;
    in.object_feat.insert(in.object_feat.end(), {s.x(), s.y(), s.z(), clamp_unit(losses::hand_sdf(hc, p) / kFeatureDist)});
  }
  for (const auto& h : strided(hc.points, cfg.hand_points)) {
    const Vec3 s = h / kPointScale;
    in.hand_feat.insert(in.hand_feat.end(), {s.x(), s.y(), s.z(), clamp_unit(obj.model.sdf(h) / kFeatureDist)});
  }
  return in;
}

Tensor refine_delta(const Refiner& net, const std::vector<const RefinerInput*>& inputs) {
  LANGGRASP_REQUIRE(!inputs.empty(), "refine: empty batch");
  std::vector<std::vector<double>> poses;
  std::vector<const std::vector<double>*> of, hf;
  for (const auto* in : inputs) {
    poses.push_back(in->pose);
    of.push_back(&in->object_feat);
    hf.push_back(&in->hand_feat);
  }
  const Tensor feat = ad::concat({rows_tensor(poses), net.object(features_tensor(of, 4)), net.hand(features_tensor(hf, 4))}, 1);
  return net.mlp(feat);
}

Tensor qgc_loss(const QgcModel& m, const HandModel& hand, const std::vector<ObjectInputs>& objects,
                const std::vector<QgcPair>& pairs, const std::vector<RefinerInput>& inputs,
                const std::vector<std::size_t>& rows, const losses::LossWeights& w, LossParts* parts) {
  const std::size_t b = rows.size();
  LANGGRASP_REQUIRE(b > 0, "qgc_loss: empty batch");
  std::vector<const RefinerInput*> in;
  std::vector<std::vector<double>> coarse, coarse_n, target, target_n;
  std::vector<const std::vector<Vec3>*> obj_sets;
  for (auto r : rows) {
    in.push_back(&inputs.at(r));
    coarse.push_back(pairs.at(r).coarse);
    coarse_n.push_back(inputs[r].pose);
    target.push_back(pairs.at(r).target);
    target_n.push_back(m.norm.normalize(pairs[r].target));
    obj_sets.push_back(&objects.at(pairs[r].object).loss_points);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  const Tensor delta = refine_delta(m.net, in);
  const Tensor refined = rows_tensor(coarse_n) + delta;
  const hand::PosedHand posed = hand.forward(rows_tensor(coarse) + delta * Tensor::from({1, m.norm.dim()}, m.norm.scale()));
  const Tensor gt_points = hand_points_const(hand, target);
  const Tensor obj = losses::stack_points(obj_sets);
  LossParts p;
  Tensor total = Tensor::scalar(0.0);
  auto term = [&](double weight, double& slot, const std::function<Tensor()>& f) {
    if (weight == 0.0) return;
    const Tensor v = f() * inv_b;
    slot = v.item();
    total = total + v * weight;
  };
  term(w.para, p.para, [&] { return losses::loss_para(refined, rows_tensor(target_n)); });
  term(w.chamfer, p.chamfer, [&] { return losses::loss_chamfer(posed.points, gt_points); });
  term(w.pen, p.pen, [&] { return losses::loss_pen(obj, hand, posed); });
  term(w.cmap, p.cmap, [&] {
    Tensor target_map;
    {
      ad::NoGradGuard ng;
      target_map = losses::contact_map(obj, gt_points);
    }
    return losses::loss_cmap(losses::contact_map(obj, posed.points), target_map);
  });
  term(w.spen, p.spen, [&] { return losses::loss_spen(hand, posed); });
  p.total = total.item();
  if (parts) *parts = p;
  return total;
}

QgcModel train_qgc(const HandModel& hand, const std::vector<ObjectInputs>& objects, const std::vector<QgcPair>& pairs,
                   const PoseNormalizer& norm, const QgcConfig& cfg, TrainLog* log) {
  LANGGRASP_REQUIRE(!pairs.empty(), "train_qgc: no training pairs");
  LANGGRASP_REQUIRE(cfg.epochs >= 1 && cfg.batch >= 1, "train_qgc: epochs and batch must be positive");
  const Rng root(cfg.seed);
  Rng init = root.stream("init");
  QgcModel m{norm, Refiner::make(cfg.model, norm.dim(), init)};
  std::vector<RefinerInput> inputs(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    inputs[i] = refiner_input(norm, hand, objects.at(pairs[i].object), pairs[i].coarse, cfg.model);
  ad::Adam opt(m.net.params().handles(), cfg.adam);
  ad::CosineSchedule lr = cfg.lr;
  lr.total_epochs = cfg.epochs;
  long step = 0;
  TrainLog local;
  TrainLog& out = log ? *log : local;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double rate = lr.at(epoch);
    const auto order = shuffled(pairs.size(), root.stream("epoch").stream(static_cast<std::uint64_t>(epoch)));
    LossParts sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      if (cfg.max_steps >= 0 && step >= cfg.max_steps) break;
      const std::vector<std::size_t> rows(order.begin() + start, order.begin() + std::min(order.size(), start + cfg.batch));
      LossParts parts;
      const Tensor loss = qgc_loss(m, hand, objects, pairs, inputs, rows, cfg.weights, &parts);
      if (!std::isfinite(parts.total))
        throw NumericFault("qgc-train", "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                            std::to_string(step) + " (" + fmt_parts(parts) + ")");
      try {
        ad::backward(loss);
      } catch (const NumericFault& e) {
        throw NumericFault("qgc-train", "epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what());
      }
      opt.step(rate);
      opt.zero_grad();
      out.step_para.push_back(parts.para);
      out.step_loss.push_back(parts.total);
      accumulate(sum, parts);
      ++batches;
      ++step;
    }
    if (batches == 0) break;
    json line = parts_json(averaged(sum, batches));
    line["epoch"] = epoch;
    line["lr"] = rate;
    line["steps"] = step;
    out.lines.push_back(line.dump());
  }
  out.steps = step;
  return m;
}

std::vector<std::vector<double>> qgc_refine(const QgcModel& m, const HandModel& hand,
                                            const std::vector<ObjectInputs>& objects,
                                            const std::vector<std::size_t>& object_of,
                                            const std::vector<std::vector<double>>& coarse, int threads) {
  LANGGRASP_REQUIRE(object_of.size() == coarse.size(), "qgc_refine: one object per pose");
  std::vector<std::vector<double>> out(coarse.size());
  const std::size_t chunks = (coarse.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t ci) {
    ad::NoGradGuard ng;
    const std::size_t r0 = ci * kChunk, r1 = std::min(coarse.size(), r0 + kChunk);
    std::vector<RefinerInput> inputs;
    for (std::size_t r = r0; r < r1; ++r)
      inputs.push_back(refiner_input(m.norm, hand, objects.at(object_of[r]), coarse[r], m.net.cfg));
    std::vector<const RefinerInput*> ptrs;
    for (const auto& in : inputs) ptrs.push_back(&in);
    std::vector<std::vector<double>> base(coarse.begin() + r0, coarse.begin() + r1);
    const Tensor refined = rows_tensor(base) + refine_delta(m.net, ptrs) * Tensor::from({1, m.norm.dim()}, m.norm.scale());
    auto rows = split_rows(refined.values(), m.norm.dim());
    for (std::size_t r = r0; r < r1; ++r) out[r] = std::move(rows[r - r0]);
  });
  return out;
}

std::vector<std::vector<double>> generate(const IdgcModel& idgc, const QgcModel& qgc, const HandModel& hand,
                                          const std::vector<ObjectInputs>& objects,
                                          const std::vector<Condition>& conds, std::size_t n, std::uint64_t seed,
                                          int threads) {
  const auto coarse = idgc_sample(idgc, objects, conds, n, seed, threads);
  std::vector<std::size_t> object_of;
  for (const auto& c : conds)
    for (std::size_t k = 0; k < n; ++k) object_of.push_back(c.object);
  return qgc_refine(qgc, hand, objects, object_of, coarse, threads);
}

}  // namespace langgrasp::gen
