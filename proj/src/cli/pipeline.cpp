#include "langgrasp/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "langgrasp/error.hpp"
#include "langgrasp/hoir/hoir.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/losses/losses.hpp"
#include "langgrasp/parallel.hpp"

namespace langgrasp::cli {

using nlohmann::ordered_json;

namespace {

std::string number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void write_lines(const std::string& dir, const std::string& name, const std::vector<std::string>& lines) {
  if (dir.empty()) return;
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  io::write_file(std::filesystem::path(dir) / name, text.data(), text.size());
}

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label) s += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : '_';
  return s;
}

}  // namespace

void RunConfig::sync() {
  forge.seed = stage_seed(seed, "forge");
  forge.threads = threads;
  idgc.model = model;
  qgc.model = model;
  eval.threads = threads;
}

ordered_json RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["forge"] = {{"categories", forge.categories},
                {"objects_per_category", forge.objects_per_category},
                {"grasps_per_object", forge.grasps_per_object},
                {"cloud_points", forge.cloud_points},
                {"train_fraction", forge.train_fraction},
                {"contact_threshold", forge.contact_threshold},
                {"penetration_threshold", forge.penetration_threshold},
                {"inward_offset", forge.inward_offset},
                {"max_failure_rate", forge.max_failure_rate},
                {"hoir_align_steps", forge.hoir.align_steps},
                {"hoir_align_lr", forge.hoir.align_lr},
                {"hoir_refine_steps", forge.hoir.refine_steps},
                {"hoir_refine_lr", forge.hoir.refine_lr}};
  j["model"] = ordered_json::parse(model.to_json());
  j["idgc"] = {{"epochs", idgc.epochs},
               {"batch", idgc.batch},
               {"lambda_para", idgc.lambda_para},
               {"lambda_chamfer", idgc.lambda_chamfer},
               {"lambda_pen", idgc.lambda_pen},
               {"pen_switch_epoch", idgc.pen_switch_epoch},
               {"lambda_pen_late", idgc.lambda_pen_late},
               {"lr_initial", idgc.lr.initial},
               {"lr_final", idgc.lr.final_lr},
               {"weight_decay", idgc.adam.weight_decay},
               {"max_steps", idgc.max_steps}};
  j["qgc"] = {{"epochs", qgc.epochs},
              {"batch", qgc.batch},
              {"lambda_para", qgc.weights.para},
              {"lambda_chamfer", qgc.weights.chamfer},
              {"lambda_pen", qgc.weights.pen},
              {"lambda_cmap", qgc.weights.cmap},
              {"lambda_spen", qgc.weights.spen},
              {"lr_initial", qgc.lr.initial},
              {"lr_final", qgc.lr.final_lr},
              {"weight_decay", qgc.adam.weight_decay},
              {"max_steps", qgc.max_steps},
              {"pairs_per_condition", pairs_per_condition}};
  j["eval"] = {{"samples", samples},
               {"q1_mu", eval.q1.mu},
               {"q1_cone_edges", eval.q1.cone_edges},
               {"q1_directions", eval.q1.directions},
               {"contact_threshold", eval.contact_threshold}};
  j["ablate"] = {{"sweep", sweep},
                 {"switch_epoch", switch_epoch},
                 {"switch_lambda", switch_lambda},
                 {"progressive_low", progressive_low},
                 {"progressive_high", progressive_high},
                 {"hoir_cases", hoir_cases},
                 {"hoir_object_points", hoir_object_points}};
  return j;
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& label) { return Rng(seed).stream(label).next_u64(); }

gen::IdgcModel train_idgc_stage(const hand::HandModel& hand, const gen::TrainingSet& train, const RunConfig& cfg,
                                double lambda_pen, int switch_epoch, double lambda_late, gen::TrainLog* log) {
  gen::IdgcConfig c = cfg.idgc;
  c.model = cfg.model;
  c.lambda_pen = lambda_pen;
  c.pen_switch_epoch = switch_epoch;
  c.lambda_pen_late = lambda_late;
  c.seed = stage_seed(cfg.seed, "idgc");
  return gen::train_idgc(hand, train, c, log);
}

gen::QgcModel train_qgc_stage(const hand::HandModel& hand, const gen::TrainingSet& train, const gen::IdgcModel& idgc,
                              const RunConfig& cfg, gen::TrainLog* log, std::size_t* pair_count,
                              std::vector<std::string>* warnings) {
  const auto pairs = gen::qgc_build_pairs(idgc, hand, train, cfg.pairs_per_condition, stage_seed(cfg.seed, "qgc-pairs"),
                                          cfg.threads, warnings);
  if (pair_count) *pair_count = pairs.size();
  gen::QgcConfig c = cfg.qgc;
  c.model = cfg.model;
  c.seed = stage_seed(cfg.seed, "qgc");
  return gen::train_qgc(hand, train.objects, pairs, idgc.norm, c, log);
}

std::vector<std::vector<std::vector<double>>> sample_groups(const hand::HandModel& hand, const gen::TrainingSet& eval,
                                                            const std::vector<metrics::EvalGroup>& groups,
                                                            const gen::IdgcModel& idgc, const gen::QgcModel* qgc,
                                                            const RunConfig& cfg) {
  std::vector<gen::Condition> conds;
  for (const auto& g : groups) conds.push_back(g.cond);
  const std::uint64_t seed = stage_seed(cfg.seed, "sample");
  const auto flat = qgc ? gen::generate(idgc, *qgc, hand, eval.objects, conds, cfg.samples, seed, cfg.threads)
                        : gen::idgc_sample(idgc, eval.objects, conds, cfg.samples, seed, cfg.threads);
  std::vector<std::vector<std::vector<double>>> out(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    out[g].assign(flat.begin() + static_cast<std::ptrdiff_t>(g * cfg.samples),
                  flat.begin() + static_cast<std::ptrdiff_t>((g + 1) * cfg.samples));
  return out;
}

metrics::MetricsReport evaluate_models(const hand::HandModel& hand, const gen::TrainingSet& eval,
                                       const gen::IdgcModel& idgc, const gen::QgcModel* qgc, const RunConfig& cfg) {
  const auto groups = metrics::eval_groups(eval);
  LANGGRASP_REQUIRE(!groups.empty(), "evaluate: the eval split holds no records");
  const auto samples = sample_groups(hand, eval, groups, idgc, qgc, cfg);
  metrics::EvalConfig ec = cfg.eval;
  ec.threads = cfg.threads;
  return metrics::evaluate(hand, eval, groups, samples, idgc.norm, ec);
}

std::vector<HoirRow> hoir_ablation(const hand::HandModel& hand, const RunConfig& cfg) {
  const auto cases = hoir::benchmark_cases(hand, cfg.hoir_cases, stage_seed(cfg.seed, "hoir"), cfg.hoir_object_points);
  std::vector<HoirRow> rows;
  for (auto v : hoir::all_variants()) {
    std::vector<HoirRow> per(cases.size());
    parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
      const auto& c = cases[i];
      const auto pose = hoir::run_variant(hand, c.object_points, c.c.spec, v, cfg.forge.hoir);
      const auto hc = hand.forward(pose);
      const auto hidden = hand.forward(c.c.hidden);
      per[i].pen_cm = 100.0 * losses::max_penetration(c.object_points, hc);
      per[i].con = losses::cmap_distance(losses::contact_map(c.object_points, hc.points),
                                         losses::contact_map(c.object_points, hidden.points));
      per[i].residual = hoir::fingertip_residual(hand, pose, c.c.spec);
    });
    HoirRow row{hoir::variant_name(v)};
    for (const auto& p : per) {
      row.pen_cm += p.pen_cm;
      row.con += p.con;
      row.residual += p.residual;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, cases.size()));
    row.pen_cm /= n;
    row.con /= n;
    row.residual /= n;
    rows.push_back(row);
  }
  return rows;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  LANGGRASP_REQUIRE(x.size() == y.size() && x.size() >= 2, "spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j);
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

bool AblationResult::all_pass() const {
  if (!failure.empty() || verdicts.empty()) return false;
  return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

namespace {

std::string idgc_label(double lambda) { return "IDGC(pen=" + number(lambda) + ")"; }

const metrics::MetricsReport* find_row(const AblationResult& r, const std::string& label) {
  for (const auto& row : r.table2)
    if (row.label == label) return &row.report;
  return nullptr;
}

const HoirRow* find_hoir(const AblationResult& r, hoir::Variant v) {
  for (const auto& row : r.table3)
    if (row.label == hoir::variant_name(v)) return &row;
  return nullptr;
}

void judge(AblationResult& r, const RunConfig& cfg) {
  std::vector<double> lam, pen, dt;
  for (double l : cfg.sweep)
    if (const auto* m = find_row(r, idgc_label(l))) {
      lam.push_back(l);
      pen.push_back(m->pen_cm);
      dt.push_back(m->delta_t);
    }
  if (lam.size() == cfg.sweep.size() && lam.size() >= 2) {
    const double rp = spearman(lam, pen), rd = spearman(lam, dt);
    r.verdicts.push_back({"pen-decreases-with-weight", rp <= -0.8, "spearman " + number(rp)});
    r.verdicts.push_back({"delta-t-decreases-with-weight", rd <= -0.8, "spearman " + number(rd)});
  }
  const std::string low = idgc_label(cfg.progressive_low), high = idgc_label(cfg.progressive_high);
  const auto* low_q = find_row(r, low + "+QGC");
  const auto* high_q = find_row(r, high + "+QGC");
  const auto* low_alone = find_row(r, low);
  if (low_q && high_q)
    r.verdicts.push_back({"progressive-lower-cd", low_q->cd < high_q->cd,
                          low + "+QGC " + number(low_q->cd) + " vs " + high + "+QGC " + number(high_q->cd)});
  if (low_q && low_alone)
    r.verdicts.push_back({"qgc-lower-pen", low_q->pen_cm < low_alone->pen_cm,
                          low + "+QGC " + number(low_q->pen_cm) + " vs " + low + " " + number(low_alone->pen_cm)});
  const auto* s12 = find_hoir(r, hoir::Variant::step1_2);
  const auto* full = find_hoir(r, hoir::Variant::full);
  const auto* one = find_hoir(r, hoir::Variant::all_in_one);
  if (s12 && full) {
    r.verdicts.push_back({"hoir-step3-lower-pen", full->pen_cm < s12->pen_cm,
                          number(full->pen_cm) + " vs " + number(s12->pen_cm)});
    r.verdicts.push_back({"hoir-step3-con-within-2x", full->con <= 2.0 * s12->con,
                          number(full->con) + " vs 2 x " + number(s12->con)});
  }
  if (full && one)
    r.verdicts.push_back({"hoir-one-stage-worse-con", one->con > full->con, number(one->con) + " vs " + number(full->con)});
}

}  // namespace

AblationResult run_ablation(const hand::HandModel& hand, const dataset::Dataset& d, const RunConfig& cfg,
                            const Progress& progress, const std::string& log_dir) {
  AblationResult r;
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const auto train = gen::make_training_set(d, dataset::Split::train, cfg.model);
  const auto eval = gen::make_training_set(d, dataset::Split::eval, cfg.model);
  std::string current;
  try {
    std::vector<std::pair<double, gen::IdgcModel>> kept;
    auto idgc_row = [&](const std::string& label, double lambda, int switch_epoch, double late) {
      current = label;
      say("training " + label);
      gen::TrainLog log;
      auto m = train_idgc_stage(hand, train, cfg, lambda, switch_epoch, late, &log);
      write_lines(log_dir, slug(label) + ".jsonl", log.lines);
      say("evaluating " + label);
      r.table2.push_back({label, evaluate_models(hand, eval, m, nullptr, cfg)});
      return m;
    };
    for (double l : cfg.sweep) {
      auto m = idgc_row(idgc_label(l), l, -1, 0.0);
      if (l == cfg.progressive_low || l == cfg.progressive_high) kept.emplace_back(l, std::move(m));
    }
    idgc_row("IDGC(pen=0->" + number(cfg.switch_lambda) + "@" + std::to_string(cfg.switch_epoch) + ")", 0.0,
             cfg.switch_epoch, cfg.switch_lambda);
    for (double l : {cfg.progressive_high, cfg.progressive_low}) {
      auto it = std::find_if(kept.begin(), kept.end(), [&](const auto& k) { return k.first == l; });
      gen::IdgcModel trained;
      if (it == kept.end()) {
        current = idgc_label(l);
        trained = train_idgc_stage(hand, train, cfg, l, -1, 0.0, nullptr);
      }
      const gen::IdgcModel& idgc = it == kept.end() ? trained : it->second;
      const std::string label = idgc_label(l) + "+QGC";
      current = label;
      say("training " + label);
      gen::TrainLog log;
      const auto qgc = train_qgc_stage(hand, train, idgc, cfg, &log);
      write_lines(log_dir, slug(label) + ".jsonl", log.lines);
      say("evaluating " + label);
      r.table2.push_back({label, evaluate_models(hand, eval, idgc, &qgc, cfg)});
    }
    current = "retargeting ablation";
    say("running " + current);
    r.table3 = hoir_ablation(hand, cfg);
  } catch (const std::exception& e) {
    r.failure = current + ": " + e.what();
    return r;
  }
  judge(r, cfg);
  return r;
}

std::string table2_csv(const AblationResult& r) {
  std::string s = metrics::table_header() + "\n";
  for (const auto& row : r.table2) s += metrics::table_row(row.label, row.report) + "\n";
  if (!r.failure.empty()) s += "# FAILED " + r.failure + "\n";
  return s;
}

std::string table3_csv(const AblationResult& r) {
  std::ostringstream s;
  s << "method,pen_cm,con,fingertip_residual_m\n" << std::setprecision(6);
  for (const auto& row : r.table3) s << row.label << ',' << row.pen_cm << ',' << row.con << ',' << row.residual << '\n';
  if (!r.failure.empty()) s << "# FAILED " << r.failure << '\n';
  return s.str();
}

std::string verdicts_json(const AblationResult& r) {
  ordered_json j;
  j["complete"] = r.failure.empty();
  if (!r.failure.empty()) j["failure"] = r.failure;
  ordered_json v = ordered_json::array();
  for (const auto& x : r.verdicts) v.push_back({{"name", x.name}, {"pass", x.pass}, {"detail", x.detail}});
  j["verdicts"] = v;
  j["all_pass"] = r.all_pass();
  return j.dump(2) + "\n";
}

}  // namespace langgrasp::cli
