#pragma once

// End-to-end stages shared by the command line and the acceptance suite.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "langgrasp/dataset/dataset.hpp"
#include "langgrasp/gen/generator.hpp"
#include "langgrasp/metrics/metrics.hpp"

namespace langgrasp::cli {

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  dataset::ForgeConfig forge;
  gen::ModelConfig model;
  gen::IdgcConfig idgc;
  gen::QgcConfig qgc;
  std::size_t pairs_per_condition = 4;
  std::size_t samples = 8;
  metrics::EvalConfig eval;
  std::size_t hoir_cases = 100;
  std::size_t hoir_object_points = 512;
  std::vector<double> sweep{0, 50, 100, 500};
  int switch_epoch = 50;
  double switch_lambda = 100;
  // IDGC penetration weights of the two progressive (IDGC + QGC) rows.
  double progressive_low = 0, progressive_high = 100;

  // Copies shared settings (seed, threads, model) into the stage configs.
  void sync();
  nlohmann::ordered_json to_json() const;
};

// Seeds of each stage, derived from the run seed by label.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& label);

using Progress = std::function<void(const std::string&)>;

gen::IdgcModel train_idgc_stage(const hand::HandModel& hand, const gen::TrainingSet& train, const RunConfig& cfg,
                                double lambda_pen, int switch_epoch, double lambda_late, gen::TrainLog* log);
gen::QgcModel train_qgc_stage(const hand::HandModel& hand, const gen::TrainingSet& train, const gen::IdgcModel& idgc,
                              const RunConfig& cfg, gen::TrainLog* log, std::size_t* pair_count = nullptr,
                              std::vector<std::string>* warnings = nullptr);

// cfg.samples poses per eval group, coarse when qgc is null; samples[g][k].
std::vector<std::vector<std::vector<double>>> sample_groups(const hand::HandModel& hand, const gen::TrainingSet& eval,
                                                            const std::vector<metrics::EvalGroup>& groups,
                                                            const gen::IdgcModel& idgc, const gen::QgcModel* qgc,
                                                            const RunConfig& cfg);
metrics::MetricsReport evaluate_models(const hand::HandModel& hand, const gen::TrainingSet& eval,
                                       const gen::IdgcModel& idgc, const gen::QgcModel* qgc, const RunConfig& cfg);

struct HoirRow {
  std::string label;
  double pen_cm = 0, con = 0, residual = 0;
};
// Every retargeting variant over cfg.hoir_cases benchmark cases. Con. is the
// contact-map distance to the hidden source pose.
std::vector<HoirRow> hoir_ablation(const hand::HandModel& hand, const RunConfig& cfg);

struct AblationRow {
  std::string label;
  metrics::MetricsReport report;
};

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct AblationResult {
  std::vector<AblationRow> table2;
  std::vector<HoirRow> table3;
  std::vector<Verdict> verdicts;
  std::string failure;  // first sub-run fault, empty when complete
  bool all_pass() const;
};

// Ties get their average rank.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Penetration-weight sweep, switch variant and progressive variants, then the
// retargeting ablation and trend verdicts. A sub-run fault stops the run and
// is recorded in `failure` with the rows finished so far.
AblationResult run_ablation(const hand::HandModel& hand, const dataset::Dataset& d, const RunConfig& cfg,
                            const Progress& progress = {}, const std::string& log_dir = "");

std::string table2_csv(const AblationResult& r);
std::string table3_csv(const AblationResult& r);
std::string verdicts_json(const AblationResult& r);

}  // namespace langgrasp::cli
