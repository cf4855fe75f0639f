#include "langgrasp/cli/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <json.hpp>

#include "langgrasp/cli/pipeline.hpp"
#include "langgrasp/error.hpp"
#include "langgrasp/hoir/hoir.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/parallel.hpp"

#ifndef LANGGRASP_GIT_DESCRIBE
#define LANGGRASP_GIT_DESCRIBE "unknown"
#endif

namespace langgrasp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string output_root() {
  const char* env = std::getenv("LANGGRASP_OUTPUT_ROOT");
  return env && *env ? env : "runs";
}

namespace {

struct Paths {
  std::string out, dataset, idgc, qgc, hand;
};

void require_artifact(const fs::path& p, const std::string& what, const std::string& producer) {
  if (!fs::exists(p)) throw IoError("missing artifact: " + what + " at " + p.string() + " (run " + producer + " first)");
}

void save_text(const fs::path& p, const std::string& text) { io::write_file(p, text.data(), text.size()); }

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

std::uint64_t fnv1a(const std::vector<unsigned char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every regular file under dir except the run manifest, sorted.
std::vector<fs::path> artifact_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::exists(dir)) return files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  return files;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg, const Paths& paths,
                    double wall_s, int exit_code) {
  ordered_json j;
  j["tool"] = "langgrasp";
  j["version"] = std::string(LANGGRASP_VERSION) + "-" + LANGGRASP_GIT_DESCRIBE;
  j["subcommand"] = command;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["inputs"] = {{"dataset", paths.dataset}, {"idgc", paths.idgc}, {"qgc", paths.qgc}, {"hand", paths.hand}};
  j["config"] = cfg.to_json();
  ordered_json arts = ordered_json::array();
  for (const auto& f : artifact_files(dir)) {
    const auto bytes = io::read_file(dir / f);
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    arts.push_back({{"path", f.generic_string()}, {"bytes", bytes.size()}, {"fnv1a64", hex}});
  }
  j["artifacts"] = arts;
  j["exit_code"] = exit_code;
  j["wall_time_s"] = wall_s;
  save_text(dir / "run.json", j.dump(2) + "\n");
}

hand::HandModel load_hand(const Paths& p) {
  if (p.hand.empty()) return hand::HandModel::toy_hand12();
  require_artifact(p.hand, "hand model", "a hand export");
  return hand::HandModel::load(p.hand);
}

dataset::Dataset load_dataset(const Paths& p) {
  require_artifact(fs::path(p.dataset) / "manifest.json", "dataset", "gen-dataset");
  return dataset::read_dataset(p.dataset);
}

gen::IdgcModel load_idgc(const Paths& p) {
  require_artifact(p.idgc, "IDGC checkpoint", "train-idgc");
  return gen::IdgcModel::load(p.idgc);
}

gen::QgcModel load_qgc(const Paths& p) {
  require_artifact(p.qgc, "QGC checkpoint", "train-qgc");
  return gen::QgcModel::load(p.qgc);
}

std::string pose_list_json(const std::vector<std::vector<double>>& poses) {
  ordered_json a = ordered_json::array();
  for (const auto& p : poses) a.push_back(p);
  return a.dump();
}

int cmd_gen_dataset(const RunConfig& cfg, const Paths& p, const fs::path& dir) {
  const auto hand = load_hand(p);
  const auto d = dataset::generate_dataset(hand, cfg.forge);
  dataset::write_dataset(d, dir / "dataset");
  std::size_t train = 0;
  for (const auto& r : d.records) train += r.split == dataset::Split::train;
  std::cerr << "dataset: " << d.records.size() << " records (" << train << " train) over " << d.objects.size()
            << " objects\n";
  return 0;
}

int cmd_retarget(const RunConfig& cfg, const Paths& p, const fs::path& dir) {
  const auto hand = load_hand(p);
  const auto cases = hoir::benchmark_cases(hand, cfg.hoir_cases, stage_seed(cfg.seed, "hoir"), cfg.hoir_object_points);
  std::vector<std::string> rows(cases.size());
  parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
    const auto& c = cases[i];
    const auto init = hoir::step1_initialize(hand, c.c.spec);
    const double r0 = hoir::fingertip_residual(hand, init, c.c.spec);
    const auto res = hoir::retarget(hand, c.object_points, c.c.spec, cfg.forge.hoir);
    const auto& rep = res.report;
    std::ostringstream s;
    s << std::setprecision(9) << i << ',' << c.category << ',' << r0 << ','
      << (rep.align_losses.empty() ? 0.0 : std::sqrt(rep.align_losses.back() / hand.finger_count())) << ','
      << rep.fingertip_residual << ',' << rep.max_penetration << ',' << rep.cmap_drift;
    rows[i] = s.str();
  });
  std::string csv = "case,category,initial_residual_m,aligned_residual_m,final_residual_m,max_penetration_m,cmap_drift\n";
  for (const auto& r : rows) csv += r + "\n";
  save_text(dir / "retarget.csv", csv);
  std::cerr << "retargeted " << cases.size() << " cases\n";
  return 0;
}

int cmd_train_idgc(const RunConfig& cfg, const Paths& p, const fs::path& dir) {
  const auto hand = load_hand(p);
  const auto d = load_dataset(p);
  const auto train = gen::make_training_set(d, dataset::Split::train, cfg.model);
  gen::TrainLog log;
  const auto m = train_idgc_stage(hand, train, cfg, cfg.idgc.lambda_pen, cfg.idgc.pen_switch_epoch, cfg.idgc.lambda_pen_late, &log);
  m.save(dir / "idgc.ckpt");
  save_text(dir / "idgc_log.jsonl", join_lines(log.lines));
  std::cerr << "idgc: " << log.steps << " steps on " << train.poses.size() << " records\n";
  return 0;
}

int cmd_train_qgc(const RunConfig& cfg, const Paths& p, const fs::path& dir) {
  const auto hand = load_hand(p);
  const auto d = load_dataset(p);
  const auto idgc = load_idgc(p);
  const auto train = gen::make_training_set(d, dataset::Split::train, cfg.model);
  gen::TrainLog log;
  std::size_t pairs = 0;
  std::vector<std::string> warnings;
  const auto m = train_qgc_stage(hand, train, idgc, cfg, &log, &pairs, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  m.save(dir / "qgc.ckpt");
  save_text(dir / "qgc_log.jsonl", join_lines(log.lines));
  save_text(dir / "pairs.json", ordered_json{{"pairs", pairs}, {"warnings", warnings}}.dump(2) + "\n");
  std::cerr << "qgc: " << pairs << " pairs, " << log.steps << " steps\n";
  return 0;
}

int cmd_sample(const RunConfig& cfg, const Paths& p, const fs::path& dir, bool coarse, const std::string& split) {
  const auto hand = load_hand(p);
  const auto d = load_dataset(p);
  const auto idgc = load_idgc(p);
  std::optional<gen::QgcModel> qgc;
  if (!coarse) qgc = load_qgc(p);
  const auto set = gen::make_training_set(d, split == "train" ? dataset::Split::train : dataset::Split::eval, cfg.model);
  const auto groups = metrics::eval_groups(set);
  const auto samples = sample_groups(hand, set, groups, idgc, qgc ? &*qgc : nullptr, cfg);
  std::string text = "[\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& e = d.objects.at(groups[g].cond.object);
    ordered_json head{{"object_id", e.id}, {"category", e.category}, {"verb", groups[g].cond.verb},
                      {"assignment", groups[g].cond.assignment}};
    std::string line = head.dump();
    line.pop_back();
    text += line + ",\"poses\":" + pose_list_json(samples[g]) + "}" + (g + 1 < groups.size() ? ",\n" : "\n");
  }
  text += "]\n";
  save_text(dir / "samples.json", text);
  std::cerr << "sampled " << groups.size() << " groups x " << cfg.samples << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const Paths& p, const fs::path& dir, bool coarse) {
  const auto hand = load_hand(p);
  const auto d = load_dataset(p);
  const auto idgc = load_idgc(p);
  std::optional<gen::QgcModel> qgc;
  if (!coarse) qgc = load_qgc(p);
  const auto eval = gen::make_training_set(d, dataset::Split::eval, cfg.model);
  const auto report = evaluate_models(hand, eval, idgc, qgc ? &*qgc : nullptr, cfg);
  save_text(dir / "report.json", report.to_json() + "\n");
  save_text(dir / "table.csv", metrics::table_header() + "\n" + metrics::table_row(coarse ? "IDGC" : "IDGC+QGC", report) + "\n");
  std::cerr << metrics::table_header() << "\n" << metrics::table_row(coarse ? "IDGC" : "IDGC+QGC", report) << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const Paths& p, const fs::path& dir) {
  const auto hand = load_hand(p);
  const auto d = load_dataset(p);
  const auto r = run_ablation(hand, d, cfg, [](const std::string& s) { std::cerr << "ablate: " << s << "\n"; },
                              (dir / "logs").string());
  save_text(dir / "table2.csv", table2_csv(r));
  save_text(dir / "table3.csv", table3_csv(r));
  save_text(dir / "verdicts.json", verdicts_json(r));
  std::cerr << table2_csv(r) << table3_csv(r);
  for (const auto& v : r.verdicts) std::cerr << (v.pass ? "PASS " : "FAIL ") << v.name << " (" << v.detail << ")\n";
  if (!r.failure.empty()) {
    std::cerr << "error: " << r.failure << "\n";
    return 4;
  }
  return r.all_pass() ? 0 : 1;
}

}  // namespace

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

int run(const std::vector<std::string>& args_in) {
  CLI::App app{"langgrasp: language-guided dexterous grasp synthesis on a toy hand"};
  app.name("langgrasp");
  app.set_config("--config", "", "Flat key=value config file; command-line flags override its values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1, 1);

  RunConfig cfg;
  Paths paths;
  auto& f = cfg.forge;
  auto& m = cfg.model;
  double lr_initial = cfg.idgc.lr.initial, lr_final = cfg.idgc.lr.final_lr, weight_decay = cfg.idgc.adam.weight_decay;

  app.add_option("--seed", cfg.seed, "Run seed")->capture_default_str();
  app.add_option("--threads", cfg.threads, "Worker threads (1 is bit-reproducible)")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--out", paths.out, "Output directory (default $LANGGRASP_OUTPUT_ROOT/<subcommand>)");
  app.add_option("--dataset", paths.dataset, "Dataset directory");
  app.add_option("--idgc", paths.idgc, "IDGC checkpoint");
  app.add_option("--qgc", paths.qgc, "QGC checkpoint");
  app.add_option("--hand", paths.hand, "Hand model JSON (default: built-in ToyHand-12)");

  app.add_option("--categories", f.categories, "Object categories")->delimiter(',');
  app.add_option("--objects-per-category", f.objects_per_category)->capture_default_str();
  app.add_option("--grasps-per-object", f.grasps_per_object)->capture_default_str();
  app.add_option("--cloud-points", f.cloud_points)->capture_default_str();
  app.add_option("--train-fraction", f.train_fraction)->capture_default_str();
  app.add_option("--contact-threshold", f.contact_threshold)->capture_default_str();
  app.add_option("--penetration-threshold", f.penetration_threshold)->capture_default_str();
  app.add_option("--inward-offset", f.inward_offset)->capture_default_str();
  app.add_option("--max-failure-rate", f.max_failure_rate)->capture_default_str();
  app.add_option("--hoir-align-steps", f.hoir.align_steps)->capture_default_str();
  app.add_option("--hoir-align-lr", f.hoir.align_lr)->capture_default_str();
  app.add_option("--hoir-refine-steps", f.hoir.refine_steps)->capture_default_str();
  app.add_option("--hoir-refine-lr", f.hoir.refine_lr)->capture_default_str();
  app.add_option("--hoir-cases", cfg.hoir_cases)->capture_default_str();
  app.add_option("--hoir-object-points", cfg.hoir_object_points)->capture_default_str();

  app.add_option("--encoder-points", m.encoder_points)->capture_default_str();
  app.add_option("--loss-points", m.loss_points)->capture_default_str();
  app.add_option("--hand-points", m.hand_points)->capture_default_str();
  app.add_option("--point-hidden", m.point_hidden)->capture_default_str();
  app.add_option("--object-width", m.object_width)->capture_default_str();
  app.add_option("--hand-width", m.hand_width)->capture_default_str();
  app.add_option("--verb-width", m.verb_width)->capture_default_str();
  app.add_option("--part-width", m.part_width)->capture_default_str();
  app.add_option("--time-width", m.time_width)->capture_default_str();
  app.add_option("--hidden", m.hidden)->capture_default_str();
  app.add_option("--layers", m.layers)->capture_default_str();
  app.add_option("--diffusion-steps", m.diffusion_steps)->capture_default_str();
  app.add_option("--beta-first", m.beta_first)->capture_default_str();
  app.add_option("--beta-last", m.beta_last)->capture_default_str();

  app.add_option("--idgc-epochs", cfg.idgc.epochs)->capture_default_str();
  app.add_option("--idgc-batch", cfg.idgc.batch)->capture_default_str();
  app.add_option("--idgc-lambda-para", cfg.idgc.lambda_para)->capture_default_str();
  app.add_option("--idgc-lambda-chamfer", cfg.idgc.lambda_chamfer)->capture_default_str();
  app.add_option("--idgc-lambda-pen", cfg.idgc.lambda_pen)->capture_default_str();
  app.add_option("--idgc-switch-epoch", cfg.idgc.pen_switch_epoch)->capture_default_str();
  app.add_option("--idgc-lambda-pen-late", cfg.idgc.lambda_pen_late)->capture_default_str();
  app.add_option("--idgc-max-steps", cfg.idgc.max_steps)->capture_default_str();
  app.add_option("--qgc-epochs", cfg.qgc.epochs)->capture_default_str();
  app.add_option("--qgc-batch", cfg.qgc.batch)->capture_default_str();
  app.add_option("--qgc-lambda-para", cfg.qgc.weights.para)->capture_default_str();
  app.add_option("--qgc-lambda-chamfer", cfg.qgc.weights.chamfer)->capture_default_str();
  app.add_option("--qgc-lambda-pen", cfg.qgc.weights.pen)->capture_default_str();
  app.add_option("--qgc-lambda-cmap", cfg.qgc.weights.cmap)->capture_default_str();
  app.add_option("--qgc-lambda-spen", cfg.qgc.weights.spen)->capture_default_str();
  app.add_option("--qgc-max-steps", cfg.qgc.max_steps)->capture_default_str();
  app.add_option("--pairs-per-condition", cfg.pairs_per_condition)->capture_default_str();
  app.add_option("--lr-initial", lr_initial)->capture_default_str();
  app.add_option("--lr-final", lr_final)->capture_default_str();
  app.add_option("--weight-decay", weight_decay)->capture_default_str();

  app.add_option("--samples", cfg.samples, "Samples per eval group")->capture_default_str();
  app.add_option("--q1-mu", cfg.eval.q1.mu)->capture_default_str();
  app.add_option("--q1-cone-edges", cfg.eval.q1.cone_edges)->capture_default_str();
  app.add_option("--q1-directions", cfg.eval.q1.directions)->capture_default_str();
  app.add_option("--sweep-weights", cfg.sweep, "IDGC penetration weights of the sweep")->delimiter(',');
  app.add_option("--switch-epoch", cfg.switch_epoch)->capture_default_str();
  app.add_option("--switch-lambda", cfg.switch_lambda)->capture_default_str();

  app.add_subcommand("gen-dataset", "Forge the synthetic grasp dataset");
  app.add_subcommand("retarget", "Retarget constructed source grasps and report per-case residuals");
  app.add_subcommand("train-idgc", "Train the diffusion component");
  app.add_subcommand("train-qgc", "Build refinement pairs and train the quality component");
  auto* sample = app.add_subcommand("sample", "Sample grasps for every group of a split");
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate the trained pipeline on the eval split");
  auto* ablate = app.add_subcommand("ablate", "Run the ablation sweeps and trend verdicts");
  bool coarse = false;
  std::string split = "eval";
  sample->add_flag("--coarse", coarse, "Skip the quality component");
  sample->add_option("--split", split)->check(CLI::IsMember({"train", "eval"}))->capture_default_str();
  evaluate->add_flag("--coarse", coarse, "Evaluate IDGC samples without refinement");
  std::string sweep;
  ablate->add_option("--sweep", sweep, "Sweep to run")->required()->check(CLI::IsMember({"pen-weight"}));

  std::vector<std::string> args(args_in.rbegin(), args_in.rend());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  cfg.idgc.lr.initial = cfg.qgc.lr.initial = lr_initial;
  cfg.idgc.lr.final_lr = cfg.qgc.lr.final_lr = lr_final;
  cfg.idgc.adam.weight_decay = cfg.qgc.adam.weight_decay = weight_decay;
  cfg.sync();
  const std::string root = output_root();
  if (paths.dataset.empty()) paths.dataset = (fs::path(root) / "gen-dataset" / "dataset").string();
  if (paths.idgc.empty()) paths.idgc = (fs::path(root) / "train-idgc" / "idgc.ckpt").string();
  if (paths.qgc.empty()) paths.qgc = (fs::path(root) / "train-qgc" / "qgc.ckpt").string();
  const fs::path dir = paths.out.empty() ? fs::path(root) / command : fs::path(paths.out);

  const auto t0 = std::chrono::steady_clock::now();
  int code = 0;
  try {
    fs::create_directories(dir);
    if (command == "gen-dataset") code = cmd_gen_dataset(cfg, paths, dir);
    else if (command == "retarget") code = cmd_retarget(cfg, paths, dir);
    else if (command == "train-idgc") code = cmd_train_idgc(cfg, paths, dir);
    else if (command == "train-qgc") code = cmd_train_qgc(cfg, paths, dir);
    else if (command == "sample") code = cmd_sample(cfg, paths, dir, coarse, split);
    else if (command == "evaluate") code = cmd_evaluate(cfg, paths, dir, coarse);
    else if (command == "ablate") code = cmd_ablate(cfg, paths, dir);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 3;
  } catch (const NumericFault& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    code = 5;
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  try {
    write_manifest(dir, command, cfg, paths, wall, code);
  } catch (const std::exception& e) {
    std::cerr << "error: cannot write run manifest: " << e.what() << "\n";
    if (code == 0) code = 3;
  }
  return code;
}

}  // namespace langgrasp::cli
