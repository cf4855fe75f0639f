// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "langgrasp/cli/cli.hpp"
#include "langgrasp/cli/pipeline.hpp"
#include "langgrasp/gen/diffusion.hpp"
#include "langgrasp/hoir/hoir.hpp"
#include "langgrasp/io/binary.hpp"
#include "langgrasp/metrics/metrics.hpp"
#include "support/scenes.hpp"
#include "support/gradient_suite.hpp"

using namespace langgrasp;
namespace fs = std::filesystem;
using hand::GraspPose;
using hand::HandModel;
using hand::Vec3;

namespace {

// Tolerances.
constexpr double kGradRelTol = 1e-3;
constexpr double kGradSeconds = 60;
constexpr double kMomentTol = 0.02;
constexpr double kConstantDenoiserTol = 0.05;
constexpr double kOracleRelTol = 1e-12;
constexpr double kStep2Reduction = 0.9;
constexpr double kStep3Reduction = 0.5;
constexpr double kDriftMax = 0.02;
constexpr double kHoirSeconds = 300;
constexpr double kSpearmanMax = -0.8;
constexpr double kAblationSeconds = 1800;
constexpr double kConWithin = 2.0;
constexpr double kQ1OracleTol = 0.1;
constexpr double kFrechetSelfTol = 1e-8;
constexpr double kFrechet1dTol = 1e-12;

const HandModel& toy() {
  static const HandModel h = HandModel::toy_hand12();
  return h;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok " : "FAILED ") + what);
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

double sqdist(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Nearest index by an explicit loop, lowest index on ties.
std::size_t nearest(const Vec3& p, const std::vector<Vec3>& set, double* d2 = nullptr) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = sqdist(p, set[i]);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  if (d2) *d2 = bd;
  return best;
}

double oracle_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double s = 0, d = 0;
  for (const auto& p : a) nearest(p, b, &d), s += d;
  for (const auto& q : b) nearest(q, a, &d), s += d;
  return s;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({1e-300, std::abs(a), std::abs(b)}); }

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = testing_support::run_gradient_suite(20, 2024);
  const double secs = seconds_since(t0);
  for (const auto& [name, err] : r.worst)
    o.check(err <= kGradRelTol && r.configs.at(name) >= 20,
            name + " max rel err " + fmt(err) + " over " + std::to_string(r.configs.at(name)) + " configs");
  o.check(secs < kGradSeconds, "runtime " + fmt(secs) + " s");
  return o;
}

Outcome criterion_diffusion() {
  Outcome o;
  const auto s = gen::DiffusionSchedule::linear(100);
  Rng rng(77);
  const int n = 100000;
  std::vector<double> closed(n), iterated(n);
  const std::vector<double> x0{1.0};
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    closed[i] = gen::forward_diffuse(s, x0, 100, std::span<const double>(&z, 1))[0];
    std::vector<double> x = x0;
    for (int t = 1; t <= 100; ++t) {
      z = rng.normal();
      x = gen::forward_step(s, x, t, std::span<const double>(&z, 1));
    }
    iterated[i] = x[0];
  }
  auto moments = [](const std::vector<double>& v) {
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return std::pair{m, q / static_cast<double>(v.size())};
  };
  const auto [mc, vc] = moments(closed);
  const auto [mi, vi] = moments(iterated);
  const double mean = std::sqrt(s.alpha_bar.back()), var = 1 - s.alpha_bar.back();
  o.check(std::abs(mc - mean) <= kMomentTol * mean && std::abs(mi - mean) <= kMomentTol * mean,
          "means closed " + fmt(mc) + " iterated " + fmt(mi) + " analytic " + fmt(mean));
  o.check(std::abs(vc - var) <= kMomentTol * var && std::abs(vi - var) <= kMomentTol * var,
          "variances closed " + fmt(vc) + " iterated " + fmt(vi) + " analytic " + fmt(var));

  const auto id = gen::DiffusionSchedule::from_betas(std::vector<double>(100, 0.0));
  bool exact = true;
  std::vector<double> x(21), z(21);
  for (auto& v : x) v = rng.normal();
  for (int t = 1; t <= 100; ++t) {
    for (auto& v : z) v = rng.normal();
    const auto y = gen::forward_diffuse(id, x, t, z);
    exact = exact && std::memcmp(y.data(), x.data(), x.size() * sizeof(double)) == 0;
  }
  o.check(exact, "identity schedule reproduces x0 bit-exactly at every step");

  const std::vector<double> c{0.3, -0.8, 0.5, 0.0};
  const gen::X0Fn constant = [&](const std::vector<double>& xt, int) {
    std::vector<double> out(xt.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[i % c.size()];
    return out;
  };
  std::vector<Rng> rngs;
  for (std::uint64_t r = 0; r < 500; ++r) rngs.push_back(Rng(5).stream(r));
  const auto samples = gen::ddpm_sample(s, constant, c.size(), rngs);
  double worst = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) worst = std::max(worst, std::abs(samples[i] - c[i % c.size()]));
  o.check(worst <= kConstantDenoiserTol, "constant denoiser worst error " + fmt(worst) + " over 500 samples");
  return o;
}

Outcome criterion_oracles() {
  Outcome o;
  Rng rng(303);
  auto cloud = [&](std::size_t n, double s) {
    std::vector<Vec3> v(n);
    for (auto& p : v) p = Vec3(rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s));
    return v;
  };
  const int instances = 60;
  int cham = 0, cmap = 0, assign = 0, pairs = 0, spen = 0;
  for (int k = 0; k < instances; ++k) {
    const auto a = cloud(3 + rng.below(30), 0.05), b = cloud(3 + rng.below(30), 0.05);
    const double plain = losses::chamfer(a, b);
    const double graph = losses::loss_chamfer(losses::stack_points({&a}), losses::stack_points({&b})).item();
    const double oracle = oracle_chamfer(a, b);
    cham += rel_close(plain, oracle, kOracleRelTol) && rel_close(graph, oracle, kOracleRelTol);

    const auto map = losses::contact_map(a, b);
    const auto gmap = losses::contact_map(losses::stack_points({&a}), losses::stack_points({&b}));
    bool ok = map.size() == a.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) {
      double d2;
      nearest(a[i], b, &d2);
      ok = map[i] == std::sqrt(d2) && rel_close(gmap[i], std::sqrt(d2), kOracleRelTol);
    }
    cmap += ok;
  }
  o.check(cham == instances, "chamfer " + std::to_string(cham) + "/" + std::to_string(instances));
  o.check(cmap == instances, "contact map " + std::to_string(cmap) + "/" + std::to_string(instances));

  for (int k = 0; k < instances; ++k) {
    std::vector<GraspPose> cands;
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) cands.push_back(testing_support::pose_facing_origin(toy(), rng, 0.05, 0.1));
    const auto pred = testing_support::pose_facing_origin(toy(), rng, 0.05, 0.1);
    const auto pc = toy().forward(pred).points;
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const double d = oracle_chamfer(pc, toy().forward(cands[i]).points);
      if (d < bd) bd = d, best = i;
    }
    assign += metrics::assign_target(toy(), pred, cands) == best;
  }
  o.check(assign == instances, "target assignment " + std::to_string(assign) + "/" + std::to_string(instances));

  for (int k = 0; k < instances; ++k) {
    std::vector<const std::vector<Vec3>*> cand_ptrs;
    std::vector<std::vector<Vec3>> cand(1 + rng.below(6));
    for (auto& c : cand) c = toy().forward(testing_support::pose_facing_origin(toy(), rng, 0.05, 0.1)).points;
    for (const auto& c : cand) cand_ptrs.push_back(&c);
    const auto q = toy().forward(testing_support::pose_facing_origin(toy(), rng, 0.05, 0.1)).points;
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cand.size(); ++i) {
      const double d = oracle_chamfer(q, cand[i]);
      if (d < bd) bd = d, best = i;
    }
    pairs += gen::nearest_by_chamfer(q, cand_ptrs) == best;
  }
  o.check(pairs == instances, "pair matching " + std::to_string(pairs) + "/" + std::to_string(instances));

  for (int k = 0; k < instances; ++k) {
    const auto p = testing_support::pose_facing_origin(toy(), rng, 0.03, 0.4);
    const auto hc = toy().forward(p);
    double oracle = 0;
    const auto& link = toy().anchor_link();
    const auto& parent = toy().link_parent();
    for (std::size_t i = 0; i < hc.anchors.size(); ++i)
      for (std::size_t j = 0; j < hc.anchors.size(); ++j) {
        if (link[i] == link[j] || parent[link[i]] == link[j] || parent[link[j]] == link[i]) continue;
        oracle += std::max(0.0, toy().anchor_radius()[i] + toy().anchor_radius()[j] - (hc.anchors[i] - hc.anchors[j]).norm());
      }
    const double v = losses::loss_spen(toy(), toy().forward(ad::Tensor::from({1, 21}, p.to_vector()))).item();
    spen += std::abs(v - oracle) <= kOracleRelTol * std::max(1.0, oracle);
  }
  o.check(spen == instances, "self-penetration " + std::to_string(spen) + "/" + std::to_string(instances));
  return o;
}

Outcome criterion_hoir() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = hoir::benchmark_cases(toy(), 100, 0, 512);
  int step2_ok = 0, drift_ok = 0, t_ok = 0;
  double red2 = 0, pen2 = 0, pen3 = 0, worst_drift = 0;
  for (const auto& k : cases) {
    const auto p1 = hoir::step1_initialize(toy(), k.c.spec);
    const auto p2 = hoir::step2_fingertip_align(toy(), k.c.spec, p1);
    const double r0 = hoir::fingertip_residual(toy(), p1, k.c.spec), r1 = hoir::fingertip_residual(toy(), p2, k.c.spec);
    step2_ok += r1 <= (1 - kStep2Reduction) * r0;
    red2 += 1 - r1 / r0;
    const auto r3 = hoir::step3_interaction_refine(toy(), k.object_points, p2);
    pen2 += losses::max_penetration(k.object_points, toy().forward(p2));
    pen3 += r3.report.max_penetration;
    drift_ok += r3.report.cmap_drift <= kDriftMax;
    worst_drift = std::max(worst_drift, r3.report.cmap_drift);
    t_ok += std::memcmp(r3.pose.t.data(), p2.t.data(), sizeof(double) * 3) == 0;
  }
  const double secs = seconds_since(t0);
  o.check(step2_ok == 100, "step 2 residual reduced >= 90% on " + std::to_string(step2_ok) + "/100 specs (mean reduction " +
                               fmt(100 * red2 / 100) + "%)");
  o.check(pen3 <= (1 - kStep3Reduction) * pen2,
          "step 3 mean max penetration " + fmt(pen2 / 100 * 1000) + " mm -> " + fmt(pen3 / 100 * 1000) + " mm");
  o.check(drift_ok == 100, "contact-map drift <= 0.02 on " + std::to_string(drift_ok) + "/100 (worst " + fmt(worst_drift) + ")");
  o.check(t_ok == 100, "translation bit-identical on " + std::to_string(t_ok) + "/100");
  o.check(secs < kHoirSeconds, "runtime " + fmt(secs) + " s");
  return o;
}

struct AblationRun {
  cli::AblationResult result;
  double forge_s = 0, ablate_s = 0;
  std::string error;
};

const AblationRun& ablation() {
  static const AblationRun run = [] {
    AblationRun r;
    try {
      cli::RunConfig cfg;
      cfg.sync();
      auto t0 = std::chrono::steady_clock::now();
      std::cerr << "[acceptance] forging the default dataset\n";
      const auto d = dataset::generate_dataset(toy(), cfg.forge);
      r.forge_s = seconds_since(t0);
      t0 = std::chrono::steady_clock::now();
      r.result = cli::run_ablation(toy(), d, cfg, [](const std::string& s) { std::cerr << "[acceptance] " << s << "\n"; });
      r.ablate_s = seconds_since(t0);
      std::cerr << cli::table2_csv(r.result) << cli::table3_csv(r.result);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  }();
  return run;
}

Outcome verdicts(const std::vector<std::string>& names) {
  Outcome o;
  const auto& a = ablation();
  if (!a.error.empty() || !a.result.failure.empty()) o.check(false, "ablation fault: " + a.error + a.result.failure);
  for (const auto& n : names) {
    auto it = std::find_if(a.result.verdicts.begin(), a.result.verdicts.end(), [&](const auto& v) { return v.name == n; });
    if (it == a.result.verdicts.end()) o.check(false, n + " missing");
    else o.check(it->pass, n + " (" + it->detail + ")");
  }
  return o;
}

Outcome criterion_table2() {
  auto o = verdicts({"pen-decreases-with-weight", "delta-t-decreases-with-weight", "progressive-lower-cd", "qgc-lower-pen"});
  const auto& a = ablation();
  o.check(a.forge_s + a.ablate_s <= kAblationSeconds,
          "forge " + fmt(a.forge_s) + " s + train/ablate " + fmt(a.ablate_s) + " s");
  return o;
}

Outcome criterion_table3() {
  return verdicts({"hoir-step3-lower-pen", "hoir-step3-con-within-2x", "hoir-one-stage-worse-con"});
}

double dense_q1(const std::vector<metrics::Contact>& contacts, double radius, double mu, int edges, int n) {
  std::vector<metrics::Wrench> w;
  for (const auto& c : contacts) {
    const Vec3 nrm = c.normal.normalized();
    const Vec3 helper = std::abs(nrm.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(0, 1, 0);
    const Vec3 u = nrm.cross(helper).normalized(), v = nrm.cross(u);
    for (int k = 0; k < edges; ++k) {
      const double phi = 2 * M_PI * (k + 0.5) / edges;
      const Vec3 f = -nrm + mu * (std::cos(phi) * u + std::sin(phi) * v);
      metrics::Wrench x;
      x << f, (c.point / radius).cross(f);
      w.push_back(x);
    }
  }
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd;
  double q = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    metrics::Wrench d;
    for (int k = 0; k < 6; ++k) d[k] = nd(gen);
    d.normalize();
    double s = -std::numeric_limits<double>::infinity();
    for (const auto& x : w) s = std::max(s, d.dot(x));
    q = std::min(q, s);
  }
  return std::max(q, 0.0);
}

Outcome criterion_metrics() {
  Outcome o;
  metrics::Q1Config cfg;
  o.check(metrics::q1_from_contacts({{Vec3(1, 0, 0), Vec3(1, 0, 0)}}, Vec3::Zero(), 1.0, cfg) == 0.0, "Q1 single contact = 0");

  const auto ball = testing_support::ball(0.04);
  const auto cloud = ball.sample_surface(1024, 3);
  Rng rng(4);
  const auto deep = testing_support::pose_facing_origin(toy(), rng, -0.01);
  double depth = 0;
  for (const auto& p : cloud.points) depth = std::max(depth, -losses::hand_sdf(toy().forward(deep), p));
  o.check(depth > 0.005 && metrics::q1(cloud, 0.04, toy(), deep) == 0.0,
          "Q1 = 0 at penetration " + fmt(depth * 1000) + " mm");

  const std::vector<metrics::Contact> two{{Vec3(1, 0, 0), Vec3(1, 0, 0)}, {Vec3(-1, 0, 0), Vec3(-1, 0, 0)}};
  const double q = metrics::q1_from_contacts(two, Vec3::Zero(), 1.0, cfg);
  const double oracle = dense_q1(two, 1.0, 0.5, 8, 10000);
  o.check(q > 0, "Q1 antipodal contacts = " + fmt(q));
  o.check(std::abs(q - oracle) <= kQ1OracleTol * oracle, "Q1 vs 1e4-direction oracle " + fmt(oracle));

  const auto p = testing_support::pose_facing_origin(toy(), rng, 0.05);
  const auto div = metrics::diversity(std::vector<GraspPose>(8, p));
  o.check(div.delta_t == 0 && div.delta_r == 0 && div.delta_q == 0, "diversity of 8 identical samples = 0");

  std::vector<std::vector<double>> set;
  for (int i = 0; i < 80; ++i) {
    std::vector<double> v(21);
    for (auto& x : v) x = rng.normal();
    set.push_back(v);
  }
  const double self = metrics::pose_frechet(set, set).value;
  o.check(std::abs(self) <= kFrechetSelfTol, "pose Frechet self-distance " + fmt(self));
  Eigen::VectorXd a(1), b(1);
  a << 0;
  b << 1;
  const double one = metrics::frechet_gaussian(a, Eigen::MatrixXd::Identity(1, 1), b, Eigen::MatrixXd::Identity(1, 1)).value;
  o.check(std::abs(one - 1.0) <= kFrechet1dTol, "1-D Frechet N(0,1) vs N(1,1) = " + fmt(one));
  return o;
}

// Reads every file under dir; run.json files have their wall time removed.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    const auto bytes = io::read_file(e.path());
    std::string s(bytes.begin(), bytes.end());
    if (e.path().filename() == "run.json") {
      auto j = nlohmann::ordered_json::parse(s);
      j.erase("wall_time_s");
      s = j.dump();
    }
    out[rel] = s;
  }
  return out;
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path base = fs::temp_directory_path() / "langgrasp_acceptance_determinism";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path root = base / "runs";
  {
    std::ofstream c(base / "tiny.ini");
    c << "seed = 3\nthreads = 1\nobjects-per-category = 2\ngrasps-per-object = 4\nmax-failure-rate = 0.5\n"
         "idgc-epochs = 2\nqgc-epochs = 1\nhoir-cases = 3\nsamples = 8\n";
  }
  setenv("LANGGRASP_OUTPUT_ROOT", root.string().c_str(), 1);
  const std::vector<std::vector<std::string>> commands{
      {"gen-dataset"}, {"retarget"}, {"train-idgc"}, {"train-qgc"}, {"sample"}, {"sample", "--coarse"}, {"evaluate"},
      {"ablate", "--sweep", "pen-weight"}};
  std::vector<std::map<std::string, std::string>> snaps;
  for (int round = 0; round < 2; ++round) {
    fs::remove_all(root);
    std::vector<int> codes;
    for (const auto& c : commands) {
      std::vector<std::string> args{"--config", (base / "tiny.ini").string()};
      args.insert(args.end(), c.begin(), c.end());
      if (c.front() == "sample" && c.size() > 1) args.insert(args.begin() + 2, {"--out", (root / "sample-coarse").string()});
      codes.push_back(cli::run(args));
    }
    bool ok = true;
    for (std::size_t i = 0; i + 1 < codes.size(); ++i) ok = ok && codes[i] == 0;
    o.check(ok && (codes.back() == 0 || codes.back() == 1), "round " + std::to_string(round + 1) + " subcommands completed");
    snaps.push_back(snapshot(root));
  }
  unsetenv("LANGGRASP_OUTPUT_ROOT");
  std::set<std::string> dirs;
  std::size_t same = 0;
  std::vector<std::string> diff;
  for (const auto& [k, v] : snaps[0]) {
    dirs.insert(k.substr(0, k.find('/')));
    auto it = snaps[1].find(k);
    if (it != snaps[1].end() && it->second == v) ++same;
    else diff.push_back(k);
  }
  std::string which;
  for (const auto& d : dirs) which += (which.empty() ? "" : ",") + d;
  o.check(snaps[0].size() == snaps[1].size() && diff.empty(),
          std::to_string(same) + "/" + std::to_string(snaps[0].size()) + " artifacts byte-identical across " + which +
              (diff.empty() ? "" : " (first difference: " + diff.front() + ")"));
  o.check(dirs.size() == commands.size(), std::to_string(dirs.size()) + " subcommand output directories");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", criterion_gradients},
      {"diffusion math", criterion_diffusion},
      {"brute-force oracle equivalence", criterion_oracles},
      {"retargeting efficacy", criterion_hoir},
      {"penetration-weight ablation trends", criterion_table2},
      {"retargeting ablation trends", criterion_table3},
      {"metric unit suite", criterion_metrics},
      {"determinism", criterion_determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    std::ostringstream line;
    line << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << " ("
         << fmt(seconds_since(t0)) << " s)";
    for (const auto& n : o.notes) line << "\n    " << n;
    std::cout << line.str() << std::endl;
    lines.push_back(line.str().substr(0, line.str().find('\n')));
    all = all && o.pass;
  }
  std::cout << "\nsummary:\n";
  for (const auto& l : lines) std::cout << l << "\n";
  return all ? 0 : 1;
}
