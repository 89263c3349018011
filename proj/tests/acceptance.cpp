// Acceptance suite: one PASS/FAIL line per criterion.
// Run with --write-golden to regenerate the golden vulnerability report.

#include "oracles.hpp"

#include "morphbench/cli.hpp"
#include "morphbench/losses.hpp"
#include "morphbench/mad.hpp"
#include "morphbench/models.hpp"
#include "morphbench/morph.hpp"
#include "morphbench/quality.hpp"
#include "morphbench/random.hpp"
#include "morphbench/vuln.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace morphbench;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kGradRelTol = 1e-5;
constexpr double kFdEps = 1e-5;
constexpr double kPrintedFormTol = 1e-12;
constexpr double kMsSsimSelfTol = 1e-9;
constexpr double kMsSsimSymTol = 1e-12;
constexpr double kSsimOracleTol = 1e-10;
constexpr double kAdamTol = 1e-10;
constexpr double kEerTol = 0.01;

// Time budgets in seconds.
constexpr double kGradBudget = 5.0;
constexpr double kSsimBudget = 10.0;
constexpr double kMorphBudget = 120.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path data_dir() {
  if (const char* env = std::getenv("MORPHBENCH_TEST_DATA")) return env;
  return MORPHBENCH_DATA_DIR;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Eigen::VectorXd random_vector(Rng& rng, Index n) {
  Eigen::VectorXd v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

Tensor random_image(Rng& rng, Index c, Index h, Index w) {
  Buffer v(c * h * w);
  for (auto& x : v) x = rng.uniform();
  return Tensor::from({c, h, w}, std::move(v));
}

Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  Rng rng(101);
  double worst_fd = 0;
  double worst_printed = 0;
  double gap = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd x = random_vector(rng, 64);
    const Eigen::VectorXd y = random_vector(rng, 64);
    const Eigen::VectorXd z = random_vector(rng, 64);
    const Tensor v1 = Tensor::from({64}, x.array());
    const Tensor v2 = Tensor::from({64}, y.array());
    Tensor vm = Tensor::from({64}, z.array(), true);
    worst_fd = std::max(worst_fd, grad_check([&](const Tensor& t) { return identity_loss(v1, v2, t); }, vm, kFdEps));

    identity_loss(v1, v2, vm).backward();
    const Eigen::VectorXd autodiff = vm.grad().matrix();
    const Eigen::VectorXd closed = identity_loss_grad_closed_form(x, y, z);
    worst_printed = std::max(worst_printed, (closed - oracle::printed_identity_grad(x, y, z)).cwiseAbs().maxCoeff());
    gap = std::max(gap, (closed - autodiff).cwiseAbs().maxCoeff());
  }
  const double elapsed = seconds_since(t0);
  o.require(worst_fd <= kGradRelTol, fmt::format("autodiff vs central differences {:.2e}", worst_fd));
  o.require(worst_printed <= kPrintedFormTol, fmt::format("closed form vs printed oracle {:.2e}", worst_printed));
  o.require(elapsed < kGradBudget, fmt::format("took {:.2f} s", elapsed));
  if (o.pass) {
    o.detail = fmt::format("fd rel err {:.2e}, printed form reproduced to {:.1e}, printed form vs true gradient max "
                           "gap {:.3f}, {:.2f} s",
                           worst_fd, worst_printed, gap, elapsed);
  }
  return o;
}

Outcome ms_ssim_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  Rng rng(102);
  const MsSsimParams params;
  double self = 0;
  double sym = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_image(rng, 3, 176, 176);
    const Tensor y = random_image(rng, 3, 176, 176);
    self = std::max(self, std::abs(ms_ssim(x, x, params).item() - 1.0));
    sym = std::max(sym, std::abs(ms_ssim(x, y, params).item() - ms_ssim(y, x, params).item()));
  }
  double windowed = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Image a(1, 32, 32);
    Image b(1, 32, 32);
    oracle::Grid ga(32, std::vector<double>(32));
    oracle::Grid gb = ga;
    for (Index i = 0; i < 32; ++i)
      for (Index j = 0; j < 32; ++j) {
        ga[i][j] = a.channel(0)(i, j) = rng.uniform();
        gb[i][j] = b.channel(0)(i, j) = std::clamp(ga[i][j] + rng.normal(0.0, 0.1), 0.0, 1.0);
      }
    windowed = std::max(windowed, std::abs(ssim_global(a, b) - oracle::ssim(ga, gb)));
  }
  const double elapsed = seconds_since(t0);
  o.require(self <= kMsSsimSelfTol, fmt::format("|ms_ssim(x,x) - 1| = {:.2e}", self));
  o.require(sym <= kMsSsimSymTol, fmt::format("asymmetry {:.2e}", sym));
  o.require(windowed <= kSsimOracleTol, fmt::format("ssim vs window oracle {:.2e}", windowed));
  o.require(elapsed < kSsimBudget, fmt::format("took {:.2f} s", elapsed));
  if (o.pass) {
    o.detail = fmt::format("self {:.1e}, asymmetry {:.1e}, window oracle {:.1e}, {:.2f} s", self, sym, windowed, elapsed);
  }
  return o;
}

Outcome optimizer_conformance() {
  Outcome o;
  OptimizerConfig cfg;
  const auto expected = oracle::adam_on_square(1.5, 50, cfg.lr0);
  AdamState st(1);
  Buffer x = Buffer::Constant(1, 1.5);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    adam_step(st, x, 2.0 * x, cfg.lr0, cfg, t);
    worst = std::max(worst, std::abs(x(0) - expected[static_cast<std::size_t>(t)]));
  }
  o.require(worst <= kAdamTol, fmt::format("trajectory deviates by {:.2e}", worst));
  o.require(lr_at(0, cfg) == 0.03, fmt::format("lr_at(0) = {}", lr_at(0, cfg)));
  o.require(lr_at(149, cfg) == 0.03 * std::pow(0.95, 24), fmt::format("lr_at(149) = {}", lr_at(149, cfg)));
  if (o.pass) o.detail = fmt::format("max trajectory deviation {:.1e}, lr_at(149) = {:.17g}", worst, lr_at(149, cfg));
  return o;
}

bool same_trace(const std::vector<TraceRow>& a, const std::vector<TraceRow>& b) {
  if (a.size() != b.size()) return false;
  const auto bits = [](const TraceRow& r) {
    return std::array{std::bit_cast<std::uint64_t>(r.lr),         std::bit_cast<std::uint64_t>(r.total),
                      std::bit_cast<std::uint64_t>(r.perceptual), std::bit_cast<std::uint64_t>(r.identity),
                      std::bit_cast<std::uint64_t>(r.ms_ssim),    std::bit_cast<std::uint64_t>(r.id_diff),
                      std::bit_cast<std::uint64_t>(r.cos1),       std::bit_cast<std::uint64_t>(r.cos2)};
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].iteration != b[i].iteration || bits(a[i]) != bits(b[i])) return false;
  }
  return true;
}

Outcome end_to_end_morph() {
  Outcome o;
  const ModelBundle models = make_toy_models(7, 64, {18, 512}, 64);
  const Tensor i1 = toy_face(1);
  const Tensor i2 = toy_face(2);
  const OptimizerConfig cfg;
  const auto t0 = std::chrono::steady_clock::now();
  const MorphResult a = optimize_morph(i1, i2, models, cfg);
  const double elapsed = seconds_since(t0);
  const MorphResult b = optimize_morph(i1, i2, models, cfg);
  o.require(a.ok() && b.ok(), "optimization failed");
  if (!o.pass) return o;
  o.require(a.trace.size() == 150, fmt::format("{} iterations", a.trace.size()));
  o.require(same_trace(a.trace, b.trace), "traces differ between runs");
  const auto& first = a.trace.front();
  const auto& last = a.trace.back();
  o.require(last.total < first.total, fmt::format("total {:.6f} -> {:.6f}", first.total, last.total));
  o.require(last.cos1 > first.cos1, fmt::format("cos1 {:.4f} -> {:.4f}", first.cos1, last.cos1));
  o.require(last.cos2 > first.cos2, fmt::format("cos2 {:.4f} -> {:.4f}", first.cos2, last.cos2));
  o.require(elapsed < kMorphBudget, fmt::format("took {:.1f} s", elapsed));
  if (o.pass) {
    o.detail = fmt::format("total {:.4f} -> {:.4f}, cos1 {:.4f} -> {:.4f}, cos2 {:.4f} -> {:.4f}, bit-identical rerun, "
                           "{:.1f} s",
                           first.total, last.total, first.cos1, last.cos1, first.cos2, last.cos2, elapsed);
  }
  return o;
}

std::vector<MorphScores> random_morphs(Rng& rng) {
  std::vector<MorphScores> morphs(static_cast<std::size_t>(rng.integer(1, 500)));
  for (std::size_t i = 0; i < morphs.size(); ++i) {
    auto& m = morphs[i];
    m.id = fmt::format("m{}", i);
    const auto p = rng.integer(1, 8);
    for (int k = 0; k < 2; ++k) {
      const auto count = rng.uniform() < 0.2 ? rng.integer(1, p) : p;
      std::vector<double> row;
      for (std::int64_t a = 0; a < count; ++a) row.push_back(static_cast<double>(rng.integer(0, 100)) / 100.0);
      m.attempts.push_back(std::move(row));
    }
  }
  return morphs;
}

Outcome vulnerability_oracle() {
  Outcome o;
  Rng rng(105);
  int mismatches = 0;
  int order = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ScoreSet s;
    s.morphs = random_morphs(rng);
    std::vector<std::vector<std::vector<double>>> nested;
    for (const auto& m : s.morphs) nested.push_back(m.attempts);
    const double t = static_cast<double>(rng.integer(0, 100)) / 100.0;
    const double f = fmmpmr(s, t);
    const double m = mmpmr(s, t);
    mismatches += f != oracle::fmmpmr(nested, t);
    mismatches += m != oracle::mmpmr(nested, t);
    order += f > m;
    mismatches += rmmr(f, 0.0) != f || rmmr(m, 0.0) != m;
  }
  o.require(mismatches == 0, fmt::format("{} mismatches against recount", mismatches));
  o.require(order == 0, fmt::format("fmmpmr > mmpmr in {} trials", order));
  if (o.pass) o.detail = "50 sets: exact recount equality, fmmpmr <= mmpmr, rmmr(rate, 0) == rate";
  return o;
}

Outcome threshold_contract() {
  Outcome o;
  Rng rng(106);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pool(static_cast<std::size_t>(rng.integer(500, 5000)));
    const bool coarse = trial % 2 == 0;
    for (auto& s : pool) s = coarse ? static_cast<double>(rng.integer(0, 300)) / 100.0 : rng.normal();
    const double t = threshold_at_fmr(pool, 0.001);
    const double achieved = oracle::rate_above(pool, t);
    double best = -1;
    for (double c : pool) {
      const double r = oracle::rate_above(pool, c);
      if (r <= 0.001) best = std::max(best, r);
    }
    bad += achieved > 0.001 || achieved != best;
  }
  o.require(bad == 0, fmt::format("{} pools violate the contract", bad));
  if (o.pass) o.detail = "50 pools: fmr <= 0.001 and maximal over candidates";
  return o;
}

Outcome mad_metrics() {
  Outcome o;
  Rng rng(107);
  MadScores gauss;
  for (int i = 0; i < 100000; ++i) {
    gauss.attack.push_back(rng.normal(2.0, 1.0));
    gauss.bona_fide.push_back(rng.normal(0.0, 1.0));
  }
  const double phi = 0.5 * std::erfc(1.0 / std::sqrt(2.0));
  const double eer = d_eer(gauss).eer;
  o.require(std::abs(eer - phi) <= kEerTol, fmt::format("d_eer {:.4f} vs {:.4f}", eer, phi));

  MadScoreSet separable;
  for (int i = 0; i < 100; ++i) {
    for (const char* m : {"stylegan", "landmark"}) {
      separable.rows.push_back({true, 1.0, m, "digital", m});
      separable.rows.push_back({false, 0.0, "", "digital", m});
    }
  }
  const MadReport grid = mad_grid_report(separable, 2);
  for (const char* m : {"stylegan", "landmark"}) {
    const MadCell* c = grid.find(m, m, "digital");
    o.require(c && c->d_eer == 0.0 && c->bpcer_at_apcer5 == 0.0 && c->bpcer_at_apcer10 == 0.0,
              fmt::format("{} diagonal not zero", m));
  }

  int mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    MadScores s;
    const double shift = rng.uniform(0.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
      s.attack.push_back(std::round(rng.normal(shift, 1.0) * 20) / 20);
      s.bona_fide.push_back(std::round(rng.normal(0.0, 1.0) * 20) / 20);
    }
    for (double target : {0.05, 0.10}) {
      mismatches += bpcer_at_apcer(s, target) != oracle::bpcer_at_apcer(s.attack, s.bona_fide, target);
    }
  }
  o.require(mismatches == 0, fmt::format("bpcer_at_apcer differs from scan {} times", mismatches));
  if (o.pass) o.detail = fmt::format("gaussian d_eer {:.4f} (target {:.4f}), zero diagonal, 20 scan matches", eer, phi);
  return o;
}

Outcome ablation_harness() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "morphbench_acceptance_ablation";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "pairs.csv") << "morph_id,subject1_image,subject2_image\nm1,face:1,face:2\n";
  const int code =
      cli::run_cli({"morph", "--pairs", (dir / "pairs.csv").string(), "--models", "toy:7", "--out", (dir / "out").string(),
                    "--ablation", "--jobs", "1"});
  o.require(code == 0, fmt::format("morph --ablation exited {}", code));
  const char* runs[] = {"no_lambda1_perceptual", "no_lambda2_identity", "no_lambda3_ms_ssim", "no_lambda4_id_diff"};
  for (int k = 0; k < 4 && o.pass; ++k) {
    std::istringstream in(slurp(dir / "out" / runs[k] / "m1_trace.csv"));
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    bool zero = true;
    bool finite = true;
    while (std::getline(in, line)) {
      ++rows;
      std::istringstream fields(line);
      std::string f;
      for (int col = 0; std::getline(fields, f, ','); ++col) {
        const double v = std::stod(f);
        finite = finite && std::isfinite(v);
        if (col == 3 + k) zero = zero && v == 0.0;
      }
    }
    o.require(rows == 150, fmt::format("{}: {} rows", runs[k], rows));
    o.require(zero, fmt::format("{}: disabled column not zero", runs[k]));
    o.require(finite, fmt::format("{}: non-finite column", runs[k]));
  }
  fs::remove_all(dir);
  if (o.pass) o.detail = "four runs, disabled column identically zero, all columns finite";
  return o;
}

ScoreSet golden_scores(std::size_t* rows) {
  SyntheticScoreConfig config;
  config.seed = 2024;
  config.morphs = 12000;
  config.genuine = 10000;
  config.impostor = 40000;
  const std::string text = write_score_csv(synthetic_scores(config));
  *rows = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')) - 1;
  return parse_score_csv(text);
}

Outcome round_trip(bool write_golden) {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "morphbench_acceptance_weights";
  fs::create_directories(dir);
  const ModelBundle original = make_toy_models(7);
  save_model_weights(original, dir / "a.mbw");
  const ModelBundle loaded = load_model_weights(dir / "a.mbw");
  save_model_weights(loaded, dir / "b.mbw");
  bool equal = original.weights->size() == loaded.weights->size();
  for (std::size_t i = 0; equal && i < original.weights->size(); ++i) {
    const auto& x = (*original.weights)[i];
    const auto& y = (*loaded.weights)[i];
    equal = x.name == y.name && x.value.shape() == y.value.shape() &&
            std::memcmp(x.value.value().data(), y.value.value().data(), sizeof(double) * x.value.value().size()) == 0;
  }
  o.require(equal, "loaded weights differ");
  o.require(slurp(dir / "a.mbw") == slurp(dir / "b.mbw"), "re-saved container differs");
  fs::remove_all(dir);

  std::size_t rows = 0;
  const ScoreSet scores = golden_scores(&rows);
  const VulnReport report = vulnerability_report(scores);
  int recount = 0;
  for (const auto& g : report.groups) {
    std::vector<std::vector<std::vector<double>>> cell;
    for (const auto& m : scores.morphs) {
      if (m.medium == g.medium && (g.gender == kCombined || m.gender == g.gender)) cell.push_back(m.attempts);
    }
    recount += g.mmpmr != oracle::mmpmr(cell, report.threshold) || g.fmmpmr != oracle::fmmpmr(cell, report.threshold);
  }
  o.require(recount == 0, fmt::format("{} groups disagree with recount", recount));
  const std::string csv = vuln_report_csv(report);
  const std::string json = vuln_report_json(report);
  const fs::path golden = data_dir();
  if (write_golden) {
    std::ofstream(golden / "golden_vuln_grid.csv", std::ios::binary) << csv;
    std::ofstream(golden / "golden_vuln_report.json", std::ios::binary) << json;
  }
  o.require(rows >= 100000, fmt::format("score file has {} rows", rows));
  o.require(csv == slurp(golden / "golden_vuln_grid.csv"), "grid differs from golden");
  o.require(json == slurp(golden / "golden_vuln_report.json"), "report differs from golden");
  if (o.pass) o.detail = fmt::format("weights bit-exact; {} score rows reproduce the golden report", rows);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const bool write_golden = argc > 1 && std::string(argv[1]) == "--write-golden";
  setenv("MORPHBENCH_LOG", "error", 0);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"ms-ssim correctness", ms_ssim_correctness},
      {"optimizer conformance", optimizer_conformance},
      {"end-to-end morph run", end_to_end_morph},
      {"vulnerability metrics oracle equivalence", vulnerability_oracle},
      {"threshold contract", threshold_contract},
      {"mad metrics", mad_metrics},
      {"ablation harness", ablation_harness},
      {"round-trip and format", [&] { return round_trip(write_golden); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    failed += !o.pass;
    fmt::print("{} {} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
