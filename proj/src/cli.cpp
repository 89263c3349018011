#include "morphbench/cli.hpp"

#include "morphbench/error.hpp"
#include "morphbench/image.hpp"
#include "morphbench/mad.hpp"
#include "morphbench/models.hpp"
#include "morphbench/morph.hpp"
#include "morphbench/quality.hpp"
#include "morphbench/vuln.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace morphbench::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kPairHeader = "morph_id,subject1_image,subject2_image";

class ExitError : public std::runtime_error {
 public:
  ExitError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = std::make_shared<spdlog::logger>("morphbench", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

void configure_logging() {
  auto log = logger();
  const char* env = std::getenv("MORPHBENCH_LOG");
  const std::string level = env ? env : "info";
  static const std::map<std::string, spdlog::level::level_enum> levels{
      {"error", spdlog::level::err}, {"warn", spdlog::level::warn}, {"info", spdlog::level::info},
      {"debug", spdlog::level::debug}};
  const auto it = levels.find(level);
  log->set_level(it == levels.end() ? spdlog::level::info : it->second);
  if (it == levels.end()) log->warn("MORPHBENCH_LOG='{}' is not one of error, warn, info, debug", level);
}

std::string num(double v) { return fmt::format("{}", v); }

std::string read_text(const fs::path& path, int code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ExitError(code, fmt::format("cannot read '{}'", path.string()));
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw ExitError(kDataError, fmt::format("cannot write '{}'", path.string()));
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ExitError(kDataError, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

std::string absolute(const std::string& p) { return fs::absolute(p).lexically_normal().string(); }

json manifest_head(const std::string& command, const std::vector<std::string>& args) {
  json j;
  j["tool"] = "morphbench";
  j["command"] = command;
  j["args"] = args;
  return j;
}

// --- pairs -------------------------------------------------------------------

struct Pair {
  std::string id;
  std::string subject1;
  std::string subject2;
};

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." &&
         std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'; });
}

std::vector<Pair> read_pairs(const fs::path& path) {
  const std::string text = read_text(path, kConfigError);
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool header = false;
  std::vector<Pair> pairs;
  std::set<std::string> ids;
  const fs::path base = fs::absolute(path).parent_path();
  const auto resolve = [&](const std::string& ref) {
    if (ref.rfind("face:", 0) == 0 || fs::path(ref).is_absolute()) return ref;
    return (base / ref).lexically_normal().string();
  };
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kPairHeader) throw ExitError(kConfigError, fmt::format("pairs line {}: expected header '{}'", number, kPairHeader));
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) f.push_back(field);
    if (f.size() != 3 || f[1].empty() || f[2].empty()) {
      throw ExitError(kConfigError, fmt::format("pairs line {}: expected 3 non-empty fields", number));
    }
    if (!safe_id(f[0])) throw ExitError(kConfigError, fmt::format("pairs line {}: bad morph id '{}'", number, f[0]));
    if (!ids.insert(f[0]).second) throw ExitError(kConfigError, fmt::format("pairs line {}: duplicate morph id '{}'", number, f[0]));
    pairs.push_back({f[0], resolve(f[1]), resolve(f[2])});
  }
  if (!header) throw ExitError(kConfigError, fmt::format("pairs file '{}' has no header", path.string()));
  if (pairs.empty()) throw ExitError(kConfigError, fmt::format("pairs file '{}' lists no pairs", path.string()));
  return pairs;
}

// "face:<seed>" renders a procedural face; anything else is a PNG path.
Image load_subject(const std::string& ref, Index side) {
  if (ref.rfind("face:", 0) == 0) {
    const std::string seed = ref.substr(5);
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), value);
    if (seed.empty() || ec != std::errc() || end != seed.data() + seed.size()) {
      throw ExitError(kConfigError, fmt::format("bad face reference '{}'", ref));
    }
    return to_image(toy_face(value, side));
  }
  return read_png(ref);
}

LatentShape parse_latent_shape(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ExitError(kConfigError, fmt::format("--latent-shape '{}' is not RxC", text));
  LatentShape s;
  const auto parse = [&](const std::string& part, Index& out) {
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (part.empty() || ec != std::errc() || end != part.data() + part.size() || out < 1) {
      throw ExitError(kConfigError, fmt::format("--latent-shape '{}' is not RxC", text));
    }
  };
  parse(text.substr(0, x), s.layers);
  parse(text.substr(x + 1), s.dims);
  return s;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (unsigned w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

// --- morph -------------------------------------------------------------------

struct MorphOptions {
  std::string pairs;
  std::string models = "toy:7";
  std::string out;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string latent_shape = "18x512";
  Index image_side = 64;
  bool ablation = false;
  OptimizerConfig cfg;
};

std::vector<std::string> morph_args(const MorphOptions& o) {
  const auto& c = o.cfg;
  std::vector<std::string> a{"morph", "--pairs", o.pairs, "--models", o.models};
  const std::pair<const char*, std::string> values[] = {
      {"--seed", std::to_string(o.seed)},
      {"--jobs", std::to_string(o.jobs)},
      {"--iterations", std::to_string(c.iterations)},
      {"--lr0", num(c.lr0)},
      {"--decay", num(c.decay)},
      {"--decay-every", std::to_string(c.decay_every)},
      {"--lambda1", num(c.weights.perceptual)},
      {"--lambda2", num(c.weights.identity)},
      {"--lambda3", num(c.weights.ms_ssim)},
      {"--lambda4", num(c.weights.id_diff)},
      {"--latent-shape", o.latent_shape},
      {"--image-side", std::to_string(o.image_side)},
  };
  for (const auto& [flag, value] : values) {
    a.push_back(flag);
    a.push_back(value);
  }
  if (o.ablation) a.push_back("--ablation");
  return a;
}

json config_json(const OptimizerConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["lr0"] = c.lr0;
  j["decay"] = c.decay;
  j["decay_every"] = c.decay_every;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["lambda1_perceptual"] = c.weights.perceptual;
  j["lambda2_identity"] = c.weights.identity;
  j["lambda3_ms_ssim"] = c.weights.ms_ssim;
  j["lambda4_id_diff"] = c.weights.id_diff;
  j["seed"] = c.seed;
  return j;
}

struct MorphRun {
  std::string name;
  fs::path dir;
  OptimizerConfig cfg;
};

int cmd_morph(const MorphOptions& opt) {
  auto log = logger();
  const auto args = morph_args(opt);

  const std::vector<Pair> pairs = read_pairs(opt.pairs);
  OptimizerConfig cfg = opt.cfg;
  cfg.seed = opt.seed;
  try {
    cfg.validate();
  } catch (const ValueError& e) {
    throw ExitError(kConfigError, e.what());
  }
  if (opt.image_side < 1) throw ExitError(kConfigError, "--image-side must be positive");
  const LatentShape latent = parse_latent_shape(opt.latent_shape);

  ModelBundle models;
  try {
    models = resolve_models(opt.models, opt.image_side, latent);
  } catch (const Error& e) {
    throw ExitError(kDataError, fmt::format("models '{}': {}", opt.models, e.what()));
  }
  const Shape shape = models.image_shape();
  log->info("models {}: image {}x{}, latent {}x{}", opt.models, shape[1], shape[2], models.latent_shape().layers,
            models.latent_shape().dims);

  std::map<std::string, Tensor> images;
  for (const auto& p : pairs) {
    for (const auto& ref : {p.subject1, p.subject2}) {
      if (images.count(ref)) continue;
      Image img;
      try {
        img = load_subject(ref, shape[1]);
      } catch (const FormatError& e) {
        throw ExitError(kDataError, e.what());
      }
      if (img.channels() != shape[0] || img.height() != shape[1] || img.width() != shape[2]) {
        throw ExitError(kDataError, fmt::format("image '{}' is {}x{}x{}, models expect {}x{}x{}", ref, img.channels(),
                                                img.height(), img.width(), shape[0], shape[1], shape[2]));
      }
      images.emplace(ref, to_tensor(img));
    }
  }

  std::vector<MorphRun> runs;
  const fs::path out(opt.out);
  if (opt.ablation) {
    static const char* names[] = {"no_lambda1_perceptual", "no_lambda2_identity", "no_lambda3_ms_ssim",
                                  "no_lambda4_id_diff"};
    for (int k = 0; k < 4; ++k) {
      OptimizerConfig c = cfg;
      double* w[] = {&c.weights.perceptual, &c.weights.identity, &c.weights.ms_ssim, &c.weights.id_diff};
      *w[k] = 0.0;
      runs.push_back({names[k], out / names[k], c});
    }
  } else {
    runs.push_back({"main", out, cfg});
  }

  make_dir(out);
  json manifest = manifest_head("morph", args);
  manifest["models"] = opt.models;
  manifest["image_side"] = shape[1];
  manifest["latent_shape"] = {models.latent_shape().layers, models.latent_shape().dims};
  manifest["config"] = config_json(cfg);
  manifest["pairs"] = json::array();
  for (const auto& p : pairs) manifest["pairs"].push_back({{"id", p.id}, {"subject1", p.subject1}, {"subject2", p.subject2}});

  std::vector<std::string> failures;
  json run_list = json::array();
  for (const auto& run : runs) {
    make_dir(run.dir);
    std::vector<MorphResult> results(pairs.size());
    parallel_for(pairs.size(), opt.jobs, [&](std::size_t i) {
      const auto& p = pairs[i];
      results[i] = optimize_morph(images.at(p.subject1), images.at(p.subject2), models, run.cfg);
    });

    json morphs = json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      const auto& r = results[i];
      write_text(run.dir / (p.id + "_trace.csv"), trace_csv(r.trace));
      json m;
      m["id"] = p.id;
      m["trace"] = p.id + "_trace.csv";
      m["iterations_run"] = r.trace.size();
      if (r.ok()) {
        write_png(run.dir / (p.id + ".png"), to_image(r.image));
        m["image"] = p.id + ".png";
        m["status"] = "ok";
        const auto& last = r.trace.back();
        m["first_total"] = r.trace.front().total;
        m["last_total"] = last.total;
        m["last_cos1"] = last.cos1;
        m["last_cos2"] = last.cos2;
        log->info("{} {}: total {:.6g} -> {:.6g} in {:.2f} s", run.name, p.id, r.trace.front().total, last.total,
                  r.wall_seconds);
      } else {
        m["status"] = "failed";
        m["failure"] = *r.failure;
        failures.push_back(fmt::format("{}/{}: {}", run.name, p.id, *r.failure));
        log->error("{} {}: {}", run.name, p.id, *r.failure);
      }
      morphs.push_back(std::move(m));
    }
    json rj;
    rj["name"] = run.name;
    rj["dir"] = fs::relative(run.dir, out).string();
    rj["config"] = config_json(run.cfg);
    rj["morphs"] = std::move(morphs);
    run_list.push_back(std::move(rj));
  }
  manifest["runs"] = std::move(run_list);
  manifest["failures"] = failures;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return failures.empty() ? kOk : kComputeError;
}

// --- vuln --------------------------------------------------------------------

struct VulnCliOptions {
  std::string scores;
  std::string out;
  double fmr = 0.001;
  std::optional<double> threshold;
};

int cmd_vuln(const VulnCliOptions& opt) {
  auto log = logger();
  if (!(opt.fmr > 0.0 && opt.fmr < 1.0)) throw ExitError(kConfigError, fmt::format("--fmr {} outside (0, 1)", opt.fmr));
  std::vector<std::string> args{"vuln", "--scores", opt.scores, "--fmr", num(opt.fmr)};
  if (opt.threshold) {
    args.push_back("--threshold");
    args.push_back(num(*opt.threshold));
  }
  ScoreSet set;
  try {
    set = parse_score_csv(read_text(opt.scores, kDataError));
  } catch (const FormatError& e) {
    throw ExitError(kDataError, e.what());
  }
  const VulnReport report = vulnerability_report(set, {opt.fmr, opt.threshold});
  for (const auto& w : report.warnings) log->warn("{}", w);
  log->info("threshold {} (fmr {}), fnmr {}", report.threshold, report.empirical_fmr, report.fnmr);

  const fs::path out(opt.out);
  make_dir(out);
  write_text(out / "vuln_grid.csv", vuln_report_csv(report));
  write_text(out / "vuln_report.json", vuln_report_json(report));
  json manifest = manifest_head("vuln", args);
  manifest["outputs"] = {"vuln_grid.csv", "vuln_report.json"};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return kOk;
}

// --- quality -----------------------------------------------------------------

struct QualityCliOptions {
  std::string morphs;
  std::string pairs;
  std::string out;
  Index image_side = 64;
  unsigned jobs = 1;
};

int cmd_quality(const QualityCliOptions& opt) {
  auto log = logger();
  const auto pairs = read_pairs(opt.pairs);
  const std::vector<std::string> args{"quality", "--morphs", opt.morphs, "--pairs", opt.pairs,
                                      "--image-side", std::to_string(opt.image_side), "--jobs", std::to_string(opt.jobs)};

  std::vector<std::optional<QualityRecord>> records(pairs.size());
  std::vector<std::string> errors(pairs.size());
  parallel_for(pairs.size(), opt.jobs, [&](std::size_t i) {
    const auto& p = pairs[i];
    try {
      const Image morph = read_png(fs::path(opt.morphs) / (p.id + ".png"));
      records[i] = morph_quality(p.id, morph, load_subject(p.subject1, opt.image_side),
                                 load_subject(p.subject2, opt.image_side));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::vector<QualityRecord> good;
  std::string error_rows;
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (records[i]) {
      good.push_back(*records[i]);
    } else {
      failed.push_back(fmt::format("{}: {}", pairs[i].id, errors[i]));
      error_rows += pairs[i].id + ",ERROR,ERROR\n";
      log->warn("{}: {}", pairs[i].id, errors[i]);
    }
  }
  if (good.empty()) throw ExitError(kDataError, "quality: no morph could be evaluated");

  const QualityReport report = summarize_quality(good);
  for (const auto& w : report.warnings) log->warn("{}", w);
  const fs::path out(opt.out);
  make_dir(out);
  write_text(out / "quality.csv", quality_csv(report.records) + error_rows);
  write_text(out / "quality_summary.json", quality_summary_json(report));
  json manifest = manifest_head("quality", args);
  manifest["outputs"] = {"quality.csv", "quality_summary.json"};
  manifest["failures"] = failed;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return failed.empty() ? kOk : kPartial;
}

// --- mad ---------------------------------------------------------------------

struct MadCliOptions {
  std::string scores;
  std::string out;
  unsigned jobs = 1;
};

int cmd_mad(const MadCliOptions& opt) {
  auto log = logger();
  const std::vector<std::string> args{"mad", "--scores", opt.scores, "--jobs", std::to_string(opt.jobs)};
  MadScoreSet set;
  try {
    set = parse_mad_csv(read_text(opt.scores, kDataError));
  } catch (const FormatError& e) {
    throw ExitError(kDataError, e.what());
  }
  const MadReport report = mad_grid_report(set, opt.jobs);
  for (const auto& w : report.warnings) log->warn("{}", w);
  if (report.cells.empty()) throw ExitError(kDataError, "mad: no cell has scores of both classes");
  const fs::path out(opt.out);
  make_dir(out);
  write_text(out / "mad_grid.csv", mad_report_csv(report));
  write_text(out / "mad_report.json", mad_report_json(report));
  json manifest = manifest_head("mad", args);
  manifest["outputs"] = {"mad_grid.csv", "mad_report.json"};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  return kOk;
}

// --- detect ------------------------------------------------------------------

struct DetectOptions {
  std::string morphs;
  std::string pairs;
  std::string out;
  std::string method = "toy";
  std::string medium = "digital";
  std::string split = "baseline";
  Index image_side = 64;
};

int cmd_detect(const DetectOptions& opt) {
  const auto pairs = read_pairs(opt.pairs);
  MadScoreSet set;
  std::set<std::string> seen;
  try {
    for (const auto& p : pairs) {
      const Image morph = read_png(fs::path(opt.morphs) / (p.id + ".png"));
      set.rows.push_back({true, median_residual_score(morph), opt.method, opt.medium, opt.split});
    }
    for (const auto& p : pairs) {
      for (const auto& ref : {p.subject1, p.subject2}) {
        if (!seen.insert(ref).second) continue;
        set.rows.push_back({false, median_residual_score(load_subject(ref, opt.image_side)), "", opt.medium, opt.split});
      }
    }
  } catch (const FormatError& e) {
    throw ExitError(kDataError, e.what());
  }
  const fs::path out(opt.out);
  if (out.has_parent_path()) make_dir(out.parent_path());
  write_text(out, write_mad_csv(set));
  return kOk;
}

// --- fixtures ----------------------------------------------------------------

struct FacesOptions {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t count = 4;
  Index image_side = 64;
};

int cmd_toy_faces(const FacesOptions& opt) {
  if (opt.count < 2) throw ExitError(kConfigError, "--count must be at least 2");
  if (opt.image_side < 8) throw ExitError(kConfigError, "--image-side must be at least 8");
  const fs::path out(opt.out);
  make_dir(out);
  std::string pairs = std::string(kPairHeader) + "\n";
  for (std::size_t i = 0; i < opt.count; ++i) {
    const auto name = fmt::format("face_{:04d}.png", i);
    write_png(out / name, to_image(toy_face(opt.seed + i, opt.image_side)));
    if (i % 2 == 1) pairs += fmt::format("morph_{:04d},face_{:04d}.png,{}\n", i / 2, i - 1, name);
  }
  write_text(out / "pairs.csv", pairs);
  return kOk;
}

struct SynthOptions {
  std::string out;
  SyntheticScoreConfig config;
};

int cmd_synth_scores(const SynthOptions& opt) {
  if (opt.config.morphs == 0 || opt.config.genuine == 0 || opt.config.impostor == 0 || opt.config.max_attempts == 0) {
    throw ExitError(kConfigError, "synth-scores: counts must be positive");
  }
  const fs::path out(opt.out);
  if (out.has_parent_path()) make_dir(out.parent_path());
  write_text(out, write_score_csv(synthetic_scores(opt.config)));
  return kOk;
}

int dispatch(const std::vector<std::string>& args);

int cmd_replay(const std::string& manifest_path, const std::string& out) {
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path, kConfigError));
  } catch (const json::exception& e) {
    throw ExitError(kConfigError, fmt::format("manifest '{}': {}", manifest_path, e.what()));
  }
  if (!manifest.contains("args") || !manifest["args"].is_array()) {
    throw ExitError(kConfigError, fmt::format("manifest '{}' has no args", manifest_path));
  }
  auto args = manifest["args"].get<std::vector<std::string>>();
  args.push_back("--out");
  args.push_back(out);
  logger()->info("replaying {}", fmt::join(args, " "));
  return dispatch(args);
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Morph generation and evaluation toolkit", "morphbench"};
  app.require_subcommand(1);
  std::function<int()> action;

  MorphOptions morph;
  auto* m = app.add_subcommand("morph", "Optimize morph latents for a list of subject pairs");
  m->add_option("--pairs", morph.pairs, "CSV morph_id,subject1_image,subject2_image")->required();
  m->add_option("--models", morph.models, "toy:<seed> or weight container path");
  m->add_option("--out", morph.out, "Output directory")->required();
  m->add_option("--seed", morph.seed);
  m->add_option("--jobs", morph.jobs)->check(CLI::PositiveNumber);
  m->add_option("--iterations", morph.cfg.iterations);
  m->add_option("--lr0", morph.cfg.lr0);
  m->add_option("--decay", morph.cfg.decay);
  m->add_option("--decay-every", morph.cfg.decay_every);
  m->add_option("--lambda1", morph.cfg.weights.perceptual, "Perceptual weight");
  m->add_option("--lambda2", morph.cfg.weights.identity, "Identity weight");
  m->add_option("--lambda3", morph.cfg.weights.ms_ssim, "MS-SSIM weight");
  m->add_option("--lambda4", morph.cfg.weights.id_diff, "Identity-difference weight");
  m->add_option("--latent-shape", morph.latent_shape, "RxC");
  m->add_option("--image-side", morph.image_side);
  m->add_flag("--ablation", morph.ablation, "Run once per loss term with its weight zeroed");
  m->callback([&] {
    MorphOptions o = morph;
    o.pairs = absolute(o.pairs);
    if (o.models.rfind("toy:", 0) != 0) o.models = absolute(o.models);
    action = [o] { return cmd_morph(o); };
  });

  VulnCliOptions vuln;
  auto* v = app.add_subcommand("vuln", "Vulnerability rates from a comparison score file");
  v->add_option("--scores", vuln.scores)->required();
  v->add_option("--out", vuln.out)->required();
  v->add_option("--fmr", vuln.fmr);
  v->add_option("--threshold", vuln.threshold, "Fixed decision threshold in the file's polarity");
  v->callback([&] {
    VulnCliOptions o = vuln;
    o.scores = absolute(o.scores);
    action = [o] { return cmd_vuln(o); };
  });

  QualityCliOptions quality;
  auto* q = app.add_subcommand("quality", "PSNR and SSIM of morphs against both parents");
  q->add_option("--morphs", quality.morphs, "Directory with <morph_id>.png")->required();
  q->add_option("--pairs", quality.pairs)->required();
  q->add_option("--out", quality.out)->required();
  q->add_option("--image-side", quality.image_side);
  q->add_option("--jobs", quality.jobs)->check(CLI::PositiveNumber);
  q->callback([&] {
    QualityCliOptions o = quality;
    o.morphs = absolute(o.morphs);
    o.pairs = absolute(o.pairs);
    action = [o] { return cmd_quality(o); };
  });

  MadCliOptions mad;
  auto* d = app.add_subcommand("mad", "Detection error grid from a detector score file");
  d->add_option("--scores", mad.scores)->required();
  d->add_option("--out", mad.out)->required();
  d->add_option("--jobs", mad.jobs)->check(CLI::PositiveNumber);
  d->callback([&] {
    MadCliOptions o = mad;
    o.scores = absolute(o.scores);
    action = [o] { return cmd_mad(o); };
  });

  DetectOptions detect;
  auto* dt = app.add_subcommand("detect", "Score morphs and parents with the median-residual baseline");
  dt->add_option("--morphs", detect.morphs)->required();
  dt->add_option("--pairs", detect.pairs)->required();
  dt->add_option("--out", detect.out, "Detector score CSV")->required();
  dt->add_option("--method", detect.method);
  dt->add_option("--medium", detect.medium);
  dt->add_option("--split", detect.split);
  dt->add_option("--image-side", detect.image_side);
  dt->callback([&] { action = [o = detect] { return cmd_detect(o); }; });

  FacesOptions faces;
  auto* f = app.add_subcommand("toy-faces", "Write procedural faces and a pair list");
  f->add_option("--out", faces.out)->required();
  f->add_option("--seed", faces.seed);
  f->add_option("--count", faces.count);
  f->add_option("--image-side", faces.image_side);
  f->callback([&] { action = [o = faces] { return cmd_toy_faces(o); }; });

  SynthOptions synth;
  auto* s = app.add_subcommand("synth-scores", "Write a synthetic comparison score file");
  s->add_option("--out", synth.out)->required();
  s->add_option("--seed", synth.config.seed);
  s->add_option("--morphs", synth.config.morphs);
  s->add_option("--attempts", synth.config.max_attempts);
  s->add_option("--genuine", synth.config.genuine);
  s->add_option("--impostor", synth.config.impostor);
  s->callback([&] { action = [o = synth] { return cmd_synth_scores(o); }; });

  std::string manifest;
  std::string replay_out;
  auto* r = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  r->add_option("manifest", manifest)->required();
  r->add_option("--out", replay_out)->required();
  r->callback([&] { action = [=] { return cmd_replay(manifest, replay_out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    logger()->error("{}", e.what());
    return kConfigError;
  }
  return action();
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  configure_logging();
  auto log = logger();
  try {
    return dispatch(args);
  } catch (const ExitError& e) {
    log->error("{}", e.what());
    return e.code();
  } catch (const FormatError& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const ValueError& e) {
    log->error("{}", e.what());
    return kConfigError;
  } catch (const ShapeError& e) {
    log->error("{}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    log->error("{}", e.what());
    return kComputeError;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace morphbench::cli
