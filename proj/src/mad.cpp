#include "morphbench/mad.hpp"

#include "morphbench/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

namespace morphbench {

namespace {

constexpr const char* kHeader = "class,score,generation_method,medium,split";
constexpr const char* kUnspecified = "unspecified";
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct OperatingPoint {
  double threshold;
  double apcer;
  double bpcer;
};

// Threshold -inf, then every distinct score in ascending order.
std::vector<OperatingPoint> operating_points(const MadScores& scores) {
  scores.validate();
  std::vector<double> a = scores.attack;
  std::vector<double> b = scores.bona_fide;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());

  std::vector<OperatingPoint> out{{kNegInf, 0.0, 1.0}};
  std::size_t ia = 0;
  std::size_t ib = 0;
  while (ia < a.size() || ib < b.size()) {
    double t = ia < a.size() ? a[ia] : b[ib];
    if (ib < b.size()) t = std::min(t, b[ib]);
    while (ia < a.size() && a[ia] <= t) ++ia;
    while (ib < b.size() && b[ib] <= t) ++ib;
    out.push_back({t, static_cast<double>(ia) / na, static_cast<double>(b.size() - ib) / nb});
  }
  return out;
}

std::string tag_or_default(const std::string& tag) { return tag.empty() ? kUnspecified : tag; }

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string percent(double v) { return fmt::format("{:.4f}", 100.0 * v); }

}  // namespace

void MadScores::validate() const {
  if (attack.empty()) throw ValueError("mad scores: no attack scores");
  if (bona_fide.empty()) throw ValueError("mad scores: no bona fide scores");
  for (const double s : attack) {
    if (!std::isfinite(s)) throw ValueError("mad scores: non-finite attack score");
  }
  for (const double s : bona_fide) {
    if (!std::isfinite(s)) throw ValueError("mad scores: non-finite bona fide score");
  }
}

ErrorRates apcer_bpcer_at(const MadScores& scores, double threshold) {
  scores.validate();
  const auto below = std::count_if(scores.attack.begin(), scores.attack.end(), [&](double s) { return s <= threshold; });
  const auto above =
      std::count_if(scores.bona_fide.begin(), scores.bona_fide.end(), [&](double s) { return s > threshold; });
  return {static_cast<double>(below) / static_cast<double>(scores.attack.size()),
          static_cast<double>(above) / static_cast<double>(scores.bona_fide.size())};
}

EqualErrorPoint d_eer(const MadScores& scores) {
  const auto pts = operating_points(scores);
  const auto diff = [&](std::size_t i) { return pts[i].apcer - pts[i].bpcer; };

  // diff runs from -1 at -inf to +1 at the largest score.
  std::size_t i = 1;
  while (diff(i) < 0.0) ++i;
  // Rates are constant on [threshold_i, threshold_i+1); the last point has diff 1.
  if (diff(i) == 0.0) return {pts[i].apcer, 0.5 * (pts[i].threshold + pts[i + 1].threshold)};
  const OperatingPoint& lo = pts[i - 1];
  const OperatingPoint& hi = pts[i];
  const double w = -diff(i - 1) / (diff(i) - diff(i - 1));
  const double apcer = lo.apcer + w * (hi.apcer - lo.apcer);
  const double bpcer = lo.bpcer + w * (hi.bpcer - lo.bpcer);
  const double t = std::isinf(lo.threshold) ? hi.threshold : lo.threshold + w * (hi.threshold - lo.threshold);
  return {0.5 * (apcer + bpcer), t};
}

double bpcer_at_apcer(const MadScores& scores, double target) {
  if (!(target > 0.0 && target < 1.0)) throw ValueError(fmt::format("bpcer_at_apcer: target {} outside (0, 1)", target));
  const auto pts = operating_points(scores);
  std::optional<double> best;
  for (const auto& p : pts) {
    if (p.apcer <= target && (!best || p.bpcer < *best)) best = p.bpcer;
  }
  if (!best) throw ValueError(fmt::format("bpcer_at_apcer: no threshold reaches apcer <= {}", target));
  return *best;
}

MadScoreSet parse_mad_csv(const std::string& text) {
  MadScoreSet set;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != kHeader) throw FormatError(fmt::format("mad csv line {}: expected header '{}'", number, kHeader));
      header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 5) throw FormatError(fmt::format("mad csv line {}: {} fields, expected 5", number, f.size()));
    MadScoreRow row;
    if (f[0] == "attack") {
      row.attack = true;
    } else if (f[0] != "bonafide") {
      throw FormatError(fmt::format("mad csv line {}: unknown class '{}'", number, f[0]));
    }
    const auto [end, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), row.score);
    if (f[1].empty() || ec != std::errc() || end != f[1].data() + f[1].size()) {
      throw FormatError(fmt::format("mad csv line {}: bad score '{}'", number, f[1]));
    }
    if (!std::isfinite(row.score)) throw FormatError(fmt::format("mad csv line {}: non-finite score", number));
    row.generation_method = f[2];
    row.medium = f[3];
    row.split = f[4];
    set.rows.push_back(std::move(row));
  }
  if (!header) throw FormatError("mad csv: missing header");
  return set;
}

MadScoreSet read_mad_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open mad score file '{}'", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  return parse_mad_csv(text.str());
}

std::string write_mad_csv(const MadScoreSet& set) {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : set.rows) {
    out += fmt::format("{},{},{},{},{}\n", r.attack ? "attack" : "bonafide", r.score, r.generation_method, r.medium,
                       r.split);
  }
  return out;
}

const MadCell* MadReport::find(const std::string& train, const std::string& test, const std::string& medium) const {
  for (const auto& c : cells) {
    if (c.train == train && c.test == test && c.medium == medium) return &c;
  }
  return nullptr;
}

MadScores select_cell(const MadScoreSet& set, const std::string& train, const std::string& test,
                      const std::string& medium) {
  MadScores out;
  for (const auto& r : set.rows) {
    if (tag_or_default(r.split) != train || tag_or_default(r.medium) != medium) continue;
    if (r.attack) {
      if (tag_or_default(r.generation_method) == test) out.attack.push_back(r.score);
    } else if (r.generation_method.empty() || r.generation_method == test) {
      out.bona_fide.push_back(r.score);
    }
  }
  return out;
}

MadReport mad_grid_report(const MadScoreSet& set, unsigned jobs) {
  std::set<std::string> trains;
  std::set<std::string> tests;
  std::set<std::string> media;
  for (const auto& r : set.rows) {
    trains.insert(tag_or_default(r.split));
    media.insert(tag_or_default(r.medium));
    if (r.attack) tests.insert(tag_or_default(r.generation_method));
  }

  MadReport report;
  report.trains.assign(trains.begin(), trains.end());
  report.tests.assign(tests.begin(), tests.end());
  report.media.assign(media.begin(), media.end());

  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& tr : report.trains)
    for (const auto& te : report.tests)
      for (const auto& me : report.media) keys.emplace_back(tr, te, me);

  std::vector<std::optional<MadCell>> results(keys.size());
  std::vector<std::string> reasons(keys.size());
  const auto evaluate = [&](std::size_t i) {
    const auto& [tr, te, me] = keys[i];
    const MadScores s = select_cell(set, tr, te, me);
    if (s.attack.empty() || s.bona_fide.empty()) {
      reasons[i] = s.attack.empty() ? "no attack scores" : "no bona fide scores";
      return;
    }
    const auto eer = d_eer(s);
    results[i] = MadCell{tr, te, me, s.attack.size(), s.bona_fide.size(), eer.eer, eer.threshold,
                         bpcer_at_apcer(s, 0.05), bpcer_at_apcer(s, 0.10)};
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(keys.size())));
  std::vector<std::future<void>> running;
  for (unsigned w = 0; w < workers; ++w) {
    running.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < keys.size(); i += workers) evaluate(i);
    }));
  }
  for (auto& f : running) f.get();

  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (results[i]) {
      report.cells.push_back(*results[i]);
    } else {
      const auto& [tr, te, me] = keys[i];
      report.warnings.push_back(fmt::format("cell train={} test={} medium={} is absent: {}", tr, te, me, reasons[i]));
    }
  }
  return report;
}

std::string mad_report_csv(const MadReport& report) {
  std::string out = "train,test";
  for (const auto& m : report.media) out += fmt::format(",{0}_d_eer,{0}_bpcer_at_apcer5,{0}_bpcer_at_apcer10", m);
  out += "\n";
  for (const auto& tr : report.trains) {
    for (const auto& te : report.tests) {
      out += tr + "," + te;
      for (const auto& m : report.media) {
        if (const MadCell* c = report.find(tr, te, m)) {
          out += "," + percent(c->d_eer) + "," + percent(c->bpcer_at_apcer5) + "," + percent(c->bpcer_at_apcer10);
        } else {
          out += ",NA,NA,NA";
        }
      }
      out += "\n";
    }
  }
  return out;
}

std::string mad_report_json(const MadReport& report) {
  nlohmann::ordered_json j;
  j["classification_rule"] = "score > threshold is attack; ties are bona fide";
  j["eer_rule"] = "linear interpolation between adjacent operating points; plateau midpoint on exact equality";
  j["apcer_targets"] = {0.05, 0.10};
  j["trains"] = report.trains;
  j["tests"] = report.tests;
  j["media"] = report.media;
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : report.cells) {
    nlohmann::ordered_json e;
    e["train"] = c.train;
    e["test"] = c.test;
    e["medium"] = c.medium;
    e["intra"] = c.train == c.test;
    e["attacks"] = c.attacks;
    e["bona_fide"] = c.bona_fide;
    e["d_eer"] = c.d_eer;
    e["eer_threshold"] = c.eer_threshold;
    e["bpcer_at_apcer5"] = c.bpcer_at_apcer5;
    e["bpcer_at_apcer10"] = c.bpcer_at_apcer10;
    cells.push_back(std::move(e));
  }
  j["cells"] = std::move(cells);
  j["warnings"] = report.warnings;
  return j.dump(2) + "\n";
}

double median_residual_score(const Image& image) {
  const Index h = image.height();
  const Index w = image.width();
  if (h == 0 || w == 0 || image.channels() == 0) throw ShapeError("median_residual_score: empty image");
  double total = 0.0;
  std::array<double, 9> window{};
  for (Index c = 0; c < image.channels(); ++c) {
    const auto& p = image.channel(c);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        std::size_t n = 0;
        for (Index di = -1; di <= 1; ++di)
          for (Index dj = -1; dj <= 1; ++dj)
            window[n++] = p(std::clamp<Index>(i + di, 0, h - 1), std::clamp<Index>(j + dj, 0, w - 1));
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        total += std::abs(p(i, j) - window[4]);
      }
    }
  }
  return total / static_cast<double>(image.channels() * h * w);
}

}  // namespace morphbench
