#include "morphbench/vuln.hpp"

#include "morphbench/error.hpp"
#include "morphbench/random.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace morphbench {

namespace {

constexpr const char* kHeader = "kind,morph_id,subject_index,attempt_index,score,group_gender,group_medium";
constexpr const char* kUnspecified = "unspecified";

void check_scores(std::span<const double> scores, const char* who) {
  if (scores.empty()) throw ValueError(fmt::format("{}: empty score list", who));
  for (const double s : scores) {
    if (!std::isfinite(s)) throw ValueError(fmt::format("{}: non-finite score", who));
  }
}

std::size_t count_above(std::span<const double> scores, double t) {
  return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [t](double s) { return s > t; }));
}

std::string tag_or_default(const std::string& tag) { return tag.empty() ? kUnspecified : tag; }

}  // namespace

void ScoreSet::validate() const {
  std::set<std::string> ids;
  for (const auto& m : morphs) {
    if (!ids.insert(m.id).second) throw ValueError(fmt::format("score set: duplicate morph id '{}'", m.id));
    if (m.attempts.size() < 2) {
      throw ValueError(fmt::format("score set: morph '{}' has {} subject(s), need at least 2", m.id, m.attempts.size()));
    }
    for (const auto& subject : m.attempts) {
      for (const double s : subject) {
        if (!std::isfinite(s)) throw ValueError(fmt::format("score set: morph '{}' has a non-finite score", m.id));
      }
    }
  }
  for (const double s : genuine) {
    if (!std::isfinite(s)) throw ValueError("score set: non-finite genuine score");
  }
  for (const double s : impostor) {
    if (!std::isfinite(s)) throw ValueError("score set: non-finite impostor score");
  }
}

double threshold_at_fmr(std::span<const double> impostor, double fmr) {
  check_scores(impostor, "threshold_at_fmr");
  if (!(fmr > 0.0 && fmr < 1.0)) throw ValueError(fmt::format("threshold_at_fmr: fmr {} outside (0, 1)", fmr));
  std::vector<double> sorted(impostor.begin(), impostor.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // The rate above each candidate only falls as the candidate grows.
  for (auto it = sorted.begin(); it != sorted.end();) {
    const auto next = std::upper_bound(it, sorted.end(), *it);
    const auto above = static_cast<double>(sorted.end() - next);
    if (above / n <= fmr) return *it;
    it = next;
  }
  return sorted.back();
}

double match_rate(std::span<const double> scores, double t) {
  check_scores(scores, "match_rate");
  return static_cast<double>(count_above(scores, t)) / static_cast<double>(scores.size());
}

double fnmr_at(std::span<const double> genuine, double t) {
  check_scores(genuine, "fnmr_at");
  return static_cast<double>(genuine.size() - count_above(genuine, t)) / static_cast<double>(genuine.size());
}

RateCount fmmpmr_count(std::span<const MorphScores> morphs, double t, std::vector<std::string>* warnings) {
  RateCount out;
  for (const auto& m : morphs) {
    std::size_t common = m.attempts.empty() ? 0 : m.attempts.front().size();
    std::size_t most = common;
    for (const auto& subject : m.attempts) {
      common = std::min(common, subject.size());
      most = std::max(most, subject.size());
    }
    if (common == 0) throw ValueError(fmt::format("fmmpmr: morph '{}' has no common attempts", m.id));
    if (most != common && warnings) {
      warnings->push_back(
          fmt::format("morph '{}': attempt counts differ, paired rate uses the first {} attempts", m.id, common));
    }
    for (std::size_t p = 0; p < common; ++p) {
      const bool all = std::all_of(m.attempts.begin(), m.attempts.end(), [&](const auto& s) { return s[p] > t; });
      out.hits += all ? 1 : 0;
    }
    out.total += common;
  }
  return out;
}

double fmmpmr(const ScoreSet& scores, double t, std::vector<std::string>* warnings) {
  if (scores.morphs.empty()) throw ValueError("fmmpmr: no morphs");
  return fmmpmr_count(scores.morphs, t, warnings).rate();
}

RateCount mmpmr_count(std::span<const MorphScores> morphs, double t) {
  RateCount out;
  for (const auto& m : morphs) {
    if (m.attempts.empty()) throw ValueError(fmt::format("mmpmr: morph '{}' has no subjects", m.id));
    double weakest = std::numeric_limits<double>::infinity();
    for (const auto& subject : m.attempts) {
      if (subject.empty()) throw ValueError(fmt::format("mmpmr: morph '{}' has a subject with no attempts", m.id));
      weakest = std::min(weakest, *std::max_element(subject.begin(), subject.end()));
    }
    out.hits += weakest > t ? 1 : 0;
    ++out.total;
  }
  return out;
}

double mmpmr(const ScoreSet& scores, double t) {
  if (scores.morphs.empty()) throw ValueError("mmpmr: no morphs");
  return mmpmr_count(scores.morphs, t).rate();
}

double rmmr(double rate, double fnmr) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValueError(fmt::format("rmmr: rate {} outside [0, 1]", rate));
  if (!(fnmr >= 0.0 && fnmr <= 1.0)) throw ValueError(fmt::format("rmmr: fnmr {} outside [0, 1]", fnmr));
  return rate + fnmr;
}

const GroupRates* VulnReport::find(const std::string& gender, const std::string& medium) const {
  for (const auto& g : groups) {
    if (g.gender == gender && g.medium == medium) return &g;
  }
  return nullptr;
}

VulnReport vulnerability_report(const ScoreSet& scores, const VulnOptions& options) {
  scores.validate();
  if (scores.morphs.empty()) throw ValueError("vulnerability_report: no morphs");
  check_scores(scores.impostor, "vulnerability_report (impostor)");
  check_scores(scores.genuine, "vulnerability_report (genuine)");

  VulnReport r;
  r.polarity = scores.source_polarity;
  r.fmr_target = options.fmr_target;
  const double sign = scores.source_polarity == Polarity::distance ? -1.0 : 1.0;
  double t = 0;
  if (options.threshold) {
    if (!std::isfinite(*options.threshold)) throw ValueError("vulnerability_report: threshold must be finite");
    t = sign * *options.threshold;
    r.threshold_supplied = true;
  } else {
    t = threshold_at_fmr(scores.impostor, options.fmr_target);
  }
  r.threshold = sign * t;
  r.empirical_fmr = match_rate(scores.impostor, t);
  r.fnmr = fnmr_at(scores.genuine, t);
  r.genuine = scores.genuine.size();
  r.impostor = scores.impostor.size();
  r.morphs = scores.morphs.size();

  std::set<std::string> genders;
  std::set<std::string> media;
  for (const auto& m : scores.morphs) {
    genders.insert(tag_or_default(m.gender));
    media.insert(tag_or_default(m.medium));
  }
  r.genders.assign(genders.begin(), genders.end());
  r.media.assign(media.begin(), media.end());

  fmmpmr_count(scores.morphs, t, &r.warnings);

  std::vector<std::string> rows = r.genders;
  rows.emplace_back(kCombined);
  for (const auto& gender : rows) {
    for (const auto& medium : r.media) {
      std::vector<MorphScores> cell;
      for (const auto& m : scores.morphs) {
        if (tag_or_default(m.medium) == medium && (gender == kCombined || tag_or_default(m.gender) == gender)) {
          cell.push_back(m);
        }
      }
      if (cell.empty()) {
        r.warnings.push_back(fmt::format("no morphs for gender '{}' and medium '{}'; cell omitted", gender, medium));
        continue;
      }
      GroupRates g;
      g.gender = gender;
      g.medium = medium;
      g.morphs = cell.size();
      const RateCount paired = fmmpmr_count(cell, t);
      g.attempt_pairs = paired.total;
      g.fmmpmr = paired.rate();
      g.mmpmr = mmpmr_count(cell, t).rate();
      g.rmmr_mmpmr = rmmr(g.mmpmr, r.fnmr);
      g.rmmr_fmmpmr = rmmr(g.fmmpmr, r.fnmr);
      r.groups.push_back(std::move(g));
    }
  }
  return r;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const char* what) {
  T value{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw FormatError(fmt::format("score csv line {}: bad {} '{}'", line, what, s));
  }
  return value;
}

struct PendingMorph {
  std::map<long, std::map<long, double>> subjects;
  std::string gender;
  std::string medium;
};

}  // namespace

ScoreSet parse_score_csv(const std::string& text) {
  ScoreSet set;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool header = false;
  std::vector<std::string> order;
  std::unordered_map<std::string, PendingMorph> pending;

  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line.front() == '#') {
        const auto start = line.find_first_not_of("# ");
        const auto body = start == std::string::npos ? std::string() : line.substr(start);
        if (body.rfind("polarity=", 0) == 0) {
          const auto value = body.substr(9);
          if (value == "distance") {
            set.source_polarity = Polarity::distance;
          } else if (value == "similarity") {
            set.source_polarity = Polarity::similarity;
          } else {
            throw FormatError(fmt::format("score csv line {}: unknown polarity '{}'", number, value));
          }
        }
        continue;
      }
      if (line != kHeader) throw FormatError(fmt::format("score csv line {}: expected header '{}'", number, kHeader));
      header = true;
      continue;
    }

    const auto f = split(line);
    if (f.size() != 7) throw FormatError(fmt::format("score csv line {}: {} fields, expected 7", number, f.size()));
    double score = parse_number<double>(f[4], number, "score");
    if (!std::isfinite(score)) throw FormatError(fmt::format("score csv line {}: non-finite score", number));
    if (set.source_polarity == Polarity::distance) score = -score;

    const std::string& kind = f[0];
    if (kind == "genuine" || kind == "impostor") {
      if (!f[2].empty() || !f[3].empty()) {
        throw FormatError(fmt::format("score csv line {}: {} rows take no subject or attempt index", number, kind));
      }
      (kind == "genuine" ? set.genuine : set.impostor).push_back(score);
    } else if (kind == "mated_morph") {
      if (f[1].empty()) throw FormatError(fmt::format("score csv line {}: missing morph_id", number));
      const long subject = parse_number<long>(f[2], number, "subject_index");
      const long attempt = parse_number<long>(f[3], number, "attempt_index");
      if (subject < 1 || attempt < 1) throw FormatError(fmt::format("score csv line {}: indices start at 1", number));
      auto [it, fresh] = pending.try_emplace(f[1]);
      PendingMorph& m = it->second;
      if (fresh) {
        order.push_back(f[1]);
        m.gender = f[5];
        m.medium = f[6];
      } else if (m.gender != f[5] || m.medium != f[6]) {
        throw FormatError(fmt::format("score csv line {}: morph '{}' has conflicting group tags", number, f[1]));
      }
      if (!m.subjects[subject].emplace(attempt, score).second) {
        throw FormatError(fmt::format("score csv line {}: duplicate attempt {} for subject {} of morph '{}'", number,
                                      attempt, subject, f[1]));
      }
    } else {
      throw FormatError(fmt::format("score csv line {}: unknown kind '{}'", number, kind));
    }
  }
  if (!header) throw FormatError("score csv: missing header");

  for (const auto& id : order) {
    PendingMorph& p = pending.at(id);
    MorphScores m;
    m.id = id;
    m.gender = p.gender;
    m.medium = p.medium;
    long expected_subject = 1;
    for (auto& [subject, attempts] : p.subjects) {
      if (subject != expected_subject++) {
        throw FormatError(fmt::format("score csv: morph '{}' subject indices are not 1..K", id));
      }
      std::vector<double> row;
      long expected_attempt = 1;
      for (const auto& [attempt, score] : attempts) {
        if (attempt != expected_attempt++) {
          throw FormatError(fmt::format("score csv: morph '{}' subject {} attempt indices are not 1..P", id, subject));
        }
        row.push_back(score);
      }
      m.attempts.push_back(std::move(row));
    }
    set.morphs.push_back(std::move(m));
  }
  try {
    set.validate();
  } catch (const ValueError& e) {
    throw FormatError(fmt::format("score csv: {}", e.what()));
  }
  return set;
}

ScoreSet read_score_csv(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error(fmt::format("cannot open score file {}", path.string()));
  std::ostringstream text;
  text << file.rdbuf();
  return parse_score_csv(text.str());
}

std::string write_score_csv(const ScoreSet& scores) {
  const double sign = scores.source_polarity == Polarity::distance ? -1.0 : 1.0;
  std::string out;
  if (scores.source_polarity == Polarity::distance) out += "# polarity=distance\n";
  out += kHeader;
  out += '\n';
  for (const auto& m : scores.morphs) {
    for (std::size_t k = 0; k < m.attempts.size(); ++k) {
      for (std::size_t p = 0; p < m.attempts[k].size(); ++p) {
        out += fmt::format("mated_morph,{},{},{},{},{},{}\n", m.id, k + 1, p + 1, sign * m.attempts[k][p], m.gender,
                           m.medium);
      }
    }
  }
  for (const double s : scores.genuine) out += fmt::format("genuine,,,,{},,\n", sign * s);
  for (const double s : scores.impostor) out += fmt::format("impostor,,,,{},,\n", sign * s);
  return out;
}

std::string vuln_report_csv(const VulnReport& report) {
  static constexpr const char* kColumns[] = {"mmpmr", "fmmpmr", "rmmr_mmpmr", "rmmr_fmmpmr"};
  std::string out = "group";
  for (const auto& medium : report.media) {
    for (const char* c : kColumns) out += fmt::format(",{}_{}", medium, c);
  }
  out += '\n';
  std::vector<std::string> rows = report.genders;
  rows.emplace_back(kCombined);
  for (const auto& gender : rows) {
    out += gender;
    for (const auto& medium : report.media) {
      const GroupRates* g = report.find(gender, medium);
      if (!g) {
        out += ",NA,NA,NA,NA";
        continue;
      }
      out += fmt::format(",{:.4f},{:.4f},{:.4f},{:.4f}", 100.0 * g->mmpmr, 100.0 * g->fmmpmr, 100.0 * g->rmmr_mmpmr,
                         100.0 * g->rmmr_fmmpmr);
    }
    out += '\n';
  }
  return out;
}

std::string vuln_report_json(const VulnReport& report) {
  using nlohmann::ordered_json;
  const bool distance = report.polarity == Polarity::distance;
  ordered_json groups = ordered_json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"gender", g.gender},
                      {"medium", g.medium},
                      {"morphs", g.morphs},
                      {"attempt_pairs", g.attempt_pairs},
                      {"mmpmr", g.mmpmr},
                      {"fmmpmr", g.fmmpmr},
                      {"rmmr_mmpmr", g.rmmr_mmpmr},
                      {"rmmr_fmmpmr", g.rmmr_fmmpmr}});
  }
  const ordered_json j = {
      {"threshold", report.threshold},
      {"threshold_source", report.threshold_supplied ? "supplied" : "empirical impostor quantile"},
      {"fmr_target", report.fmr_target},
      {"empirical_fmr", report.empirical_fmr},
      {"fnmr", report.fnmr},
      {"polarity", distance ? "distance" : "similarity"},
      {"match_rule", distance ? "distance < threshold" : "score > threshold"},
      {"counts", {{"genuine", report.genuine}, {"impostor", report.impostor}, {"morphs", report.morphs}}},
      {"policy",
       {{"mmpmr", "min over subjects of max over attempts, compared with > threshold"},
        {"fmmpmr", "all subjects above threshold at the same attempt, over all (morph, attempt) pairs"},
        {"unequal_attempts", "paired rate truncates to the smallest per-subject attempt count"},
        {"rmmr", "rate + fnmr"}}},
      {"groups", groups},
      {"warnings", report.warnings}};
  return j.dump(2) + "\n";
}

ScoreSet synthetic_scores(const SyntheticScoreConfig& config) {
  if (config.subjects < 2 || config.max_attempts < 1 || config.genders.empty() || config.media.empty()) {
    throw ValueError("synthetic_scores: need at least 2 subjects, 1 attempt, 1 gender and 1 medium");
  }
  Rng rng(config.seed);
  ScoreSet set;
  set.morphs.reserve(config.morphs);
  const auto max_attempts = static_cast<std::int64_t>(config.max_attempts);
  for (std::size_t i = 0; i < config.morphs; ++i) {
    MorphScores m;
    m.id = fmt::format("M{:06d}", i + 1);
    m.gender = config.genders[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(config.genders.size()) - 1))];
    m.medium = config.media[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(config.media.size()) - 1))];
    const auto attempts = rng.integer(1, max_attempts);
    for (std::size_t k = 0; k < config.subjects; ++k) {
      // Occasionally one subject has fewer probes.
      const auto count = rng.uniform() < 0.1 ? rng.integer(1, attempts) : attempts;
      const double strength = rng.uniform(0.3, 0.85);
      std::vector<double> row;
      for (std::int64_t p = 0; p < count; ++p) row.push_back(std::round(rng.normal(strength, 0.08) * 1e6) / 1e6);
      m.attempts.push_back(std::move(row));
    }
    set.morphs.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < config.genuine; ++i) set.genuine.push_back(std::round(rng.normal(0.8, 0.08) * 1e6) / 1e6);
  for (std::size_t i = 0; i < config.impostor; ++i) set.impostor.push_back(std::round(rng.normal(0.2, 0.1) * 1e6) / 1e6);
  return set;
}

}  // namespace morphbench
