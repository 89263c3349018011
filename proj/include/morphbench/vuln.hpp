#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morphbench {

enum class Polarity { similarity, distance };

// Comparison scores of one morph: attempts[k][p] is attempt p of subject k.
struct MorphScores {
  std::string id;
  std::vector<std::vector<double>> attempts;
  std::string gender;
  std::string medium;
};

// All scores are similarity-oriented: higher means a stronger match.
struct ScoreSet {
  std::vector<MorphScores> morphs;
  std::vector<double> genuine;
  std::vector<double> impostor;
  Polarity source_polarity = Polarity::similarity;

  void validate() const;
};

// Smallest impostor score t with #{s > t} / n <= fmr.
double threshold_at_fmr(std::span<const double> impostor, double fmr);

// Fraction of scores strictly above t.
double match_rate(std::span<const double> scores, double t);

// Fraction of genuine scores <= t.
double fnmr_at(std::span<const double> genuine, double t);

struct RateCount {
  std::size_t hits = 0;
  std::size_t total = 0;

  double rate() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
};

// Attempt-paired rate over all (morph, attempt) pairs: a pair counts when
// every subject's score at that attempt is above t. Attempts beyond the
// smallest per-subject count are dropped, with a warning appended.
RateCount fmmpmr_count(std::span<const MorphScores> morphs, double t, std::vector<std::string>* warnings = nullptr);
double fmmpmr(const ScoreSet& scores, double t, std::vector<std::string>* warnings = nullptr);

// Fraction of morphs whose weakest subject (by best attempt) is above t.
RateCount mmpmr_count(std::span<const MorphScores> morphs, double t);
double mmpmr(const ScoreSet& scores, double t);

// 1 + rate - (1 - fnmr), evaluated as rate + fnmr.
double rmmr(double rate, double fnmr);

struct GroupRates {
  std::string gender;
  std::string medium;
  std::size_t morphs = 0;
  std::size_t attempt_pairs = 0;
  double mmpmr = 0;
  double fmmpmr = 0;
  double rmmr_mmpmr = 0;
  double rmmr_fmmpmr = 0;
};

struct VulnOptions {
  double fmr_target = 0.001;
  // Vendor threshold in the score file's polarity; replaces the empirical one.
  std::optional<double> threshold;
};

inline constexpr const char* kCombined = "combined";

struct VulnReport {
  double threshold = 0;
  double fmr_target = 0;
  bool threshold_supplied = false;
  double empirical_fmr = 0;
  double fnmr = 0;
  std::size_t genuine = 0;
  std::size_t impostor = 0;
  std::size_t morphs = 0;
  Polarity polarity = Polarity::similarity;
  std::vector<std::string> genders;
  std::vector<std::string> media;
  // One entry per (gender or combined, medium) cell that has morphs.
  std::vector<GroupRates> groups;
  std::vector<std::string> warnings;

  const GroupRates* find(const std::string& gender, const std::string& medium) const;
};

VulnReport vulnerability_report(const ScoreSet& scores, const VulnOptions& options = {});

// kind,morph_id,subject_index,attempt_index,score,group_gender,group_medium
// An optional leading "# polarity=distance" line flips the score sign.
ScoreSet parse_score_csv(const std::string& text);
ScoreSet read_score_csv(const std::filesystem::path& path);
std::string write_score_csv(const ScoreSet& scores);

// Grid: one row per gender plus combined, four percentage columns per medium.
std::string vuln_report_csv(const VulnReport& report);
std::string vuln_report_json(const VulnReport& report);

struct SyntheticScoreConfig {
  std::uint64_t seed = 1;
  std::size_t morphs = 200;
  std::size_t subjects = 2;
  std::size_t max_attempts = 4;
  std::size_t genuine = 2000;
  std::size_t impostor = 10000;
  std::vector<std::string> genders{"female", "male"};
  std::vector<std::string> media{"digital", "print-scan"};
};

// Deterministic score set with overlapping genuine, impostor and morph
// score distributions.
ScoreSet synthetic_scores(const SyntheticScoreConfig& config);

}  // namespace morphbench
