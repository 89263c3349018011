#pragma once

#include "morphbench/image.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace morphbench {

// Detector scores of one evaluation cell; higher means more attack-like.
struct MadScores {
  std::vector<double> attack;
  std::vector<double> bona_fide;

  void validate() const;
};

// A score is classified as attack when score > threshold.
struct ErrorRates {
  double apcer = 0;
  double bpcer = 0;
};

ErrorRates apcer_bpcer_at(const MadScores& scores, double threshold);

struct EqualErrorPoint {
  double eer = 0;
  double threshold = 0;
};

EqualErrorPoint d_eer(const MadScores& scores);

// Lowest bpcer over thresholds whose apcer is at most target.
double bpcer_at_apcer(const MadScores& scores, double target);

struct MadScoreRow {
  bool attack = false;
  double score = 0;
  std::string generation_method;
  std::string medium;
  // Training method of the detector that produced the score.
  std::string split;
};

struct MadScoreSet {
  std::vector<MadScoreRow> rows;
};

// class,score,generation_method,medium,split
MadScoreSet parse_mad_csv(const std::string& text);
MadScoreSet read_mad_csv(const std::filesystem::path& path);
std::string write_mad_csv(const MadScoreSet& set);

struct MadCell {
  std::string train;
  std::string test;
  std::string medium;
  std::size_t attacks = 0;
  std::size_t bona_fide = 0;
  double d_eer = 0;
  double eer_threshold = 0;
  double bpcer_at_apcer5 = 0;
  double bpcer_at_apcer10 = 0;
};

struct MadReport {
  std::vector<std::string> trains;
  std::vector<std::string> tests;
  std::vector<std::string> media;
  // Cells with scores of both classes, in (train, test, medium) order.
  std::vector<MadCell> cells;
  std::vector<std::string> warnings;

  const MadCell* find(const std::string& train, const std::string& test, const std::string& medium) const;
};

// Cell (train, test, medium) holds attack rows tagged with test and medium,
// and bona fide rows tagged with medium, from detectors trained on train.
// Bona fide rows with an empty generation_method serve every test method.
MadScores select_cell(const MadScoreSet& set, const std::string& train, const std::string& test,
                      const std::string& medium);

MadReport mad_grid_report(const MadScoreSet& set, unsigned jobs = 1);

// Rows: (train, test); per medium: d_eer and bpcer at apcer 5% and 10%, in percent.
std::string mad_report_csv(const MadReport& report);
std::string mad_report_json(const MadReport& report);

// Baseline single-image detector: mean absolute residual after a 3x3
// median filter, averaged over channels.
double median_residual_score(const Image& image);

}  // namespace morphbench
