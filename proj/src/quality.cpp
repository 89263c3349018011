#include "morphbench/quality.hpp"

#include <json.hpp>

#include <numeric>

namespace morphbench {

QualityRecord morph_quality(const std::string& morph_id, const Image& morph, const Image& parent1,
                            const Image& parent2, const MsSsimParams& params) {
  detail::check_same_shape(parent1, parent2, "morph_quality");
  QualityRecord r;
  r.morph_id = morph_id;
  r.psnr_avg = (psnr(morph, parent1) + psnr(morph, parent2)) / 2.0;
  r.ssim_avg = (ssim_global(morph, parent1, params) + ssim_global(morph, parent2, params)) / 2.0;
  return r;
}

CiSummary summarize_ci(std::span<const double> values) {
  if (values.size() < 2) throw ValueError(fmt::format("summarize_ci: need at least 2 values, got {}", values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw ValueError(fmt::format("summarize_ci: value {} is not finite", i));
  }
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * sd / std::sqrt(n), values.size()};
}

QualityReport summarize_quality(std::vector<QualityRecord> records) {
  QualityReport report;
  std::vector<double> psnrs;
  std::vector<double> ssims;
  for (const auto& r : records) {
    if (std::isinf(r.psnr_avg) && r.psnr_avg > 0) {
      ++report.psnr_infinite;
    } else {
      psnrs.push_back(r.psnr_avg);
    }
    ssims.push_back(r.ssim_avg);
  }
  if (report.psnr_infinite > 0) {
    report.warnings.push_back(fmt::format("{} record(s) with infinite PSNR left out of the interval", report.psnr_infinite));
  }
  if (psnrs.size() >= 2) {
    report.psnr = summarize_ci(psnrs);
  } else {
    report.warnings.push_back("fewer than 2 finite PSNR values; no interval");
  }
  if (ssims.size() >= 2) {
    report.ssim = summarize_ci(ssims);
  } else {
    report.warnings.push_back("fewer than 2 SSIM values; no interval");
  }
  report.records = std::move(records);
  return report;
}

std::string format_metric(double value, int precision) {
  if (std::isinf(value) && value > 0) return "INF";
  return fmt::format("{:.{}f}", value, precision);
}

std::string quality_csv(const std::vector<QualityRecord>& records) {
  std::string out = "morph_id,psnr_avg,ssim_avg\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{}\n", r.morph_id, format_metric(r.psnr_avg), format_metric(r.ssim_avg));
  }
  return out;
}

std::string quality_summary_json(const QualityReport& report) {
  using nlohmann::ordered_json;
  const auto ci = [](const std::optional<CiSummary>& s) -> ordered_json {
    if (!s) return nullptr;
    return {{"mean", s->mean}, {"halfwidth", s->halfwidth}, {"n", s->n}};
  };
  const ordered_json j = {{"records", report.records.size()},
                          {"ci_method", "normal approximation, z = 1.96, sample standard deviation"},
                          {"psnr_peak", 1.0},
                          {"psnr", ci(report.psnr)},
                          {"ssim", ci(report.ssim)},
                          {"psnr_infinite", report.psnr_infinite},
                          {"warnings", report.warnings}};
  return j.dump(2) + "\n";
}

}  // namespace morphbench
