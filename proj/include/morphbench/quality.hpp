#pragma once

#include "morphbench/error.hpp"
#include "morphbench/image.hpp"
#include "morphbench/ssim.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morphbench {

namespace detail {

template <typename Scalar>
void check_same_shape(const BasicImage<Scalar>& a, const BasicImage<Scalar>& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(fmt::format("{}: [{}, {}, {}] vs [{}, {}, {}]", who, a.channels(), a.height(), a.width(),
                                 b.channels(), b.height(), b.width()));
  }
  if (a.channels() == 0 || a.height() == 0 || a.width() == 0) throw ShapeError(fmt::format("{}: empty image", who));
}

}  // namespace detail

// 10 log10(peak^2 / MSE); +infinity when the images are identical.
template <typename Scalar>
double psnr(const BasicImage<Scalar>& x, const BasicImage<Scalar>& ref, double peak = 1.0) {
  detail::check_same_shape(x, ref, "psnr");
  if (!(peak > 0)) throw ValueError(fmt::format("psnr: peak {} must be positive", peak));
  double sq = 0;
  for (Index c = 0; c < x.channels(); ++c) {
    sq += (x.channel(c).template cast<double>() - ref.channel(c).template cast<double>()).squaredNorm();
  }
  const double mse = sq / static_cast<double>(x.channels() * x.height() * x.width());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

// Single-scale SSIM averaged over channels.
template <typename Scalar>
double ssim_global(const BasicImage<Scalar>& x, const BasicImage<Scalar>& y, const MsSsimParams& params = {}) {
  detail::check_same_shape(x, y, "ssim");
  double total = 0;
  for (Index c = 0; c < x.channels(); ++c) total += static_cast<double>(ssim_plane(x.channel(c), y.channel(c), params));
  return total / static_cast<double>(x.channels());
}

struct QualityRecord {
  std::string morph_id;
  double psnr_avg = 0;
  double ssim_avg = 0;
};

// Mean PSNR and SSIM of the morph against both parents.
QualityRecord morph_quality(const std::string& morph_id, const Image& morph, const Image& parent1,
                            const Image& parent2, const MsSsimParams& params = {});

struct CiSummary {
  double mean = 0;
  double halfwidth = 0;
  std::size_t n = 0;
};

// mean +- 1.96 sd / sqrt(n), sample standard deviation.
CiSummary summarize_ci(std::span<const double> values);

struct QualityReport {
  std::vector<QualityRecord> records;
  std::optional<CiSummary> psnr;
  std::optional<CiSummary> ssim;
  std::size_t psnr_infinite = 0;
  std::vector<std::string> warnings;
};

// Infinite PSNR values are counted and left out of the interval.
QualityReport summarize_quality(std::vector<QualityRecord> records);

// "INF" for +infinity, otherwise fixed precision.
std::string format_metric(double value, int precision = 6);

// morph_id,psnr_avg,ssim_avg
std::string quality_csv(const std::vector<QualityRecord>& records);
std::string quality_summary_json(const QualityReport& report);

}  // namespace morphbench
