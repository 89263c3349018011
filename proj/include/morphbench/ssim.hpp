#pragma once

// Structural similarity on plain Eigen planes. This is the non-differentiable
// route used for quality reporting; the differentiable MS-SSIM loss in
// losses.hpp shares the parameters and window but builds its own graph.

#include "morphbench/error.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <cmath>
#include <numeric>
#include <vector>

namespace morphbench {

template <typename Scalar>
using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MsSsimParams {
  // Relative importance per scale, finest first. alpha = beta = gamma.
  std::vector<double> exponents{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  int scales() const { return static_cast<int>(exponents.size()); }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  double c3() const { return c2() / 2.0; }

  // Throws ValueError on out-of-domain settings. The exponent sum is
  // accepted within 1e-3 of one and renormalized by exponents_for().
  void validate() const {
    if (exponents.empty()) throw ValueError("ms-ssim: at least one scale is required");
    for (double e : exponents) {
      if (!(e > 0.0) || !std::isfinite(e)) throw ValueError(fmt::format("ms-ssim: invalid exponent {}", e));
    }
    const double total = std::accumulate(exponents.begin(), exponents.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-3) {
      throw ValueError(fmt::format("ms-ssim: exponents sum to {}, expected 1 within 1e-3", total));
    }
    if (window < 1 || !(sigma > 0.0)) throw ValueError("ms-ssim: invalid window");
    if (!(k1 > 0.0 && k1 < 0.1) || !(k2 > 0.0 && k2 < 0.1)) {
      throw ValueError(fmt::format("ms-ssim: K1={} K2={} must lie in (0, 0.1)", k1, k2));
    }
    if (!(dynamic_range > 0.0)) throw ValueError("ms-ssim: dynamic range must be positive");
  }

  // Largest scale count J <= scales() such that the coarsest level of a
  // dyadic pyramid over an h x w image still fits the window. 0 if none.
  int feasible_scales(Eigen::Index h, Eigen::Index w) const {
    int j = 0;
    while (j < scales() && h >= window && w >= window) {
      ++j;
      h /= 2;
      w /= 2;
    }
    return j;
  }

  // The first `used` exponents rescaled to sum to exactly one.
  std::vector<double> exponents_for(int used) const {
    std::vector<double> e(exponents.begin(), exponents.begin() + used);
    const double total = std::accumulate(e.begin(), e.end(), 0.0);
    for (double& v : e) v /= total;
    return e;
  }
};

// Normalized 1-D Gaussian profile.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gaussian_profile(int size, Scalar sigma) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g(size);
  const Scalar centre = Scalar(size - 1) / 2;
  for (int i = 0; i < size; ++i) {
    const Scalar d = Scalar(i) - centre;
    g(i) = std::exp(-(d * d) / (2 * sigma * sigma));
  }
  g /= g.sum();
  return g;
}

// Normalized 2-D Gaussian, the outer product of gaussian_profile.
template <typename Scalar>
Plane<Scalar> gaussian_window(int size, Scalar sigma) {
  const auto g = gaussian_profile(size, sigma);
  return g * g.transpose();
}

// Valid-mode correlation of a plane with a separable kernel profile.
template <typename Derived>
Plane<typename Derived::Scalar> filter_valid(const Eigen::MatrixBase<Derived>& x,
                                             const Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>& g) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index k = g.size();
  const Eigen::Index oh = x.rows() - k + 1;
  const Eigen::Index ow = x.cols() - k + 1;
  Plane<Scalar> rows = Plane<Scalar>::Zero(x.rows(), ow);
  for (Eigen::Index t = 0; t < k; ++t) rows += g(t) * x.middleCols(t, ow);
  Plane<Scalar> out = Plane<Scalar>::Zero(oh, ow);
  for (Eigen::Index t = 0; t < k; ++t) out += g(t) * rows.middleRows(t, oh);
  return out;
}

template <typename Scalar>
struct SsimComponentMaps {
  Plane<Scalar> luminance;
  Plane<Scalar> contrast;
  Plane<Scalar> structure;
};

// Per-window luminance, contrast and structure terms under the Gaussian
// window (valid positions only).
template <typename Derived>
SsimComponentMaps<typename Derived::Scalar> ssim_component_maps(const Eigen::MatrixBase<Derived>& x,
                                                                const Eigen::MatrixBase<Derived>& y,
                                                                const MsSsimParams& params) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError(fmt::format("ssim: shape mismatch {}x{} vs {}x{}", x.rows(), x.cols(), y.rows(), y.cols()));
  }
  if (x.rows() < params.window || x.cols() < params.window) {
    throw ShapeError(fmt::format("ssim: image {}x{} smaller than the {}-tap window", x.rows(), x.cols(),
                                 params.window));
  }
  const auto g = gaussian_profile(params.window, Scalar(params.sigma));
  const Plane<Scalar> xs = x;
  const Plane<Scalar> ys = y;
  const Plane<Scalar> mx = filter_valid(xs, g);
  const Plane<Scalar> my = filter_valid(ys, g);
  const Plane<Scalar> vx = (filter_valid(Plane<Scalar>(xs.cwiseProduct(xs)), g).array() - mx.array().square())
                               .cwiseMax(Scalar(0));
  const Plane<Scalar> vy = (filter_valid(Plane<Scalar>(ys.cwiseProduct(ys)), g).array() - my.array().square())
                               .cwiseMax(Scalar(0));
  const Plane<Scalar> cxy = filter_valid(Plane<Scalar>(xs.cwiseProduct(ys)), g).array() - mx.array() * my.array();
  const Plane<Scalar> sxsy = (vx.array() * vy.array()).sqrt();

  const auto c1 = Scalar(params.c1());
  const auto c2 = Scalar(params.c2());
  const auto c3 = Scalar(params.c3());
  SsimComponentMaps<Scalar> maps;
  maps.luminance = (2 * mx.array() * my.array() + c1) / (mx.array().square() + my.array().square() + c1);
  maps.contrast = (2 * sxsy.array() + c2) / (vx.array() + vy.array() + c2);
  maps.structure = (cxy.array() + c3) / (sxsy.array() + c3);
  return maps;
}

// Single-scale SSIM: mean over windows of l * c * s.
template <typename Derived>
typename Derived::Scalar ssim_plane(const Eigen::MatrixBase<Derived>& x, const Eigen::MatrixBase<Derived>& y,
                                   const MsSsimParams& params) {
  const auto maps = ssim_component_maps(x, y, params);
  return (maps.luminance.array() * maps.contrast.array() * maps.structure.array()).mean();
}

}  // namespace morphbench
