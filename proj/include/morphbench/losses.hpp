#pragma once

#include "morphbench/ssim.hpp"
#include "morphbench/tensor.hpp"

#include <Eigen/Core>

#include <vector>

namespace morphbench {

// One tapped layer of a perceptual network.
struct FeatureLayer {
  int id = 0;
  Tensor features;
};

// Tapped activations in increasing layer-id order.
struct FeatureStack {
  std::vector<FeatureLayer> layers;

  void validate() const;
};

// Weights of the four loss terms. Defaults are the published settings.
struct LossWeights {
  double perceptual = 0.0002;
  double identity = 10.0;
  double ms_ssim = 1.0;
  double id_diff = 1.0;

  void validate() const;
};

struct LossParts {
  Tensor perceptual;
  Tensor identity;
  Tensor ms_ssim;
  Tensor id_diff;
};

// 1/2 sum_i |F_i(I1) - F_i(M)|^2 / N_i + 1/2 sum_i |F_i(I2) - F_i(M)|^2 / N_i
Tensor perceptual_loss(const FeatureStack& f1, const FeatureStack& f2, const FeatureStack& fm);

Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// Mean cosine distance of vm to v1 and v2, in [0, 2].
Tensor identity_loss(const Tensor& v1, const Tensor& v2, const Tensor& vm);

// Per-coordinate closed form
//   dL/dz_d = 1 - (x_d / 2|v1| + y_d / 2|v2|) * S_d / (z_d^2 + S_d)^(3/2),
//   S_d = sum_{d' != d} z_d'^2,
// as usually stated for the identity loss. It treats the other coordinates'
// share of v.z as independent of z_d and carries a constant 1, so it does
// NOT equal the true gradient (use backward() for that). Kept as a
// cross-check target so the gap can be measured.
Eigen::VectorXd identity_loss_grad_closed_form(const Eigen::VectorXd& v1, const Eigen::VectorXd& v2,
                                               const Eigen::VectorXd& vm);

// |(1 - cos(v1, vm)) - (1 - cos(v2, vm))|
Tensor id_diff_loss(const Tensor& v1, const Tensor& v2, const Tensor& vm);

struct SsimMaps {
  Tensor luminance;
  Tensor contrast;
  Tensor structure;
};

// Differentiable per-window l, c, s maps of two [h, w] planes.
SsimMaps ssim_components(const Tensor& x, const Tensor& y, const MsSsimParams& params);

// MS-SSIM over [h, w] planes or [c, h, w] images (mean over channels).
// The scale count is reduced to what the image size supports, and the
// retained exponents renormalized, unless `reduce_scales` is false.
// Negative per-scale factors are clamped at 0 before exponentiation.
Tensor ms_ssim(const Tensor& x, const Tensor& y, const MsSsimParams& params, bool reduce_scales = true);

// 1/2 (1 - MS-SSIM(I1, M)) + 1/2 (1 - MS-SSIM(I2, M))
Tensor ms_ssim_loss(const Tensor& i1, const Tensor& i2, const Tensor& im, const MsSsimParams& params);

Tensor composite_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace morphbench
