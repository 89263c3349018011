#include "morphbench/losses.hpp"

#include "morphbench/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace morphbench {

void FeatureStack::validate() const {
  for (std::size_t i = 1; i < layers.size(); ++i) {
    if (layers[i].id <= layers[i - 1].id) {
      throw ValueError(fmt::format("feature stack: layer ids must increase, got {} after {}", layers[i].id,
                                   layers[i - 1].id));
    }
  }
}

void LossWeights::validate() const {
  const double w[] = {perceptual, identity, ms_ssim, id_diff};
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(w[i]) || w[i] < 0.0) {
      throw ValueError(fmt::format("loss weight lambda{} must be finite and non-negative, got {}", i + 1, w[i]));
    }
  }
}

// ---------------------------------------------------------------------------

Tensor perceptual_loss(const FeatureStack& f1, const FeatureStack& f2, const FeatureStack& fm) {
  f1.validate();
  f2.validate();
  fm.validate();
  std::vector<int> divergent;
  const std::size_t n = std::max({f1.layers.size(), f2.layers.size(), fm.layers.size()});
  for (std::size_t i = 0; i < n; ++i) {
    const bool present = i < f1.layers.size() && i < f2.layers.size() && i < fm.layers.size();
    const bool same = present && f1.layers[i].id == fm.layers[i].id && f2.layers[i].id == fm.layers[i].id &&
                      f1.layers[i].features.shape() == fm.layers[i].features.shape() &&
                      f2.layers[i].features.shape() == fm.layers[i].features.shape();
    if (!same) {
      for (const auto* s : {&f1, &f2, &fm}) {
        if (i < s->layers.size()) divergent.push_back(s->layers[i].id);
      }
    }
  }
  if (!divergent.empty() || fm.layers.empty()) {
    throw ShapeError(fmt::format("perceptual loss: feature stacks disagree at layer ids [{}]", fmt::join(divergent, ", ")));
  }

  Tensor to1 = Tensor::scalar(0.0);
  Tensor to2 = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < fm.layers.size(); ++i) {
    const Tensor& m = fm.layers[i].features;
    const Tensor d1 = f1.layers[i].features - m;
    const Tensor d2 = f2.layers[i].features - m;
    to1 = to1 + mean(d1 * d1);
    to2 = to2 + mean(d2 * d2);
  }
  return 0.5 * to1 + 0.5 * to2;
}

namespace {

void check_embeddings(const Tensor& v1, const Tensor& v2, const Tensor& vm) {
  for (const Tensor* v : {&v1, &v2, &vm}) {
    if (v->rank() != 1) throw ShapeError(fmt::format("embedding must be 1-D, got {}", to_string(v->shape())));
    const double norm = v->value().matrix().norm();
    if (!std::isfinite(norm)) throw NumericError("embedding is not finite");
    if (norm == 0.0) throw ValueError("embedding has zero norm");
  }
  if (v1.size() != vm.size() || v2.size() != vm.size()) {
    throw ShapeError(fmt::format("embedding dimensions differ: {}, {}, {}", v1.size(), v2.size(), vm.size()));
  }
}

}  // namespace

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("cosine: shape mismatch {} vs {}", to_string(a.shape()), to_string(b.shape())));
  }
  const Tensor dot = sum(a * b);
  const Tensor na = sqrt(sum(a * a));
  const Tensor nb = sqrt(sum(b * b));
  if (na.item() == 0.0 || nb.item() == 0.0) throw ValueError("cosine: zero-norm vector");
  return dot / (na * nb);
}

Tensor identity_loss(const Tensor& v1, const Tensor& v2, const Tensor& vm) {
  check_embeddings(v1, v2, vm);
  const Tensor d1 = 1.0 - cosine_similarity(v1, vm);
  const Tensor d2 = 1.0 - cosine_similarity(v2, vm);
  return (d1 + d2) / 2.0;
}

Eigen::VectorXd identity_loss_grad_closed_form(const Eigen::VectorXd& v1, const Eigen::VectorXd& v2,
                                               const Eigen::VectorXd& vm) {
  check_embeddings(Tensor::from({v1.size()}, v1.array()), Tensor::from({v2.size()}, v2.array()),
                   Tensor::from({vm.size()}, vm.array()));
  const double n1 = v1.norm();
  const double n2 = v2.norm();
  const Eigen::Index dims = vm.size();
  // Prefix/suffix sums keep S_d exactly zero when only z_d is non-zero.
  Eigen::VectorXd prefix = Eigen::VectorXd::Zero(dims + 1);
  Eigen::VectorXd suffix = Eigen::VectorXd::Zero(dims + 1);
  for (Eigen::Index d = 0; d < dims; ++d) prefix(d + 1) = prefix(d) + vm(d) * vm(d);
  for (Eigen::Index d = dims; d-- > 0;) suffix(d) = suffix(d + 1) + vm(d) * vm(d);

  Eigen::VectorXd grad(dims);
  for (Eigen::Index d = 0; d < dims; ++d) {
    const double others = prefix(d) + suffix(d + 1);
    const double denom = std::pow(vm(d) * vm(d) + others, 1.5);
    grad(d) = 1.0 - (v1(d) / (2.0 * n1) + v2(d) / (2.0 * n2)) * others / denom;
  }
  return grad;
}

Tensor id_diff_loss(const Tensor& v1, const Tensor& v2, const Tensor& vm) {
  check_embeddings(v1, v2, vm);
  const Tensor d1 = 1.0 - cosine_similarity(v1, vm);
  const Tensor d2 = 1.0 - cosine_similarity(v2, vm);
  return abs(d1 - d2);
}

// ---------------------------------------------------------------------------

SsimMaps ssim_components(const Tensor& x, const Tensor& y, const MsSsimParams& params) {
  if (x.rank() != 2 || x.shape() != y.shape()) {
    throw ShapeError(fmt::format("ssim: expected two equal [h, w] planes, got {} and {}", to_string(x.shape()),
                                 to_string(y.shape())));
  }
  if (x.dim(0) < params.window || x.dim(1) < params.window) {
    throw ShapeError(fmt::format("ssim: image {} smaller than the {}-tap window", to_string(x.shape()), params.window));
  }
  const Tensor window = Tensor::from_matrix(gaussian_window<double>(params.window, params.sigma));
  const Tensor mx = conv2d(x, window);
  const Tensor my = conv2d(y, window);
  const Tensor vx = clamp_min(conv2d(x * x, window) - mx * mx, 0.0);
  const Tensor vy = clamp_min(conv2d(y * y, window) - my * my, 0.0);
  const Tensor cxy = conv2d(x * y, window) - mx * my;
  const Tensor sxsy = sqrt(vx * vy);

  SsimMaps maps;
  maps.luminance = (2.0 * mx * my + params.c1()) / (mx * mx + my * my + params.c1());
  maps.contrast = (2.0 * sxsy + params.c2()) / (vx + vy + params.c2());
  maps.structure = (cxy + params.c3()) / (sxsy + params.c3());
  return maps;
}

namespace {

Tensor ms_ssim_plane(Tensor x, Tensor y, const MsSsimParams& params, int used) {
  const std::vector<double> e = params.exponents_for(used);
  Tensor product = Tensor::scalar(1.0);
  for (int j = 0; j < used; ++j) {
    const SsimMaps maps = ssim_components(x, y, params);
    product = product * pow(clamp_min(mean(maps.contrast), 0.0), e[j]) *
              pow(clamp_min(mean(maps.structure), 0.0), e[j]);
    if (j + 1 == used) {
      product = product * pow(clamp_min(mean(maps.luminance), 0.0), e[j]);
    } else {
      x = downsample2x(x);
      y = downsample2x(y);
    }
  }
  return product;
}

}  // namespace

Tensor ms_ssim(const Tensor& x, const Tensor& y, const MsSsimParams& params, bool reduce_scales) {
  params.validate();
  if (x.shape() != y.shape() || (x.rank() != 2 && x.rank() != 3)) {
    throw ShapeError(fmt::format("ms-ssim: expected equal [h, w] or [c, h, w] images, got {} and {}",
                                 to_string(x.shape()), to_string(y.shape())));
  }
  const Index h = x.dim(x.rank() - 2);
  const Index w = x.dim(x.rank() - 1);
  const int used = params.feasible_scales(h, w);
  if (used == 0 || (!reduce_scales && used < params.scales())) {
    throw ShapeError(fmt::format("ms-ssim: {}x{} image too small for {} scales with a {}-tap window", h, w,
                                 params.scales(), params.window));
  }
  if (x.rank() == 2) return ms_ssim_plane(x, y, params, used);

  Tensor total = Tensor::scalar(0.0);
  for (Index c = 0; c < x.dim(0); ++c) total = total + ms_ssim_plane(select(x, c), select(y, c), params, used);
  return total / static_cast<double>(x.dim(0));
}

Tensor ms_ssim_loss(const Tensor& i1, const Tensor& i2, const Tensor& im, const MsSsimParams& params) {
  if (i1.shape() != im.shape() || i2.shape() != im.shape()) {
    throw ShapeError(fmt::format("ms-ssim loss: shapes {}, {}, {} differ", to_string(i1.shape()),
                                 to_string(i2.shape()), to_string(im.shape())));
  }
  return 0.5 * (1.0 - ms_ssim(i1, im, params)) + 0.5 * (1.0 - ms_ssim(i2, im, params));
}

Tensor composite_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  for (const Tensor* p : {&parts.perceptual, &parts.identity, &parts.ms_ssim, &parts.id_diff}) {
    if (p->size() != 1) throw ShapeError(fmt::format("composite loss: part has shape {}", to_string(p->shape())));
  }
  return weights.perceptual * parts.perceptual + weights.identity * parts.identity +
         weights.ms_ssim * parts.ms_ssim + weights.id_diff * parts.id_diff;
}

}  // namespace morphbench
