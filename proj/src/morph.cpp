#include "morphbench/morph.hpp"

#include <chrono>
#include <cmath>

namespace morphbench {

void OptimizerConfig::validate() const {
  if (iterations < 1) throw ValueError(fmt::format("optimizer: iterations {} < 1", iterations));
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw ValueError(fmt::format("optimizer: lr0 {} must be positive", lr0));
  if (!(decay > 0 && decay <= 1)) throw ValueError(fmt::format("optimizer: decay {} outside (0, 1]", decay));
  if (decay_every < 1) throw ValueError(fmt::format("optimizer: decay_every {} < 1", decay_every));
  if (!(beta1 >= 0 && beta1 < 1)) throw ValueError(fmt::format("optimizer: beta1 {} outside [0, 1)", beta1));
  if (!(beta2 >= 0 && beta2 < 1)) throw ValueError(fmt::format("optimizer: beta2 {} outside [0, 1)", beta2));
  if (!(epsilon > 0)) throw ValueError(fmt::format("optimizer: epsilon {} must be positive", epsilon));
  weights.validate();
  ms_ssim.validate();
}

double lr_at(int iter, const OptimizerConfig& cfg) {
  if (iter < 0 || iter >= cfg.iterations) {
    throw ValueError(fmt::format("lr_at: iteration {} outside [0, {})", iter, cfg.iterations));
  }
  return cfg.lr0 * std::pow(cfg.decay, iter / cfg.decay_every);
}

void adam_step(AdamState& state, Buffer& params, const Buffer& grads, double lr, const OptimizerConfig& cfg,
               int iteration) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError(fmt::format("adam_step: {} params, {} grads, {} moments", params.size(), grads.size(),
                                 state.m.size()));
  }
  if (!grads.allFinite()) throw NumericError(fmt::format("adam_step: non-finite gradient at iteration {}", iteration));
  ++state.step;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.square();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params -= lr * (state.m / c1) / ((state.v / c2).sqrt() + cfg.epsilon);
}

MorphResult optimize_morph(const Tensor& i1, const Tensor& i2, const ModelBundle& models, const OptimizerConfig& cfg,
                           const std::optional<LatentPair>& latents) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  const Shape image_shape = models.image_shape();
  for (const Tensor* img : {&i1, &i2}) {
    if (img->shape() != image_shape) {
      throw ShapeError(fmt::format("optimize_morph: image {} does not match model shape {}", to_string(img->shape()),
                                   to_string(image_shape)));
    }
  }

  const LatentShape ls = models.latent_shape();
  LatentPair codes;
  if (latents) {
    codes = *latents;
  } else {
    if (!models.predictor) throw ValueError("optimize_morph: no latents given and the models have no predictor");
    codes = {models.predictor->predict(i1), models.predictor->predict(i2)};
  }
  for (const LatentCode* code : {&codes.first, &codes.second}) {
    if (code->rows() != ls.layers || code->cols() != ls.dims) {
      throw ShapeError(fmt::format("optimize_morph: latent ({}, {}) does not match ({}, {})", code->rows(),
                                   code->cols(), ls.layers, ls.dims));
    }
    if (!code->allFinite()) throw NumericError("optimize_morph: latent is not finite");
  }

  const LossWeights& w = cfg.weights;
  const Tensor ref1 = i1.detach();
  const Tensor ref2 = i2.detach();
  const Tensor v1 = models.embedder->embed(ref1);
  const Tensor v2 = models.embedder->embed(ref2);
  FeatureStack f1;
  FeatureStack f2;
  if (w.perceptual > 0) {
    f1 = models.perceptual->features(ref1);
    f2 = models.perceptual->features(ref2);
  }

  const LatentCode init = average_latents(codes.first, codes.second, 1.0, 1.0);
  Buffer params = Eigen::Map<const Buffer>(init.data(), init.size());
  Tensor latent = Tensor::from({ls.layers, ls.dims}, params, true);
  AdamState adam(params.size());

  MorphResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.iterations));
  const Tensor zero = Tensor::scalar(0.0);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr = lr_at(it, cfg);
    const Tensor im = models.generator->generate(latent);
    if (im.shape() != image_shape) {
      throw ShapeError(fmt::format("optimize_morph: generator produced {}, declared {}", to_string(im.shape()),
                                   to_string(image_shape)));
    }
    if (!im.value().allFinite()) {
      result.failure = fmt::format("non-finite generator output at iteration {}", it);
      break;
    }
    const Tensor vm = models.embedder->embed(im);

    LossParts parts{zero, zero, zero, zero};
    Tensor total;
    try {
      if (w.perceptual > 0) parts.perceptual = perceptual_loss(f1, f2, models.perceptual->features(im));
      if (w.identity > 0) parts.identity = identity_loss(v1, v2, vm);
      if (w.ms_ssim > 0) parts.ms_ssim = ms_ssim_loss(ref1, ref2, im, cfg.ms_ssim);
      if (w.id_diff > 0) parts.id_diff = id_diff_loss(v1, v2, vm);
      total = composite_loss(parts, w);
    } catch (const NumericError& e) {
      result.failure = fmt::format("{} at iteration {}", e.what(), it);
      break;
    }

    TraceRow row;
    row.iteration = it;
    row.lr = lr;
    row.total = total.item();
    row.perceptual = w.perceptual * parts.perceptual.item();
    row.identity = w.identity * parts.identity.item();
    row.ms_ssim = w.ms_ssim * parts.ms_ssim.item();
    row.id_diff = w.id_diff * parts.id_diff.item();
    row.cos1 = vm.value().allFinite() ? cosine_similarity(v1, vm.detach()).item() : std::nan("");
    row.cos2 = vm.value().allFinite() ? cosine_similarity(v2, vm.detach()).item() : std::nan("");
    result.trace.push_back(row);

    if (!std::isfinite(row.total)) {
      result.failure = fmt::format("non-finite loss at iteration {}", it);
      break;
    }
    latent.zero_grad();
    total.backward();
    const Buffer grads = latent.has_grad() ? latent.grad() : Buffer::Zero(params.size());
    try {
      adam_step(adam, params, grads, lr, cfg, it);
    } catch (const NumericError& e) {
      result.failure = e.what();
      break;
    }
    latent.assign(params);
  }

  result.latent = LatentCode(ls.layers, ls.dims);
  Eigen::Map<Buffer>(result.latent.data(), result.latent.size()) = params;
  result.image = models.generator->generate(latent.detach());
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "iteration,lr,total,perceptual,identity,ms_ssim,id_diff,cos1,cos2\n";
  for (const auto& r : trace) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.iteration, r.lr,
                       r.total, r.perceptual, r.identity, r.ms_ssim, r.id_diff, r.cos1, r.cos2);
  }
  return out;
}

}  // namespace morphbench
