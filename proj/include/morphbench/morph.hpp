#pragma once

#include "morphbench/error.hpp"
#include "morphbench/losses.hpp"
#include "morphbench/models.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace morphbench {

// (w1 * l1 + w2 * l2) / 2
template <typename A, typename B>
LatentCode average_latents(const Eigen::MatrixBase<A>& l1, const Eigen::MatrixBase<B>& l2, double w1 = 1.0,
                           double w2 = 1.0) {
  if (l1.rows() != l2.rows() || l1.cols() != l2.cols()) {
    throw ShapeError(fmt::format("average_latents: ({}, {}) vs ({}, {})", l1.rows(), l1.cols(), l2.rows(), l2.cols()));
  }
  if (!std::isfinite(w1) || !std::isfinite(w2)) throw ValueError("average_latents: weights must be finite");
  return (w1 * l1.template cast<double>() + w2 * l2.template cast<double>()) / 2.0;
}

struct OptimizerConfig {
  int iterations = 150;
  double lr0 = 0.03;
  double decay = 0.95;
  int decay_every = 6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  LossWeights weights;
  MsSsimParams ms_ssim;
  std::uint64_t seed = 0;

  void validate() const;
};

// lr0 * decay^floor(iter / decay_every)
double lr_at(int iter, const OptimizerConfig& cfg);

struct AdamState {
  Buffer m;
  Buffer v;
  long step = 0;

  explicit AdamState(Index size) : m(Buffer::Zero(size)), v(Buffer::Zero(size)) {}
};

// Bias-corrected Adam update of `params` in place. Throws NumericError
// naming `iteration` on a non-finite gradient.
void adam_step(AdamState& state, Buffer& params, const Buffer& grads, double lr, const OptimizerConfig& cfg,
               int iteration);

// Weighted contributions of each term, before the update at `iteration`.
struct TraceRow {
  int iteration = 0;
  double lr = 0;
  double total = 0;
  double perceptual = 0;
  double identity = 0;
  double ms_ssim = 0;
  double id_diff = 0;
  double cos1 = 0;
  double cos2 = 0;
};

struct MorphResult {
  LatentCode latent;
  Tensor image;
  std::vector<TraceRow> trace;
  double wall_seconds = 0;
  std::optional<std::string> failure;

  bool ok() const { return !failure; }
};

using LatentPair = std::pair<LatentCode, LatentCode>;

// Starts from the average of the given latents, or of the predictor's codes
// for i1 and i2, and runs the Adam loop on the latent only.
MorphResult optimize_morph(const Tensor& i1, const Tensor& i2, const ModelBundle& models, const OptimizerConfig& cfg,
                           const std::optional<LatentPair>& latents = std::nullopt);

// CSV with header iteration,lr,total,perceptual,identity,ms_ssim,id_diff,cos1,cos2
std::string trace_csv(const std::vector<TraceRow>& trace);

}  // namespace morphbench
