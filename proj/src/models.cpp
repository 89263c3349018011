#include "morphbench/models.hpp"

#include "morphbench/error.hpp"
#include "morphbench/random.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace morphbench {

namespace {

constexpr Index kLowRes = 8;
constexpr Index kChannels = 3;
constexpr Index kEmbedChannels[] = {8, 8};
constexpr Index kEmbedKernel = 5;
constexpr Index kFeatureChannels[] = {4, 4, 8, 8};
constexpr Index kFeatureStride[] = {1, 2, 2, 2};
constexpr Index kFeatureKernel = 3;

Index conv_out(Index n, Index k, Index stride) { return (n - k) / stride + 1; }

// Bilinear interpolation matrix [out, in], corners aligned.
Eigen::MatrixXd interpolation_matrix(Index out, Index in) {
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(out, in);
  for (Index i = 0; i < out; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    const Index lo = std::min(static_cast<Index>(std::floor(pos)), in - 2);
    const double t = pos - static_cast<double>(lo);
    u(i, lo) += 1.0 - t;
    u(i, lo + 1) += t;
  }
  return u;
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Multi-output valid convolution: bank [n, c, k, k] over x [c, h, w] -> [n, oh, ow].
Tensor conv_bank(const Tensor& x, const Tensor& bank, Index stride) {
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(bank.dim(0)));
  for (Index i = 0; i < bank.dim(0); ++i) outputs.push_back(conv2d(x, select(bank, i), stride));
  return concat(outputs);
}

void check_image(const Tensor& image, const Shape& expected, const char* who) {
  if (image.shape() != expected) {
    throw ShapeError(fmt::format("{}: image {} does not match model shape {}", who, to_string(image.shape()),
                                 to_string(expected)));
  }
}

class ToyGenerator final : public Generator {
 public:
  ToyGenerator(const ToyModelConfig& cfg, Tensor mix, Tensor bias)
      : cfg_(cfg), mix_(std::move(mix)), bias_(reshape(bias, {bias.size(), 1})) {
    const Eigen::MatrixXd u = interpolation_matrix(cfg.image_side, kLowRes);
    upsample_ = kron(u, u);
    upsample_t_ = Tensor::from_matrix(upsample_.transpose());
  }

  LatentShape latent_shape() const override { return cfg_.latent; }
  Shape image_shape() const override { return {kChannels, cfg_.image_side, cfg_.image_side}; }

  Tensor generate(const Tensor& latent) const override {
    if (latent.shape() != Shape{cfg_.latent.layers, cfg_.latent.dims}) {
      throw ShapeError(fmt::format("generator: latent {} does not match [{}, {}]", to_string(latent.shape()),
                                   cfg_.latent.layers, cfg_.latent.dims));
    }
    const Tensor z = reshape(latent, {cfg_.latent.size(), 1});
    const Tensor pre = matmul(mix_, z) + bias_;
    const Tensor low = reshape(0.5 + 0.5 * tanh(pre), {kChannels, kLowRes * kLowRes});
    return reshape(matmul(low, upsample_t_), image_shape());
  }

  const Tensor& mix() const { return mix_; }
  const Tensor& bias() const { return bias_; }
  const Eigen::MatrixXd& upsample() const { return upsample_; }

 private:
  ToyModelConfig cfg_;
  Tensor mix_;
  Tensor bias_;
  Eigen::MatrixXd upsample_;
  Tensor upsample_t_;
};

class ToyEmbedder final : public Embedder {
 public:
  ToyEmbedder(const ToyModelConfig& cfg, Tensor conv1, Tensor conv2, Tensor head)
      : cfg_(cfg), conv1_(std::move(conv1)), conv2_(std::move(conv2)), head_(std::move(head)) {}

  Index dim() const override { return cfg_.embed_dim; }

  Tensor embed(const Tensor& image) const override {
    check_image(image, {kChannels, cfg_.image_side, cfg_.image_side}, "embedder");
    Tensor h = tanh(conv_bank(image - 0.5, conv1_, 2));
    h = tanh(conv_bank(h, conv2_, 2));
    return reshape(matmul(reshape(h, {1, h.size()}), head_), {cfg_.embed_dim});
  }

 private:
  ToyModelConfig cfg_;
  Tensor conv1_;
  Tensor conv2_;
  Tensor head_;
};

class ToyPerceptual final : public PerceptualNet {
 public:
  ToyPerceptual(const ToyModelConfig& cfg, std::vector<Tensor> banks) : cfg_(cfg), banks_(std::move(banks)) {}

  FeatureStack features(const Tensor& image) const override {
    check_image(image, {kChannels, cfg_.image_side, cfg_.image_side}, "perceptual");
    FeatureStack stack;
    Tensor h = image - 0.5;
    for (std::size_t i = 0; i < banks_.size(); ++i) {
      h = tanh(conv_bank(h, banks_[i], kFeatureStride[i]));
      stack.layers.push_back({static_cast<int>(i) + 1, h});
    }
    return stack;
  }

 private:
  ToyModelConfig cfg_;
  std::vector<Tensor> banks_;
};

// Inverts the generator: pseudo-inverse of the upsampling, inverse of the
// squashing, then the minimum-norm least-squares latent.
class ToyPredictor final : public LatentPredictor {
 public:
  ToyPredictor(const ToyModelConfig& cfg, const ToyGenerator& gen) : cfg_(cfg) {
    const Eigen::MatrixXd& k = gen.upsample();
    downsample_ = (k.transpose() * k).ldlt().solve(k.transpose());
    bias_ = Eigen::Map<const Eigen::VectorXd>(gen.bias().value().data(), gen.bias().size());
    mix_.compute(gen.mix().matrix());
  }

  LatentCode predict(const Tensor& image) const override {
    check_image(image, {kChannels, cfg_.image_side, cfg_.image_side}, "predictor");
    const Index plane = cfg_.image_side * cfg_.image_side;
    const Index low = kLowRes * kLowRes;
    Eigen::VectorXd pre(kChannels * low);
    for (Index c = 0; c < kChannels; ++c) {
      const Eigen::Map<const Eigen::VectorXd> y(image.value().data() + c * plane, plane);
      const Eigen::VectorXd a = downsample_ * y;
      for (Index p = 0; p < low; ++p) pre(c * low + p) = std::atanh(std::clamp(2.0 * a(p) - 1.0, -0.999, 0.999));
    }
    const Eigen::VectorXd z = mix_.solve(pre - bias_);
    LatentCode code(cfg_.latent.layers, cfg_.latent.dims);
    Eigen::Map<Eigen::VectorXd>(code.data(), code.size()) = z;
    return code;
  }

 private:
  ToyModelConfig cfg_;
  Eigen::MatrixXd downsample_;
  Eigen::VectorXd bias_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> mix_;
};

}  // namespace

FeatureStack IdentityFeatures::features(const Tensor& image) const { return FeatureStack{{{1, image}}}; }

void ToyModelConfig::validate() const {
  if (image_side < 32) throw ValueError(fmt::format("toy models: image_side {} < 32", image_side));
  if (embed_dim < 8) throw ValueError(fmt::format("toy models: embed_dim {} < 8", embed_dim));
  if (latent.layers < 1 || latent.dims < 1) {
    throw ValueError(fmt::format("toy models: invalid latent shape ({}, {})", latent.layers, latent.dims));
  }
}

std::vector<std::pair<std::string, Shape>> toy_weight_layout(const ToyModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> layout;
  const Index low = kChannels * kLowRes * kLowRes;
  layout.emplace_back("generator.mix", Shape{low, cfg.latent.size()});
  layout.emplace_back("generator.bias", Shape{low});

  Index side = cfg.image_side;
  Index in = kChannels;
  for (std::size_t i = 0; i < std::size(kEmbedChannels); ++i) {
    layout.emplace_back(fmt::format("embedder.conv{}", i + 1), Shape{kEmbedChannels[i], in, kEmbedKernel, kEmbedKernel});
    in = kEmbedChannels[i];
    side = conv_out(side, kEmbedKernel, 2);
  }
  layout.emplace_back("embedder.head", Shape{in * side * side, cfg.embed_dim});

  in = kChannels;
  for (std::size_t i = 0; i < std::size(kFeatureChannels); ++i) {
    layout.emplace_back(fmt::format("perceptual.conv{}", i + 1),
                        Shape{kFeatureChannels[i], in, kFeatureKernel, kFeatureKernel});
    in = kFeatureChannels[i];
  }
  return layout;
}

ModelBundle toy_models_from_weights(const ToyModelConfig& cfg, WeightSet weights) {
  const auto layout = toy_weight_layout(cfg);
  if (weights.size() != layout.size()) {
    throw ShapeMismatchError(fmt::format("toy models: {} weight tensors, expected {}", weights.size(), layout.size()));
  }
  std::map<std::string, Tensor> by_name;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    if (weights[i].name != name || weights[i].value.shape() != shape) {
      throw ShapeMismatchError(fmt::format("toy models: tensor {} is '{}' {}, expected '{}' {}", i, weights[i].name,
                                           to_string(weights[i].value.shape()), name, to_string(shape)));
    }
    if (!weights[i].value.value().allFinite()) throw NumericError(fmt::format("toy models: '{}' is not finite", name));
    by_name[name] = weights[i].value.detach();
  }

  auto gen = std::make_shared<ToyGenerator>(cfg, by_name.at("generator.mix"), by_name.at("generator.bias"));
  std::vector<Tensor> banks;
  for (std::size_t i = 0; i < std::size(kFeatureChannels); ++i) {
    banks.push_back(by_name.at(fmt::format("perceptual.conv{}", i + 1)));
  }

  ModelBundle bundle;
  bundle.predictor = std::make_shared<ToyPredictor>(cfg, *gen);
  bundle.generator = gen;
  bundle.embedder = std::make_shared<ToyEmbedder>(cfg, by_name.at("embedder.conv1"), by_name.at("embedder.conv2"),
                                                  by_name.at("embedder.head"));
  bundle.perceptual = std::make_shared<ToyPerceptual>(cfg, std::move(banks));
  bundle.toy_config = cfg;
  bundle.weights = std::make_shared<const WeightSet>(std::move(weights));
  return bundle;
}

ModelBundle make_toy_models(const ToyModelConfig& cfg) {
  Rng rng(cfg.seed);
  WeightSet weights;
  for (const auto& [name, shape] : toy_weight_layout(cfg)) {
    // 1/sqrt(fan-in) keeps pre-activations near unit variance.
    const Index fan_in = name == "embedder.head" ? shape.front() : numel(shape) / shape.front();
    const double scale = shape.size() == 1 ? 0.1 : 1.0 / std::sqrt(static_cast<double>(fan_in));
    Buffer values(numel(shape));
    for (Index i = 0; i < values.size(); ++i) values(i) = scale * rng.normal();
    weights.push_back({name, Tensor::from(shape, std::move(values))});
  }
  return toy_models_from_weights(cfg, std::move(weights));
}

ModelBundle make_toy_models(std::uint64_t seed, Index image_side, LatentShape latent, Index embed_dim) {
  return make_toy_models(ToyModelConfig{seed, image_side, latent, embed_dim});
}

ModelBundle resolve_models(const std::string& source, Index image_side, LatentShape latent) {
  if (source.rfind("toy:", 0) == 0) {
    const std::string seed = source.substr(4);
    std::size_t used = 0;
    std::uint64_t value = 0;
    try {
      value = std::stoull(seed, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (seed.empty() || used != seed.size()) throw ValueError(fmt::format("models: bad toy seed '{}'", seed));
    return make_toy_models(value, image_side, latent);
  }
  return load_model_weights(source);
}

}  // namespace morphbench
