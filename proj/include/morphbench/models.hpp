#pragma once

#include "morphbench/losses.hpp"
#include "morphbench/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace morphbench {

using LatentCode = RowMatrix<double>;

struct LatentShape {
  Index layers = 18;
  Index dims = 512;

  Index size() const { return layers * dims; }
  friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

// Latent tensor [layers, dims] -> image tensor [3, h, w].
class Generator {
 public:
  virtual ~Generator() = default;
  virtual LatentShape latent_shape() const = 0;
  virtual Shape image_shape() const = 0;
  virtual Tensor generate(const Tensor& latent) const = 0;
};

// Image -> unnormalized embedding of fixed length.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Index dim() const = 0;
  virtual Tensor embed(const Tensor& image) const = 0;
};

class PerceptualNet {
 public:
  virtual ~PerceptualNet() = default;
  virtual FeatureStack features(const Tensor& image) const = 0;
};

// Image -> latent code that approximately reproduces it.
class LatentPredictor {
 public:
  virtual ~LatentPredictor() = default;
  virtual LatentCode predict(const Tensor& image) const = 0;
};

// Single tapped layer holding the image itself.
class IdentityFeatures final : public PerceptualNet {
 public:
  FeatureStack features(const Tensor& image) const override;
};

struct ToyModelConfig {
  std::uint64_t seed = 7;
  Index image_side = 64;
  LatentShape latent;
  Index embed_dim = 64;

  void validate() const;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

using WeightSet = std::vector<NamedTensor>;

// Immutable after construction; safe to share between workers.
struct ModelBundle {
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<const PerceptualNet> perceptual;
  std::shared_ptr<const LatentPredictor> predictor;

  // Set for toy bundles, which can be saved.
  std::optional<ToyModelConfig> toy_config;
  std::shared_ptr<const WeightSet> weights;

  LatentShape latent_shape() const { return generator->latent_shape(); }
  Shape image_shape() const { return generator->image_shape(); }
};

ModelBundle make_toy_models(const ToyModelConfig& config);
ModelBundle make_toy_models(std::uint64_t seed, Index image_side = 64, LatentShape latent = {},
                            Index embed_dim = 64);

// Names and shapes of the toy weights, in container order.
std::vector<std::pair<std::string, Shape>> toy_weight_layout(const ToyModelConfig& config);

// Toy architecture with the given weights. Throws ShapeMismatchError when
// names or shapes disagree with toy_weight_layout(config).
ModelBundle toy_models_from_weights(const ToyModelConfig& config, WeightSet weights);

// Container: 8-byte magic, u64 manifest length, JSON manifest, f64 payload
// (all little-endian).
void save_model_weights(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model_weights(const std::filesystem::path& path);

// Procedural face-like test image [3, side, side] in [0, 1].
Tensor toy_face(std::uint64_t seed, Index side = 64);

// Parses "toy:<seed>" or a container path.
ModelBundle resolve_models(const std::string& source, Index image_side = 64, LatentShape latent = {});

}  // namespace morphbench
