#include "doctest.h"
#include "oracles.hpp"

#include "morphbench/morph.hpp"
#include "morphbench/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace morphbench;

namespace {

LatentCode random_code(const LatentShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  LatentCode code(shape.layers, shape.dims);
  for (Index i = 0; i < code.size(); ++i) code.data()[i] = rng.normal();
  return code;
}

Tensor render(const ModelBundle& models, const LatentCode& code) {
  return models.generator->generate(Tensor::from_matrix(code)).detach();
}

OptimizerConfig short_run(int iterations) {
  OptimizerConfig cfg;
  cfg.iterations = iterations;
  return cfg;
}

// Wraps a generator; reshapes its output, or poisons it from the given call on.
class FaultyGenerator final : public Generator {
 public:
  enum class Fault { nan, shape };
  FaultyGenerator(std::shared_ptr<const Generator> inner, Fault fault, int healthy_calls = 0)
      : inner_(std::move(inner)), fault_(fault), healthy_calls_(healthy_calls) {}
  LatentShape latent_shape() const override { return inner_->latent_shape(); }
  Shape image_shape() const override { return inner_->image_shape(); }
  Tensor generate(const Tensor& latent) const override {
    const Tensor img = inner_->generate(latent);
    if (fault_ == Fault::shape) return reshape(img, {img.dim(0), img.dim(1) * 2, img.dim(2) / 2});
    if (calls_++ < healthy_calls_) return img;
    return img + Tensor::full(img.shape(), std::numeric_limits<double>::quiet_NaN());
  }

 private:
  std::shared_ptr<const Generator> inner_;
  Fault fault_;
  int healthy_calls_;
  mutable int calls_ = 0;
};

}  // namespace

TEST_CASE("average_latents") {
  const LatentCode a = random_code({3, 4}, 1);
  CHECK(average_latents(a, a) == a);
  const LatentCode zero = LatentCode::Zero(3, 4);
  const LatentCode two = LatentCode::Constant(3, 4, 2.0);
  CHECK(average_latents(zero, two) == LatentCode::Ones(3, 4));
  CHECK(average_latents(a, two, 2.0, 0.0) == a);
  CHECK(average_latents(a, two) == average_latents(two, a));
  CHECK_THROWS_AS(average_latents(a, LatentCode::Zero(4, 3)), ShapeError);
  CHECK_THROWS_AS(average_latents(a, a, std::nan(""), 1.0), ValueError);
}

TEST_CASE("learning-rate schedule") {
  const OptimizerConfig cfg;
  CHECK(lr_at(0, cfg) == 0.03);
  CHECK(lr_at(5, cfg) == 0.03);
  CHECK(lr_at(6, cfg) == doctest::Approx(0.0285).epsilon(1e-14));
  CHECK(lr_at(149, cfg) == doctest::Approx(0.03 * std::pow(0.95, 24)).epsilon(1e-14));
  CHECK_THROWS_AS(lr_at(-1, cfg), ValueError);
  CHECK_THROWS_AS(lr_at(150, cfg), ValueError);
}

TEST_CASE("optimizer config validation") {
  const auto bad = [](auto mutate) {
    OptimizerConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_NOTHROW(OptimizerConfig{}.validate());
  CHECK_THROWS_AS(bad([](auto& c) { c.iterations = 0; }).validate(), ValueError);
  CHECK_THROWS_AS(bad([](auto& c) { c.decay = 0; }).validate(), ValueError);
  CHECK_THROWS_AS(bad([](auto& c) { c.decay = 1.01; }).validate(), ValueError);
  CHECK_NOTHROW(bad([](auto& c) { c.decay = 1.0; }).validate());
  CHECK_THROWS_AS(bad([](auto& c) { c.decay_every = 0; }).validate(), ValueError);
  CHECK_THROWS_AS(bad([](auto& c) { c.beta1 = 1.0; }).validate(), ValueError);
  CHECK_THROWS_AS(bad([](auto& c) { c.beta2 = -0.1; }).validate(), ValueError);
  CHECK_THROWS_AS(bad([](auto& c) { c.weights.identity = -1; }).validate(), ValueError);
}

TEST_CASE("adam step") {
  const OptimizerConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    AdamState st(3);
    Buffer p(3);
    p << 1.0, -2.0, 3.0;
    const Buffer before = p;
    adam_step(st, p, Buffer::Zero(3), 0.03, cfg, 0);
    CHECK((p == before).all());
  }
  SUBCASE("first step moves by about lr against the gradient") {
    AdamState st(2);
    Buffer p = Buffer::Zero(2);
    Buffer g(2);
    g << 5.0, -0.01;
    adam_step(st, p, g, 0.03, cfg, 0);
    CHECK(p(0) == doctest::Approx(-0.03).epsilon(1e-6));
    CHECK(p(1) == doctest::Approx(0.03).epsilon(1e-4));
  }
  SUBCASE("50-step trajectory on x^2 matches the oracle") {
    const auto expected = oracle::adam_on_square(1.5, 50, 0.03);
    AdamState st(1);
    Buffer x = Buffer::Constant(1, 1.5);
    for (int t = 0; t < 50; ++t) {
      adam_step(st, x, 2.0 * x, 0.03, cfg, t);
      CHECK(std::abs(x(0) - expected[static_cast<std::size_t>(t)]) < 1e-10);
    }
  }
  SUBCASE("non-finite gradient names the iteration") {
    AdamState st(1);
    Buffer x = Buffer::Zero(1);
    try {
      adam_step(st, x, Buffer::Constant(1, std::numeric_limits<double>::infinity()), 0.03, cfg, 17);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("17") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") {
    AdamState st(2);
    Buffer x = Buffer::Zero(3);
    CHECK_THROWS_AS(adam_step(st, x, Buffer::Zero(3), 0.03, cfg, 0), ShapeError);
  }
}

TEST_CASE("equal-subject morph") {
  const auto models = make_toy_models(7, 32, {4, 32}, 16);
  const LatentCode z = random_code(models.latent_shape(), 3);
  const Tensor img = render(models, z);

  SUBCASE("exact start: identity terms start at zero, id-diff stays zero") {
    const auto r = optimize_morph(img, img, models, short_run(20), LatentPair{z, z});
    REQUIRE(r.ok());
    REQUIRE(r.trace.size() == 20);
    CHECK(std::abs(r.trace.front().identity) < 1e-12);
    for (const auto& row : r.trace) CHECK(row.id_diff == 0.0);
  }
  SUBCASE("off-range subject: loss does not get worse") {
    Rng rng(4);
    Buffer noisy = img.value();
    for (auto& x : noisy) x = std::clamp(x + rng.normal(0.0, 0.05), 0.0, 1.0);
    const Tensor subject = Tensor::from(img.shape(), noisy);
    const auto r = optimize_morph(subject, subject, models, short_run(30));
    REQUIRE(r.ok());
    CHECK(r.trace.front().id_diff == 0.0);
    CHECK(r.trace.back().total <= r.trace.front().total);
  }
}

TEST_CASE("morph loop contracts") {
  const auto models = make_toy_models(7, 32, {4, 32}, 16);
  const Tensor i1 = render(models, random_code(models.latent_shape(), 1));
  const Tensor i2 = render(models, random_code(models.latent_shape(), 2));
  const OptimizerConfig cfg = short_run(24);

  std::vector<Buffer> before;
  for (const auto& w : *models.weights) before.push_back(w.value.value());

  const auto a = optimize_morph(i1, i2, models, cfg);
  const auto b = optimize_morph(i1, i2, models, cfg);
  REQUIRE(a.ok());
  REQUIRE(a.trace.size() == 24);

  SUBCASE("bit-identical reruns") {
    CHECK(trace_csv(a.trace) == trace_csv(b.trace));
    CHECK(a.latent == b.latent);
  }
  SUBCASE("model weights are untouched") {
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(((*models.weights)[i].value.value() == before[i]).all());
  }
  SUBCASE("lr column follows the schedule") {
    for (const auto& row : a.trace) CHECK(row.lr == lr_at(row.iteration, cfg));
  }
  SUBCASE("trace columns add up to the total") {
    for (const auto& row : a.trace) {
      CHECK(row.total == doctest::Approx(row.perceptual + row.identity + row.ms_ssim + row.id_diff).epsilon(1e-12));
    }
  }
  SUBCASE("final image is the generator applied to the final latent") {
    CHECK((a.image.value() == render(models, a.latent).value()).all());
  }
  SUBCASE("swapping the subjects gives the same total-loss trace") {
    const auto s = optimize_morph(i2, i1, models, cfg);
    REQUIRE(s.trace.size() == a.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) {
      CHECK(s.trace[k].total == doctest::Approx(a.trace[k].total).epsilon(1e-12));
    }
  }
}

TEST_CASE("identity features with small steps reduce to monotone least squares") {
  auto models = make_toy_models(5, 32, {4, 32}, 16);
  models.perceptual = std::make_shared<IdentityFeatures>();
  const Tensor i1 = render(models, random_code(models.latent_shape(), 11));
  const Tensor i2 = render(models, random_code(models.latent_shape(), 12));
  OptimizerConfig cfg = short_run(40);
  cfg.lr0 = 0.003;
  cfg.weights = {1.0, 0.0, 0.0, 0.0};
  const auto r = optimize_morph(i1, i2, models, cfg);
  REQUIRE(r.ok());
  for (std::size_t k = 1; k < r.trace.size(); ++k) {
    CHECK(r.trace[k].total <= r.trace[k - 1].total);
    CHECK(r.trace[k].identity == 0.0);
    CHECK(r.trace[k].ms_ssim == 0.0);
  }
}

TEST_CASE("morph failures") {
  const auto models = make_toy_models(7, 32, {4, 32}, 16);
  const Tensor img = render(models, random_code(models.latent_shape(), 1));

  SUBCASE("non-finite output aborts with the trace so far") {
    auto broken = models;
    broken.generator = std::make_shared<FaultyGenerator>(models.generator, FaultyGenerator::Fault::nan, 3);
    const auto r = optimize_morph(img, img, broken, short_run(10));
    CHECK_FALSE(r.ok());
    CHECK(r.trace.size() == 3);
    CHECK(r.failure->find("iteration 3") != std::string::npos);
  }
  SUBCASE("generator shape contract") {
    auto broken = models;
    broken.generator = std::make_shared<FaultyGenerator>(models.generator, FaultyGenerator::Fault::shape);
    CHECK_THROWS_AS(optimize_morph(img, img, broken, short_run(2)), ShapeError);
  }
  SUBCASE("image and latent shapes") {
    CHECK_THROWS_AS(optimize_morph(Tensor::zeros({3, 16, 16}), img, models, short_run(2)), ShapeError);
    const LatentCode wrong = LatentCode::Zero(3, 32);
    CHECK_THROWS_AS(optimize_morph(img, img, models, short_run(2), LatentPair{wrong, wrong}), ShapeError);
  }
}
