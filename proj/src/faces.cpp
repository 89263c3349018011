#include "morphbench/error.hpp"
#include "morphbench/models.hpp"
#include "morphbench/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace morphbench {

namespace {

struct Ellipse {
  double cx, cy, rx, ry;

  // Soft membership in [0, 1]; `softness` is in normalized units.
  double cover(double x, double y, double softness) const {
    const double d = std::hypot((x - cx) / rx, (y - cy) / ry) - 1.0;
    return 1.0 / (1.0 + std::exp(d * std::min(rx, ry) / softness));
  }
};

using Rgb = std::array<double, 3>;

Rgb blend(const Rgb& under, const Rgb& over, double alpha) {
  return {under[0] + alpha * (over[0] - under[0]), under[1] + alpha * (over[1] - under[1]),
          under[2] + alpha * (over[2] - under[2])};
}

}  // namespace

Tensor toy_face(std::uint64_t seed, Index side) {
  if (side < 8) throw ValueError(fmt::format("toy_face: side {} < 8", side));
  Rng rng(seed);
  constexpr Rgb kSkins[] = {{0.96, 0.80, 0.69}, {0.88, 0.67, 0.53}, {0.72, 0.52, 0.38}, {0.49, 0.33, 0.24}};
  const Rgb skin = kSkins[rng.integer(0, 3)];
  const Rgb hair = {rng.uniform(0.05, 0.5), rng.uniform(0.03, 0.35), rng.uniform(0.02, 0.25)};
  const Rgb top = {rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9)};
  const Rgb bottom = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  const Rgb iris = {rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.6)};
  const Rgb lips = {rng.uniform(0.55, 0.8), rng.uniform(0.2, 0.35), rng.uniform(0.25, 0.4)};

  const Ellipse face{0.5 + rng.uniform(-0.02, 0.02), 0.54, rng.uniform(0.27, 0.34), rng.uniform(0.36, 0.43)};
  const Ellipse hair_cap{face.cx, face.cy - 0.12, face.rx * rng.uniform(1.05, 1.2), face.ry * rng.uniform(0.75, 0.95)};
  const double eye_dx = rng.uniform(0.10, 0.14);
  const double eye_y = face.cy - rng.uniform(0.06, 0.10);
  const double eye_r = rng.uniform(0.035, 0.05);
  const Ellipse eye_l{face.cx - eye_dx, eye_y, eye_r * 1.4, eye_r};
  const Ellipse eye_r_{face.cx + eye_dx, eye_y, eye_r * 1.4, eye_r};
  const Ellipse nose{face.cx, face.cy + 0.03, 0.03, rng.uniform(0.05, 0.08)};
  const Ellipse mouth{face.cx, face.cy + rng.uniform(0.17, 0.22), rng.uniform(0.08, 0.12), rng.uniform(0.025, 0.04)};
  const double soft = 0.6 / static_cast<double>(side);

  Buffer out(3 * side * side);
  const Index plane = side * side;
  for (Index i = 0; i < side; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / static_cast<double>(side);
    for (Index j = 0; j < side; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / static_cast<double>(side);
      Rgb c = blend(top, bottom, y);
      c = blend(c, hair, hair_cap.cover(x, y, soft));
      const double shade = 1.0 - 0.25 * std::hypot((x - face.cx) / face.rx, (y - face.cy) / face.ry);
      c = blend(c, {skin[0] * shade, skin[1] * shade, skin[2] * shade}, face.cover(x, y, soft));
      c = blend(c, {skin[0] * 0.8, skin[1] * 0.75, skin[2] * 0.72}, 0.5 * nose.cover(x, y, soft));
      c = blend(c, {0.97, 0.97, 0.95}, eye_l.cover(x, y, soft) + eye_r_.cover(x, y, soft));
      const Ellipse pupil_l{eye_l.cx, eye_l.cy, eye_r * 0.6, eye_r * 0.6};
      const Ellipse pupil_r{eye_r_.cx, eye_r_.cy, eye_r * 0.6, eye_r * 0.6};
      c = blend(c, iris, pupil_l.cover(x, y, soft) + pupil_r.cover(x, y, soft));
      c = blend(c, lips, mouth.cover(x, y, soft));
      for (Index ch = 0; ch < 3; ++ch) out(ch * plane + i * side + j) = std::clamp(c[static_cast<std::size_t>(ch)], 0.0, 1.0);
    }
  }
  return Tensor::from({3, side, side}, std::move(out));
}

}  // namespace morphbench
