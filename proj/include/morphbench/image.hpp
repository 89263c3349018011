#pragma once

#include "morphbench/ssim.hpp"
#include "morphbench/tensor.hpp"

#include <filesystem>
#include <vector>

namespace morphbench {

// Planar image: one row-major Eigen plane per channel.
template <typename Scalar>
class BasicImage {
 public:
  BasicImage() = default;
  BasicImage(Index channels, Index height, Index width, Scalar fill = Scalar(0))
      : planes_(static_cast<std::size_t>(channels), Plane<Scalar>::Constant(height, width, fill)) {}

  Index channels() const { return static_cast<Index>(planes_.size()); }
  Index height() const { return planes_.empty() ? 0 : planes_.front().rows(); }
  Index width() const { return planes_.empty() ? 0 : planes_.front().cols(); }

  Plane<Scalar>& channel(Index c) { return planes_.at(static_cast<std::size_t>(c)); }
  const Plane<Scalar>& channel(Index c) const { return planes_.at(static_cast<std::size_t>(c)); }

  bool same_shape(const BasicImage& other) const {
    return channels() == other.channels() && height() == other.height() && width() == other.width();
  }

  friend bool operator==(const BasicImage& a, const BasicImage& b) { return a.planes_ == b.planes_; }

 private:
  std::vector<Plane<Scalar>> planes_;
};

using Image = BasicImage<double>;

// 8-bit PNG to three channels in [0, 1]; grey is replicated, alpha dropped.
Image read_png(const std::filesystem::path& path);

// Values are clamped to [0, 1] and rounded to 8 bits. 1 or 3 channels.
void write_png(const std::filesystem::path& path, const Image& image);

// [c, h, w] tensor <-> image.
Tensor to_tensor(const Image& image, bool requires_grad = false);
Image to_image(const Tensor& t);

}  // namespace morphbench
