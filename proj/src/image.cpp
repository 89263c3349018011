#include "morphbench/image.hpp"

#include "morphbench/error.hpp"

#include <fmt/format.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace morphbench {

Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError(fmt::format("{}: {}", path.string(), png.message));
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(fmt::format("{}: {}", path.string(), msg));
  }
  const Index h = png.height;
  const Index w = png.width;
  Image image(3, h, w);
  for (Index c = 0; c < 3; ++c) {
    auto& plane = image.channel(c);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) plane(i, j) = bytes[static_cast<std::size_t>((i * w + j) * 3 + c)] / 255.0;
  }
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const Index c = image.channels();
  if (c != 1 && c != 3) throw ShapeError(fmt::format("write_png: {} channels, expected 1 or 3", c));
  const Index h = image.height();
  const Index w = image.width();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(c * h * w));
  for (Index ch = 0; ch < c; ++ch) {
    const auto& plane = image.channel(ch);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) {
        const double v = std::clamp(plane(i, j), 0.0, 1.0);
        bytes[static_cast<std::size_t>((i * w + j) * c + ch)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw FormatError(fmt::format("{}: {}", path.string(), png.message));
  }
}

Tensor to_tensor(const Image& image, bool requires_grad) {
  const Index plane = image.height() * image.width();
  Buffer values(image.channels() * plane);
  for (Index c = 0; c < image.channels(); ++c) {
    values.segment(c * plane, plane) = Eigen::Map<const Buffer>(image.channel(c).data(), plane);
  }
  return Tensor::from({image.channels(), image.height(), image.width()}, std::move(values), requires_grad);
}

Image to_image(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError(fmt::format("to_image: expected [c, h, w], got {}", to_string(t.shape())));
  Image image(t.dim(0), t.dim(1), t.dim(2));
  const Index plane = t.dim(1) * t.dim(2);
  for (Index c = 0; c < t.dim(0); ++c) {
    Eigen::Map<Buffer>(image.channel(c).data(), plane) = t.value().segment(c * plane, plane);
  }
  return image;
}

}  // namespace morphbench
