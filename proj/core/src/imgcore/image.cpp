#include "blastlime/imgcore/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "blastlime/error.hpp"

namespace blastlime::img {

Image::Image(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels <= 0) throw ShapeError("invalid image dimensions");
  data_.assign(pixel_count() * static_cast<std::size_t>(channels), fill);
}

Image::Image(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (width < 0 || height < 0 || channels <= 0) throw ShapeError("invalid image dimensions");
  if (data_.size() != pixel_count() * static_cast<std::size_t>(channels)) {
    throw ShapeError("image data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(width) + "x" + std::to_string(height) + "x" +
                     std::to_string(channels));
  }
}

std::vector<float> Image::channel_means() const {
  std::vector<double> sums(static_cast<std::size_t>(channels_), 0.0);
  for (std::size_t i = 0; i < data_.size(); ++i) sums[i % sums.size()] += data_[i];
  std::vector<float> means(sums.size(), 0.0F);
  const double n = static_cast<double>(pixel_count());
  if (n > 0) {
    for (std::size_t c = 0; c < sums.size(); ++c) means[c] = static_cast<float>(sums[c] / n);
  }
  return means;
}

void Image::validate() const {
  if (data_.size() != pixel_count() * static_cast<std::size_t>(channels_)) {
    throw ShapeError("image data length does not match its dimensions");
  }
  for (float v : data_) {
    if (!std::isfinite(v) || v < 0.0F || v > 1.0F) {
      throw FormatError("image value outside [0, 1]: " + std::to_string(v));
    }
  }
}

float sample_bilinear(const Image& image, double x, double y, int channel) {
  const double max_x = image.width() - 1;
  const double max_y = image.height() - 1;
  x = std::clamp(x, 0.0, max_x);
  y = std::clamp(y, 0.0, max_y);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * image.at(x0, y0, channel) + ax * image.at(x1, y0, channel);
  const double bottom = (1.0 - ax) * image.at(x0, y1, channel) + ax * image.at(x1, y1, channel);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

Image resize_bilinear(const Image& image, Size target) {
  if (target.width <= 0 || target.height <= 0) throw ShapeError("resize target must be positive");
  if (image.empty()) throw ShapeError("cannot resize an empty image");
  if (target == image.size()) return image;
  Image out(target.width, target.height, image.channels());
  const double sx = static_cast<double>(image.width()) / target.width;
  const double sy = static_cast<double>(image.height()) / target.height;
  for (int y = 0; y < target.height; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < target.width; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = sample_bilinear(image, src_x, src_y, c);
    }
  }
  return out;
}

Image resize_nearest(const Image& image, Size target) {
  if (target.width <= 0 || target.height <= 0) throw ShapeError("resize target must be positive");
  if (target == image.size()) return image;
  Image out(target.width, target.height, image.channels());
  for (int y = 0; y < target.height; ++y) {
    const int sy = std::min(image.height() - 1,
                            static_cast<int>((y + 0.5) * image.height() / target.height));
    for (int x = 0; x < target.width; ++x) {
      const int sx = std::min(image.width() - 1,
                              static_cast<int>((x + 0.5) * image.width() / target.width));
      for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(sx, sy, c);
    }
  }
  return out;
}

Image rotate(const Image& image, double degrees) {
  if (!std::isfinite(degrees)) throw ConfigError("rotation angle must be finite");
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = (image.width() - 1) / 2.0;
  const double cy = (image.height() - 1) / 2.0;
  const double max_x = image.width() - 1;
  const double max_y = image.height() - 1;
  const std::vector<float> fill = image.channel_means();

  Image out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    const double dy = y - cy;
    for (int x = 0; x < image.width(); ++x) {
      const double dx = x - cx;
      // Inverse of the counter-clockwise (display) rotation.
      const double src_x = cos_t * dx - sin_t * dy + cx;
      const double src_y = sin_t * dx + cos_t * dy + cy;
      const bool inside = src_x >= 0.0 && src_x <= max_x && src_y >= 0.0 && src_y <= max_y;
      for (int c = 0; c < image.channels(); ++c) {
        out.at(x, y, c) =
            inside ? sample_bilinear(image, src_x, src_y, c) : fill[static_cast<std::size_t>(c)];
      }
    }
  }
  return out;
}

Image reflect(const Image& image) {
  Image out(image.width(), image.height(), image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < image.channels(); ++c) {
        out.at(image.width() - 1 - x, y, c) = image.at(x, y, c);
      }
    }
  }
  return out;
}

}  // namespace blastlime::img
