#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace blastlime::img {

struct Size {
  int width = 0;
  int height = 0;

  friend bool operator==(const Size&, const Size&) = default;
};

/// Interleaved (HWC) raster with intensities in [0, 1].
///
/// Index of channel c at (x, y) is (y * width + x) * channels + c.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0F);
  Image(int width, int height, int channels, std::vector<float> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  Size size() const noexcept { return {width_, height_}; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int x, int y, int c) noexcept { return data_[index(x, y, c)]; }
  float at(int x, int y, int c) const noexcept { return data_[index(x, y, c)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  /// Per-channel arithmetic mean.
  std::vector<float> channel_means() const;

  /// Throws ShapeError/FormatError when the invariants do not hold
  /// (length mismatch, non-finite values, values outside [0, 1]).
  void validate() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
            static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Bilinear sample with pixel centres at integer coordinates. Coordinates are
/// clamped to the image border.
float sample_bilinear(const Image& image, double x, double y, int channel);

/// Bilinear resize using the half-pixel-centre convention:
/// source = (dest + 0.5) * (in / out) - 0.5, clamped to [0, in - 1].
Image resize_bilinear(const Image& image, Size target);

/// Nearest-neighbour resize (used for label/annotation masks).
Image resize_nearest(const Image& image, Size target);

/// Rotates about the image centre by `degrees` (positive = counter-clockwise
/// as displayed, y axis pointing down). Each output pixel is inverse-mapped and
/// bilinearly sampled; sources outside [0, w-1] x [0, h-1] take the per-channel
/// mean of the input.
Image rotate(const Image& image, double degrees);

/// Horizontal mirror: column c maps to width - 1 - c.
Image reflect(const Image& image);

}  // namespace blastlime::img
