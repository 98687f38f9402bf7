#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "blastlime/imgcore/image.hpp"

namespace blastlime::lime {

struct SlicParams {
  int segments = 50;
  double compactness = 10.0;
  int iterations = 10;
};

/// Per-pixel segment labels in the contiguous range [0, count), plus per
/// segment pixel counts and mean colours (in the source image's channels).
struct SuperpixelMap {
  int width = 0;
  int height = 0;
  int channels = 0;
  int count = 0;
  std::vector<int> labels;  // row-major
  std::vector<std::size_t> pixel_counts;
  std::vector<float> mean_colors;  // count x channels

  int label(int x, int y) const { return labels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
  /// Throws ShapeError if labels are not contiguous or stats are inconsistent.
  void validate() const;
};

/// Builds a map from arbitrary integer labels: relabels by first appearance in
/// raster order and computes the statistics. Does not enforce connectivity.
SuperpixelMap make_superpixel_map(const img::Image& image, const std::vector<int>& labels);

/// SLIC k-means in (L, a, b, x, y) with distance sqrt(dc^2 + (ds / S)^2 m^2),
/// S = sqrt(pixels / segments), seeded on a regular grid and nudged to the
/// lowest-gradient pixel of each 3x3 neighbourhood. Afterwards each label is
/// made 4-connected: components smaller than a quarter of the nominal
/// segment area are merged, smallest first, into their largest neighbour.
///
/// ConfigError when segments < 1 or exceeds the pixel count, or the image is
/// smaller than 2x2.
SuperpixelMap segment_superpixels(const img::Image& image, const SlicParams& params);

/// Pixels of segments with z = 1 keep their value; the rest are replaced by
/// their segment's mean colour. ShapeError when z.size() != count or the map
/// does not match the image.
img::Image mask_image(const img::Image& image, std::span<const std::uint8_t> z, const SuperpixelMap& superpixels);

/// Number of 4-connected components of each label (1 everywhere for a valid
/// SLIC output).
std::vector<int> component_counts(const SuperpixelMap& superpixels);

/// sRGB in [0,1] to CIE L*a*b* (D65).
void srgb_to_lab(float r, float g, float b, double& l, double& a, double& bb);

}  // namespace blastlime::lime
