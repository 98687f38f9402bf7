#pragma once

#include <cstdint>
#include <string>

#include "blastlime/imgcore/dataset.hpp"

namespace blastlime::img {

struct AugmentParams {
  int variants_per_image = 14;
  double rotation_probability = 0.5;
  double max_rotation_degrees = 10.0;
  double reflection_probability = 1.0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// The transform drawn for one variant. Draws come from the stream keyed by
/// (seed, source index, variant index), so the result does not depend on
/// scheduling.
struct VariantTransform {
  bool rotated = false;
  double angle_degrees = 0.0;
  bool reflected = false;

  std::string tag() const;
};

VariantTransform draw_variant(const AugmentParams& params, std::size_t source_index,
                              std::size_t variant_index);

Image apply_variant(const Image& image, const VariantTransform& transform);

/// Returns every original followed by its variants (source order preserved).
/// Variants inherit label, source_id and, when present, the source's split.
/// Throws ConfigError if an input sample is not an original.
Dataset augment_dataset(const Dataset& originals, const AugmentParams& params);

}  // namespace blastlime::img
