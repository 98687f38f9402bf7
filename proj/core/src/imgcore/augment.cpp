#include "blastlime/imgcore/augment.hpp"

#include <cstdio>
#include <string>

#include "blastlime/error.hpp"
#include "blastlime/parallel.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::img {

std::string VariantTransform::tag() const {
  std::string out;
  if (rotated) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "rot%+.4f", angle_degrees);
    out = buf;
  }
  if (reflected) out += out.empty() ? "reflect" : "+reflect";
  return out.empty() ? "identity" : out;
}

VariantTransform draw_variant(const AugmentParams& params, std::size_t source_index,
                              std::size_t variant_index) {
  CounterRng rng(CounterRng::derive(params.seed, {source_index, variant_index}));
  // Fixed draw order: rotation coin, angle, reflection coin. The angle is
  // drawn even when unused so the stream layout never changes.
  VariantTransform t;
  t.rotated = rng.bernoulli(params.rotation_probability);
  const double angle = rng.uniform(-params.max_rotation_degrees, params.max_rotation_degrees);
  t.reflected = rng.bernoulli(params.reflection_probability);
  if (t.rotated) t.angle_degrees = angle;
  return t;
}

Image apply_variant(const Image& image, const VariantTransform& transform) {
  Image out = transform.rotated ? rotate(image, transform.angle_degrees) : image;
  if (transform.reflected) out = reflect(out);
  return out;
}

Dataset augment_dataset(const Dataset& originals, const AugmentParams& params) {
  if (params.variants_per_image < 0) throw ConfigError("variants_per_image must be >= 0");
  for (const auto& s : originals.samples) {
    if (s.transform_tag != kOriginalTag) {
      throw ConfigError("augment_dataset expects originals only; found tag '" + s.transform_tag + "'");
    }
  }
  const auto per_source = static_cast<std::size_t>(params.variants_per_image) + 1;
  Dataset out;
  out.class_names = originals.class_names;
  out.samples.resize(originals.size() * per_source);
  if (originals.split) out.split.emplace(out.samples.size());

  parallel_for(originals.size(), params.workers, [&](std::size_t s) {
    const LabeledSample& source = originals.samples[s];
    const std::size_t base = s * per_source;
    out.samples[base] = source;
    for (std::size_t v = 0; v < per_source - 1; ++v) {
      const VariantTransform t = draw_variant(params, s, v);
      LabeledSample& dst = out.samples[base + 1 + v];
      dst.image = apply_variant(source.image, t);
      dst.label = source.label;
      dst.source_id = source.source_id;
      dst.transform_tag = "v" + std::to_string(v) + ":" + t.tag();
    }
    if (out.split) {
      for (std::size_t k = 0; k < per_source; ++k) (*out.split)[base + k] = (*originals.split)[s];
    }
  });
  return out;
}

}  // namespace blastlime::img
