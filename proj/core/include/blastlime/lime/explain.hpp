#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "blastlime/error.hpp"
#include "blastlime/imgcore/image.hpp"
#include "blastlime/lime/regression.hpp"
#include "blastlime/lime/superpixels.hpp"

namespace blastlime::lime {

struct LimeConfig {
  int segments = 50;
  double compactness = 10.0;
  int slic_iterations = 10;
  int samples = 1000;
  double sigma = 0.25;
  DistanceKind distance = DistanceKind::Cosine;
  int k = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Class whose probability is explained; defaults to the argmax on the
  /// unmasked image.
  std::optional<int> explained_class;

  SlicParams slic() const { return {segments, compactness, slic_iterations}; }
  /// sigma > 0, k >= 1, segments >= 1, samples >= 2.
  void validate() const;
};

/// Black-box classifier: image to class probabilities. Called concurrently
/// when workers > 1.
using PredictFn = std::function<std::vector<double>(const img::Image&)>;

/// A predict_fn failure, tagged with the perturbation sample it occurred on.
class PredictionError : public Error {
 public:
  PredictionError(std::size_t sample, const std::string& what)
      : Error("prediction failed on perturbation sample " + std::to_string(sample) + ": " + what), sample_(sample) {}
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::size_t sample_;
};

struct Explanation {
  int explained_class = 0;
  std::vector<int> segments;    // selected superpixels in order of entry
  std::vector<double> weights;  // surrogate coefficient per selected segment
  double intercept = 0.0;
  double fidelity = 0.0;
  bool rank_deficient = false;
  int effective_k = 0;
  std::vector<std::string> warnings;
  LimeConfig config;
  SuperpixelMap superpixels;

  // The perturbation neighbourhood the surrogate was fitted on.
  MaskRows masks;
  std::vector<double> responses;
  std::vector<double> kernel_weights;
};

/// segment -> sample -> mask -> predict -> kernel -> K-LASSO -> weighted
/// least squares -> fidelity. K larger than the segment count is clamped with
/// a warning. ConfigError when samples < segments + 2.
Explanation explain(const PredictFn& predict_fn, const img::Image& image, const LimeConfig& config);

/// As above with a precomputed segmentation.
Explanation explain_with_segments(const PredictFn& predict_fn, const img::Image& image, SuperpixelMap superpixels,
                                  const LimeConfig& config);

/// {class, segments: [{id, weight, pixel_count}], intercept, fidelity, config}
std::string explanation_json(const Explanation& explanation);

/// Union of the selected segments as a 0/1 pixel mask.
std::vector<std::uint8_t> explanation_support(const Explanation& explanation);

/// IoU of two binary masks; two empty masks score 1.
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// IoU between the explanation's support and a single-channel annotation
/// (nonzero = annotated). ShapeError on dimension mismatch.
double explanation_iou(const Explanation& explanation, const img::Image& annotation);

/// The top_k selected segments by |weight| keep their intensity, with their
/// boundary drawn green (positive weight) or red (negative); everything else
/// is scaled to 30%. Output is always RGB. ConfigError unless
/// 0 <= top_k <= selected count.
img::Image render_overlay(const img::Image& image, const Explanation& explanation, int top_k);

inline constexpr float kOverlayAttenuation = 0.3F;

}  // namespace blastlime::lime
