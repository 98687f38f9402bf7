#include "blastlime/lime/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "blastlime/parallel.hpp"

namespace blastlime::lime {
namespace {

int argmax(const std::vector<double>& p) {
  int best = 0;
  for (std::size_t j = 1; j < p.size(); ++j) {
    if (p[j] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

double class_probability(const std::vector<double>& p, int cls, std::size_t sample) {
  if (cls < 0 || static_cast<std::size_t>(cls) >= p.size()) {
    throw PredictionError(sample, "returned " + std::to_string(p.size()) + " probabilities, class " +
                                      std::to_string(cls) + " requested");
  }
  const double v = p[static_cast<std::size_t>(cls)];
  if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
    throw PredictionError(sample, "probability " + std::to_string(v) + " is outside [0, 1]");
  }
  return v;
}

const char* distance_name(DistanceKind kind) { return kind == DistanceKind::Cosine ? "cosine" : "hamming"; }

}  // namespace

void LimeConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("lime.sigma must be positive");
  if (k < 1) throw ConfigError("lime.k must be at least 1");
  if (segments < 1) throw ConfigError("lime.segments must be at least 1");
  if (samples < 2) throw ConfigError("lime.samples must be at least 2");
  if (!(compactness > 0.0)) throw ConfigError("SLIC compactness must be positive");
  if (slic_iterations < 1) throw ConfigError("SLIC iterations must be at least 1");
}

Explanation explain(const PredictFn& predict_fn, const img::Image& image, const LimeConfig& config) {
  config.validate();
  return explain_with_segments(predict_fn, image, segment_superpixels(image, config.slic()), config);
}

Explanation explain_with_segments(const PredictFn& predict_fn, const img::Image& image, SuperpixelMap superpixels,
                                  const LimeConfig& config) {
  config.validate();
  superpixels.validate();
  const auto d = static_cast<std::size_t>(superpixels.count);
  if (static_cast<std::size_t>(config.samples) < d + 2) {
    throw ConfigError("lime.samples = " + std::to_string(config.samples) + " is below segments + 2 = " +
                      std::to_string(d + 2));
  }

  Explanation ex;
  ex.config = config;
  ex.superpixels = std::move(superpixels);
  ex.effective_k = std::min(config.k, ex.superpixels.count);
  if (ex.effective_k < config.k) {
    ex.warnings.push_back("k = " + std::to_string(config.k) + " exceeds the " + std::to_string(ex.superpixels.count) +
                          " superpixels; clamped");
  }

  std::vector<double> original;
  try {
    original = predict_fn(image);
  } catch (const std::exception& e) {
    throw PredictionError(0, e.what());
  }
  ex.explained_class = config.explained_class.value_or(argmax(original));

  const auto n = static_cast<std::size_t>(config.samples);
  ex.masks = sample_perturbations(d, n, config.seed);
  ex.responses.assign(n, 0.0);
  ex.kernel_weights.assign(n, 0.0);
  // Sample 0 is the unmasked image, already evaluated.
  ex.responses[0] = class_probability(original, ex.explained_class, 0);
  parallel_for(n - 1, config.workers, [&](std::size_t j) {
    const std::size_t i = j + 1;
    const img::Image masked = mask_image(image, ex.masks[i], ex.superpixels);
    std::vector<double> p;
    try {
      p = predict_fn(masked);
    } catch (const PredictionError&) {
      throw;
    } catch (const std::exception& e) {
      throw PredictionError(i, e.what());
    }
    ex.responses[i] = class_probability(p, ex.explained_class, i);
  });
  for (std::size_t i = 0; i < n; ++i) ex.kernel_weights[i] = kernel_weight(ex.masks[i], config.sigma, config.distance);

  const Matrix x = to_matrix(ex.masks);
  const std::vector<std::size_t> selected =
      select_features_klasso(x, ex.responses, ex.kernel_weights, static_cast<std::size_t>(ex.effective_k));
  const Matrix xs = select_columns(x, selected);
  const LeastSquaresFit fit = fit_weighted_least_squares(xs, ex.responses, ex.kernel_weights);
  ex.segments.assign(selected.begin(), selected.end());
  ex.weights = fit.coefficients;
  ex.intercept = fit.intercept;
  ex.rank_deficient = fit.rank_deficient;
  if (fit.rank_deficient) ex.warnings.push_back("surrogate design is rank deficient");

  std::vector<double> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    predicted[i] = fit.predict(std::span<const double>(&xs.values[i * xs.cols], xs.cols));
  }
  ex.fidelity = weighted_r2(ex.responses, predicted, ex.kernel_weights);
  return ex;
}

std::string explanation_json(const Explanation& ex) {
  nlohmann::ordered_json j;
  j["class"] = ex.explained_class;
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ex.segments.size(); ++i) {
    const auto id = static_cast<std::size_t>(ex.segments[i]);
    segs.push_back({{"id", ex.segments[i]}, {"weight", ex.weights[i]}, {"pixel_count", ex.superpixels.pixel_counts[id]}});
  }
  j["segments"] = segs;
  j["intercept"] = ex.intercept;
  j["fidelity"] = ex.fidelity;
  j["superpixel_count"] = ex.superpixels.count;
  j["rank_deficient"] = ex.rank_deficient;
  j["warnings"] = ex.warnings;
  j["config"] = {{"sigma", ex.config.sigma},
                 {"K", ex.effective_k},
                 {"n_samples", ex.config.samples},
                 {"seed", ex.config.seed},
                 {"distance", distance_name(ex.config.distance)},
                 {"segmentation",
                  {{"algorithm", "slic"},
                   {"segments", ex.config.segments},
                   {"compactness", ex.config.compactness},
                   {"iterations", ex.config.slic_iterations}}}};
  return j.dump(2) + "\n";
}

std::vector<std::uint8_t> explanation_support(const Explanation& ex) {
  std::vector<std::uint8_t> chosen(static_cast<std::size_t>(ex.superpixels.count), 0);
  for (int s : ex.segments) chosen[static_cast<std::size_t>(s)] = 1;
  std::vector<std::uint8_t> support(ex.superpixels.labels.size());
  for (std::size_t p = 0; p < support.size(); ++p) support[p] = chosen[static_cast<std::size_t>(ex.superpixels.labels[p])];
  return support;
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("IoU: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += static_cast<std::size_t>(x && y);
    uni += static_cast<std::size_t>(x || y);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double explanation_iou(const Explanation& ex, const img::Image& annotation) {
  if (annotation.width() != ex.superpixels.width || annotation.height() != ex.superpixels.height) {
    throw ShapeError("annotation is " + std::to_string(annotation.width()) + "x" + std::to_string(annotation.height()) +
                     ", explanation is " + std::to_string(ex.superpixels.width) + "x" +
                     std::to_string(ex.superpixels.height));
  }
  const auto ch = static_cast<std::size_t>(annotation.channels());
  std::vector<std::uint8_t> truth(annotation.pixel_count());
  const auto data = annotation.data();
  for (std::size_t p = 0; p < truth.size(); ++p) {
    truth[p] = 0;
    for (std::size_t c = 0; c < ch; ++c) truth[p] |= static_cast<std::uint8_t>(data[p * ch + c] != 0.0F);
  }
  return mask_iou(explanation_support(ex), truth);
}

img::Image render_overlay(const img::Image& image, const Explanation& ex, int top_k) {
  if (top_k < 0 || static_cast<std::size_t>(top_k) > ex.segments.size()) {
    throw ConfigError("overlay: top_k = " + std::to_string(top_k) + " but only " + std::to_string(ex.segments.size()) +
                      " segments were selected");
  }
  const SuperpixelMap& sp = ex.superpixels;
  if (image.width() != sp.width || image.height() != sp.height) throw ShapeError("overlay: image does not match explanation");

  std::vector<std::size_t> rank(ex.segments.size());
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(ex.weights[a]) > std::abs(ex.weights[b]); });
  // 0 = attenuate, 1 = shown with positive weight, 2 = shown with negative weight
  std::vector<std::uint8_t> state(static_cast<std::size_t>(sp.count), 0);
  for (int i = 0; i < top_k; ++i) {
    const std::size_t r = rank[static_cast<std::size_t>(i)];
    state[static_cast<std::size_t>(ex.segments[r])] = ex.weights[r] >= 0.0 ? 1 : 2;
  }

  const int w = image.width(), h = image.height();
  const int ch = image.channels();
  img::Image out(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = sp.label(x, y);
      const std::uint8_t s = state[static_cast<std::size_t>(l)];
      const bool boundary = s != 0 && ((x > 0 && sp.label(x - 1, y) != l) || (x + 1 < w && sp.label(x + 1, y) != l) ||
                                       (y > 0 && sp.label(x, y - 1) != l) || (y + 1 < h && sp.label(x, y + 1) != l));
      for (int c = 0; c < 3; ++c) {
        const float v = image.at(x, y, ch >= 3 ? c : 0);
        if (boundary) {
          out.at(x, y, c) = (s == 1 ? c == 1 : c == 0) ? 1.0F : 0.0F;
        } else {
          out.at(x, y, c) = s != 0 ? v : v * kOverlayAttenuation;
        }
      }
    }
  }
  return out;
}

}  // namespace blastlime::lime
