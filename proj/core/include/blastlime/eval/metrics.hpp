#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blastlime::eval {

/// Binary confusion counts with respect to a named positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  std::string positive_class = "poor";

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Cross-tabulates label indices. ConfigError on empty or unequal-length
/// input.
ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int positive_label,
                          std::string positive_class = "poor");

/// A ratio whose denominator was zero is left empty rather than reported as 0.
struct MetricsReport {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

/// ConfigError if the matrix is empty.
MetricsReport metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold = 0.0;  // +inf for the (0, 0) anchor
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Sweeps thresholds over the descending unique scores starting from (0, 0);
/// tied scores move in one step, so the trapezoidal area equals the
/// Mann-Whitney statistic with half credit for ties. `positive` marks the
/// positive samples. ConfigError unless both classes are present.
RocCurve roc_auc(std::span<const double> scores, std::span<const bool> positive);

/// Pair-counting AUC, O(P*N). Reference implementation.
double auc_pair_count(std::span<const double> scores, std::span<const bool> positive);

std::string metrics_json(const ConfusionMatrix& cm, const MetricsReport& report,
                         std::optional<double> auc = std::nullopt);

/// Aligned header + one metrics row, percentages with one decimal:
///   Model        Accuracy  Precision  Recall  F1-score  Sensitivity
std::string metrics_table(const std::string& row_name, const MetricsReport& report);

/// "threshold,fpr,tpr" CSV; the anchor threshold is written as "inf".
std::string roc_csv(const RocCurve& curve);

}  // namespace blastlime::eval
