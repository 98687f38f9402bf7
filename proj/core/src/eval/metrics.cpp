#include "blastlime/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "blastlime/error.hpp"

namespace blastlime::eval {
namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v * 100.0);
  return buf;
}

}  // namespace

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int positive_label,
                          std::string positive_class) {
  if (predicted.size() != truth.size()) {
    throw ConfigError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                      std::to_string(truth.size()) + " labels");
  }
  if (predicted.empty()) throw ConfigError("confusion: empty input");
  ConfusionMatrix cm;
  cm.positive_class = std::move(positive_class);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] == positive_label;
    const bool t = truth[i] == positive_label;
    if (p && t) ++cm.tp;
    else if (p) ++cm.fp;
    else if (t) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ConfigError("metrics: empty confusion matrix");
  MetricsReport r;
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  r.precision = ratio(cm.tp, cm.tp + cm.fp);
  r.recall = ratio(cm.tp, cm.tp + cm.fn);
  r.sensitivity = r.recall;
  r.specificity = ratio(cm.tn, cm.tn + cm.fp);
  if (r.precision && r.recall && (*r.precision + *r.recall) > 0.0) {
    r.f1 = 2.0 * *r.precision * *r.recall / (*r.precision + *r.recall);
  }
  return r;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ConfigError("roc_auc: scores and labels differ in length");
  const auto pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t neg = positive.size() - pos;
  if (pos == 0 || neg == 0) throw ConfigError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    const double threshold = scores[order[i]];
    const std::size_t prev_tp = tp;
    const std::size_t prev_fp = fp;
    for (; i < order.size() && scores[order[i]] == threshold; ++i) {
      if (positive[order[i]]) ++tp;
      else ++fp;
    }
    // Trapezoid in count units; divided by pos*neg at the end.
    area += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp) * 0.5;
    curve.points.push_back({threshold, static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

double auc_pair_count(std::span<const double> scores, std::span<const bool> positive) {
  double credit = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) credit += 1.0;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  if (pairs == 0) throw ConfigError("auc_pair_count: both classes must be present");
  return credit / static_cast<double>(pairs);
}

std::string metrics_json(const ConfusionMatrix& cm, const MetricsReport& report, std::optional<double> auc) {
  nlohmann::ordered_json j;
  j["positive_class"] = cm.positive_class;
  j["confusion"] = {{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
  j["accuracy"] = optional_json(report.accuracy);
  j["precision"] = optional_json(report.precision);
  j["recall"] = optional_json(report.recall);
  j["f1"] = optional_json(report.f1);
  j["sensitivity"] = optional_json(report.sensitivity);
  j["specificity"] = optional_json(report.specificity);
  if (auc) j["auc"] = *auc;
  return j.dump(2) + "\n";
}

std::string metrics_table(const std::string& row_name, const MetricsReport& report) {
  const std::size_t name_width = std::max<std::size_t>(row_name.size(), 5) + 2;
  char line[256];
  std::ostringstream out;
  std::snprintf(line, sizeof line, "%-*s%10s%11s%9s%10s%13s\n", static_cast<int>(name_width), "Model",
                "Accuracy", "Precision", "Recall", "F1-score", "Sensitivity");
  out << line;
  std::snprintf(line, sizeof line, "%-*s%10s%11s%9s%10s%13s\n", static_cast<int>(name_width), row_name.c_str(),
                percent(report.accuracy).c_str(), percent(report.precision).c_str(), percent(report.recall).c_str(),
                percent(report.f1).c_str(), percent(report.sensitivity).c_str());
  out << line;
  return out.str();
}

std::string roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  char line[128];
  for (const RocPoint& p : curve.points) {
    if (std::isinf(p.threshold)) {
      std::snprintf(line, sizeof line, "inf,%.17g,%.17g\n", p.fpr, p.tpr);
    } else {
      std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
    }
    out << line;
  }
  return out.str();
}

}  // namespace blastlime::eval
