#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "blastlime/error.hpp"
#include "blastlime/eval/metrics.hpp"
#include "blastlime/rng.hpp"
#include "support/oracles.hpp"

using namespace blastlime;
using namespace blastlime::eval;

namespace {

ConfusionMatrix make_cm(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  ConfusionMatrix cm;
  cm.tp = tp;
  cm.fp = fp;
  cm.fn = fn;
  cm.tn = tn;
  return cm;
}

double roc(const std::vector<double>& s, const std::vector<bool>& pos) {
  return roc_auc(s, fixtures::Flags(pos).span()).auc;
}

}  // namespace

TEST(Confusion, AllCorrect) {
  std::vector<int> truth{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  auto cm = confusion(truth, truth, 1);
  EXPECT_EQ(cm, make_cm(5, 0, 0, 5));
}

TEST(Confusion, AllInverted) {
  std::vector<int> truth{1, 1, 0, 0};
  std::vector<int> pred{0, 0, 1, 1};
  auto cm = confusion(pred, truth, 1);
  EXPECT_EQ(cm.tp, 0U);
  EXPECT_EQ(cm.tn, 0U);
  EXPECT_EQ(cm.fp, 2U);
  EXPECT_EQ(cm.fn, 2U);
}

TEST(Confusion, BeforeAugmentationTestSet) {
  // 10 poor all correct, 2 of 10 good called poor.
  std::vector<int> truth, pred;
  for (int i = 0; i < 10; ++i) truth.push_back(1), pred.push_back(1);
  for (int i = 0; i < 10; ++i) truth.push_back(0), pred.push_back(i < 2 ? 1 : 0);
  auto cm = confusion(pred, truth, 1);
  EXPECT_EQ(cm, make_cm(10, 2, 0, 8));
  EXPECT_EQ(cm.positive_class, "poor");
}

TEST(Confusion, RejectsEmptyAndMismatched) {
  std::vector<int> none;
  std::vector<int> one{1};
  std::vector<int> two{1, 0};
  EXPECT_THROW(confusion(none, none, 1), ConfigError);
  EXPECT_THROW(confusion(one, two, 1), ConfigError);
}

TEST(Confusion, InvariantUnderSampleOrder) {
  CounterRng rng(4);
  std::vector<int> pred(40), truth(40);
  for (int i = 0; i < 40; ++i) pred[i] = static_cast<int>(rng.below(2)), truth[i] = static_cast<int>(rng.below(2));
  auto base = confusion(pred, truth, 1);
  std::vector<std::size_t> order(40);
  for (std::size_t i = 0; i < 40; ++i) order[i] = i;
  blastlime::shuffle(order.begin(), order.end(), rng);
  std::vector<int> p2, t2;
  for (auto i : order) p2.push_back(pred[i]), t2.push_back(truth[i]);
  EXPECT_EQ(confusion(p2, t2, 1), base);
}

TEST(Metrics, BeforeAugmentationRow) {
  auto m = metrics(make_cm(10, 2, 0, 8));
  EXPECT_NEAR(*m.accuracy * 100, 90.0, 0.05);
  EXPECT_NEAR(*m.precision * 100, 83.3, 0.05);
  EXPECT_NEAR(*m.recall * 100, 100.0, 0.05);
  EXPECT_NEAR(*m.f1 * 100, 90.9, 0.05);
  EXPECT_NEAR(*m.sensitivity * 100, 100.0, 0.05);
  EXPECT_NEAR(*m.specificity, 0.8, 1e-12);
}

TEST(Metrics, PerfectMatrix) {
  auto m = metrics(make_cm(7, 0, 0, 3));
  for (auto v : {m.accuracy, m.precision, m.recall, m.f1, m.sensitivity, m.specificity}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_DOUBLE_EQ(*v, 1.0);
  }
}

TEST(Metrics, ZeroDenominatorIsUndefined) {
  auto m = metrics(make_cm(0, 0, 4, 6));
  EXPECT_FALSE(m.precision.has_value());
  ASSERT_TRUE(m.recall.has_value());
  EXPECT_EQ(*m.recall, 0.0);
  EXPECT_FALSE(m.f1.has_value());
  EXPECT_THROW(metrics(make_cm(0, 0, 0, 0)), ConfigError);
}

TEST(Metrics, ClassSwapSymmetry) {
  CounterRng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto cm = make_cm(1 + rng.below(20), 1 + rng.below(20), 1 + rng.below(20), 1 + rng.below(20));
    auto swapped = make_cm(cm.tn, cm.fn, cm.fp, cm.tp);
    auto a = metrics(cm);
    auto b = metrics(swapped);
    EXPECT_NEAR(*b.precision, static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fn), 1e-15);
    EXPECT_NEAR(*b.recall, *a.specificity, 1e-15);
    EXPECT_NEAR(*b.specificity, *a.recall, 1e-15);
    EXPECT_NEAR(*a.f1, 2 * *a.precision * *a.recall / (*a.precision + *a.recall), 1e-15);
    EXPECT_EQ(*a.sensitivity, *a.recall);
  }
}

TEST(Roc, SeparatingAndInverted) {
  EXPECT_DOUBLE_EQ(roc({0.9, 0.8, 0.2, 0.1}, {true, true, false, false}), 1.0);
  EXPECT_DOUBLE_EQ(roc({0.1, 0.2, 0.8, 0.9}, {true, true, false, false}), 0.0);
}

TEST(Roc, ThreeOfFourPairsConcordant) {
  EXPECT_DOUBLE_EQ(roc({0.9, 0.4, 0.6, 0.1}, {true, true, false, false}), 0.75);
}

TEST(Roc, AllTiedIsHalf) { EXPECT_DOUBLE_EQ(roc({0.5, 0.5, 0.5}, {true, false, true}), 0.5); }

TEST(Roc, MatchesPairCountingWithTies) {
  CounterRng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> s(n);
    std::vector<bool> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
      pos[i] = rng.bernoulli(0.5);
    }
    pos[0] = true;
    pos[1] = false;
    EXPECT_NEAR(roc(s, pos), fixtures::pair_count_auc(s, fixtures::Flags(pos).span()), 1e-9);
  }
}

TEST(Roc, CurveIsMonotoneFromOriginToCorner) {
  std::vector<double> s{0.3, 0.3, 0.9, 0.1, 0.7, 0.5};
  auto curve = roc_auc(s, fixtures::Flags({true, false, true, false, false, true}).span());
  ASSERT_GE(curve.points.size(), 2U);
  EXPECT_TRUE(std::isinf(curve.points.front().threshold));
  EXPECT_EQ(curve.points.front().fpr, 0.0);
  EXPECT_EQ(curve.points.front().tpr, 0.0);
  EXPECT_EQ(curve.points.back().fpr, 1.0);
  EXPECT_EQ(curve.points.back().tpr, 1.0);
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    EXPECT_GE(curve.points[i].fpr, curve.points[i - 1].fpr);
    EXPECT_GE(curve.points[i].tpr, curve.points[i - 1].tpr);
  }
}

TEST(Roc, SingleClassRejected) {
  std::vector<double> s{0.1, 0.2};
  bool p[] = {true, true};
  EXPECT_THROW(roc_auc(s, p), ConfigError);
}

TEST(Report, TableRowAndJson) {
  auto cm = make_cm(10, 2, 0, 8);
  auto m = metrics(cm);
  auto table = metrics_table("Before augmentation", m);
  EXPECT_NE(table.find("90.0"), std::string::npos);
  EXPECT_NE(table.find("83.3"), std::string::npos);
  EXPECT_NE(table.find("100.0"), std::string::npos);
  EXPECT_NE(table.find("90.9"), std::string::npos);
  auto json = metrics_json(cm, m, 0.5);
  for (const char* key : {"accuracy", "precision", "recall", "f1", "sensitivity", "specificity", "auc", "tp"}) {
    EXPECT_NE(json.find(std::string("\"") + key + "\""), std::string::npos) << key;
  }
  auto undefined = metrics_table("x", metrics(make_cm(0, 0, 1, 1)));
  EXPECT_NE(undefined.find("undefined"), std::string::npos);
}

TEST(Report, RocCsvAnchor) {
  std::vector<double> s{0.9, 0.1};
  bool p[] = {true, false};
  auto csv = roc_csv(roc_auc(s, p));
  EXPECT_EQ(csv.rfind("threshold,fpr,tpr\n", 0), 0U);
  EXPECT_NE(csv.find("inf,0"), std::string::npos);
}
