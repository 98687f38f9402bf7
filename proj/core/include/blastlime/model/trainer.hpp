#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "blastlime/eval/metrics.hpp"
#include "blastlime/imgcore/dataset.hpp"
#include "blastlime/model/network.hpp"

namespace blastlime::model {

struct TrainConfig {
  int epochs = 25;
  int folds = 10;
  int batch = 32;
  double learning_rate = 0.001;
  double lr_drop = 0.5;
  int lr_period = 5;
  std::uint64_t seed = 0;
  int runs = 5;

  void validate() const;
  /// Stable textual form; its FNV-1a hash goes into checkpoints.
  std::string canonical() const;
  std::string hash() const;
};

using SampleRefs = std::vector<const img::LabeledSample*>;

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Returning true stops after the current epoch (used by capacity checks).
  std::function<bool(const EpochRecord&)> stop;
};

/// Mini-batch Adam over `epochs` with the piecewise schedule. The epoch order
/// is a seeded shuffle; the last short batch is kept. Appends to
/// network.history and returns the records of this call.
///
/// Errors: ConfigError for an empty or single-class set or batch larger than
/// the set; TrainingError on a non-finite loss or gradient, naming the epoch,
/// batch and offending layer.
std::vector<EpochRecord> train(Network& network, const SampleRefs& samples, const TrainConfig& config,
                               const TrainHooks& hooks = {});

/// Accuracy and confusion of inference-mode predictions.
struct Evaluation {
  double accuracy = 0.0;
  eval::ConfusionMatrix confusion;
  std::vector<int> predicted;
  std::vector<double> positive_scores;  // probability of the positive class
};

Evaluation evaluate(const Network& network, const SampleRefs& samples,
                    img::Label positive = img::Label::Poor, std::size_t batch = 16);

/// Stratified fold index per sample: per class, a seeded shuffle dealt
/// round-robin over the folds. ConfigError if a class has fewer samples than
/// folds.
std::vector<int> stratified_folds(const std::vector<img::Label>& labels, int folds, std::uint64_t seed);

struct FoldResult {
  int run = 0;
  int fold = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  double validation_accuracy = 0.0;
  std::vector<EpochRecord> history;
};

struct CrossValidationReport {
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation over folds x runs

  /// e.g. "97.7% ± 0.82%"
  std::string summary() const;
};

struct CrossValidationHooks {
  TrainHooks train;
  std::function<void(const FoldResult&, const Network&)> on_fold;
};

/// Trains folds x runs models. Run r reshuffles the fold assignment and the
/// initialisation with seeds derived from (config.seed, r).
CrossValidationReport cross_validate(const SampleRefs& samples, const TrainConfig& config,
                                     const ModelSpec& spec, const CrossValidationHooks& hooks = {});

/// "97.7% ± 0.82%" from ratios.
std::string format_mean_std(double mean, double std);

/// Seed used to initialise the model for (run, fold); fold = -1 is the final
/// model trained on the whole training split.
std::uint64_t init_seed(std::uint64_t seed, int run, int fold);

}  // namespace blastlime::model
