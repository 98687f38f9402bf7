#include "blastlime/model/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "blastlime/error.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::model {
namespace {

// Stream tags for derived seeds.
constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4450;
constexpr std::uint64_t kInitStream = 0x494e;
constexpr std::uint64_t kFoldStream = 0x464f;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string first_nonfinite_gradient(Network& network) {
  for (const nn::ParamRef<float>& p : network.parameters()) {
    if (!nn::all_finite<float>(p.grad->data())) return p.name;
  }
  return {};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (folds < 2) throw ConfigError("train.folds must be at least 2");
  if (batch < 1) throw ConfigError("train.batch must be at least 1");
  if (runs < 1) throw ConfigError("train.runs must be at least 1");
  if (lr_period < 1) throw ConfigError("learning-rate period must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.lr must be positive");
  if (!(lr_drop > 0.0 && lr_drop <= 1.0)) throw ConfigError("train.lr_drop must lie in (0, 1]");
}

std::string TrainConfig::canonical() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epochs=%d;folds=%d;batch=%d;lr=%.17g;lr_drop=%.17g;lr_period=%d;seed=%llu;runs=%d",
                epochs, folds, batch, learning_rate, lr_drop, lr_period, static_cast<unsigned long long>(seed), runs);
  return buf;
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

std::uint64_t init_seed(std::uint64_t seed, int run, int fold) {
  return CounterRng::derive(seed, {kInitStream, static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(fold + 1)});
}

std::vector<EpochRecord> train(Network& network, const SampleRefs& samples, const TrainConfig& config,
                               const TrainHooks& hooks) {
  config.validate();
  if (samples.empty()) throw ConfigError("train: empty training set");
  std::array<std::size_t, 2> counts{0, 0};
  for (const img::LabeledSample* s : samples) ++counts[static_cast<std::size_t>(img::label_index(s->label))];
  if (counts[0] == 0 || counts[1] == 0) throw ConfigError("train: training set must contain both classes");
  if (static_cast<std::size_t>(config.batch) > samples.size()) {
    throw ConfigError("train: batch size " + std::to_string(config.batch) + " exceeds training-set size " +
                      std::to_string(samples.size()));
  }

  const ModelSpec& spec = network.spec();
  nn::AdamState<float> adam;
  std::vector<EpochRecord> records;
  std::vector<std::size_t> order(samples.size());
  const auto batch = static_cast<std::size_t>(config.batch);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(CounterRng::derive(config.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)}));
    shuffle(order.begin(), order.end(), rng);
    const double lr = nn::lr_schedule(config.learning_rate, epoch, config.lr_drop, config.lr_period);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<const img::Image*> images;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(&samples[order[i]]->image);
        labels.push_back(img::label_index(samples[order[i]]->label));
      }
      const nn::Tensor<float> x = to_batch(images, spec.input_height, spec.input_width, spec.input_channels);
      const std::uint64_t dropout_seed = CounterRng::derive(
          config.seed, {kDropoutStream, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch_index)});
      Network::StepResult step = network.forward_backward(x, labels, dropout_seed);

      std::string bad;
      if (!std::isfinite(step.loss)) bad = "loss";
      else bad = first_nonfinite_gradient(network);
      if (!bad.empty()) {
        const std::string where = " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index + 1);
        if (bad == "loss") throw TrainingError("non-finite loss" + where);
        throw TrainingError("non-finite gradient in layer " + bad.substr(0, bad.find('.')) + " (parameter " + bad +
                            ")" + where);
      }
      const auto params = network.parameters();
      nn::adam_step<float>(params, adam, lr);

      loss_sum += step.loss * static_cast<double>(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (argmax_row(step.probabilities, i) == labels[i]) ++correct;
      }
    }
    const EpochRecord record{epoch, lr, loss_sum / static_cast<double>(samples.size()),
                             static_cast<double>(correct) / static_cast<double>(samples.size())};
    records.push_back(record);
    network.history.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (hooks.stop && hooks.stop(record)) break;
  }
  return records;
}

Evaluation evaluate(const Network& network, const SampleRefs& samples, img::Label positive, std::size_t batch) {
  if (samples.empty()) throw ConfigError("evaluate: no samples");
  const ModelSpec& spec = network.spec();
  Evaluation ev;
  std::vector<int> truth;
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<const img::Image*> images;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&samples[i]->image);
      truth.push_back(img::label_index(samples[i]->label));
    }
    const nn::Tensor<float> p =
        network.predict_proba(to_batch(images, spec.input_height, spec.input_width, spec.input_channels));
    for (std::size_t i = 0; i < images.size(); ++i) {
      ev.predicted.push_back(argmax_row(p, i));
      ev.positive_scores.push_back(p[i * 2 + static_cast<std::size_t>(img::label_index(positive))]);
    }
  }
  ev.confusion = eval::confusion(ev.predicted, truth, img::label_index(positive), std::string(img::label_name(positive)));
  ev.accuracy = static_cast<double>(ev.confusion.tp + ev.confusion.tn) / static_cast<double>(ev.confusion.total());
  return ev;
}

std::vector<int> stratified_folds(const std::vector<img::Label>& labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  std::vector<int> assignment(labels.size(), -1);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (img::label_index(labels[i]) == cls) members.push_back(i);
    }
    if (members.size() < static_cast<std::size_t>(folds)) {
      throw ConfigError("stratification: class '" + std::string(img::kClassNames[static_cast<std::size_t>(cls)]) +
                        "' has " + std::to_string(members.size()) + " samples, fewer than " + std::to_string(folds) +
                        " folds");
    }
    CounterRng rng(CounterRng::derive(seed, {kFoldStream, static_cast<std::uint64_t>(cls)}));
    shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) {
      assignment[members[j]] = static_cast<int>(j % static_cast<std::size_t>(folds));
    }
  }
  return assignment;
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%% ± %.2f%%", mean * 100.0, std * 100.0);
  return buf;
}

std::string CrossValidationReport::summary() const { return format_mean_std(mean_accuracy, std_accuracy); }

CrossValidationReport cross_validate(const SampleRefs& samples, const TrainConfig& config, const ModelSpec& spec,
                                     const CrossValidationHooks& hooks) {
  config.validate();
  spec.validate();
  std::vector<img::Label> labels;
  for (const img::LabeledSample* s : samples) labels.push_back(s->label);

  CrossValidationReport report;
  for (int run = 0; run < config.runs; ++run) {
    const std::vector<int> fold_of =
        stratified_folds(labels, config.folds, CounterRng::derive(config.seed, {static_cast<std::uint64_t>(run)}));
    for (int fold = 0; fold < config.folds; ++fold) {
      SampleRefs train_set, validation_set;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        (fold_of[i] == fold ? validation_set : train_set).push_back(samples[i]);
      }
      TrainConfig fold_config = config;
      fold_config.seed = CounterRng::derive(config.seed, {static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(fold)});
      Network net = Network::build(spec, init_seed(config.seed, run, fold));
      FoldResult result;
      result.run = run;
      result.fold = fold;
      result.train_size = train_set.size();
      result.validation_size = validation_set.size();
      result.history = train(net, train_set, fold_config, hooks.train);
      result.validation_accuracy = evaluate(net, validation_set).accuracy;
      if (hooks.on_fold) hooks.on_fold(result, net);
      report.folds.push_back(std::move(result));
    }
  }

  const double n = static_cast<double>(report.folds.size());
  double sum = 0.0;
  for (const FoldResult& f : report.folds) sum += f.validation_accuracy;
  report.mean_accuracy = sum / n;
  double sq = 0.0;
  for (const FoldResult& f : report.folds) sq += (f.validation_accuracy - report.mean_accuracy) * (f.validation_accuracy - report.mean_accuracy);
  report.std_accuracy = report.folds.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  return report;
}

}  // namespace blastlime::model
