#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blastlime/imgcore/image.hpp"
#include "blastlime/model/spec.hpp"
#include "blastlime/nn/checkpoint.hpp"
#include "blastlime/nn/lstm.hpp"
#include "blastlime/nn/optim.hpp"

namespace blastlime::model {

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct ConvUnit {
  nn::Tensor<float> weights;
  nn::Tensor<float> bias;
  nn::BatchNormParams<float> norm;
};

struct DenseUnit {
  nn::Tensor<float> weights;
  nn::Tensor<float> bias;
};

/// Packs images (HWC, any order) into an N x C x H x W batch. ShapeError when
/// an image does not have the expected dimensions.
nn::Tensor<float> to_batch(std::span<const img::Image* const> images, std::size_t height, std::size_t width,
                           std::size_t channels = 3);
nn::Tensor<float> to_batch(std::span<const img::Image> images, std::size_t height, std::size_t width,
                           std::size_t channels = 3);

/// The CNN-LSTM classifier with its parameters, batch-norm statistics and
/// training history.
///
/// Inference (`predict_proba`) is const and safe to call from several threads.
/// Training mutates parameters and statistics and must be single-writer.
class Network {
 public:
  /// He-uniform conv/FC weights, zero biases, unit BN scale, zero BN offset,
  /// LSTM weights and bias uniform in +-1/sqrt(H).
  static Network build(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  const Geometry& geometry() const noexcept { return geometry_; }
  std::size_t parameter_count() const;
  /// True once every batch-norm layer has running statistics.
  bool has_statistics() const;

  /// Class probabilities, N x 2. Train mode uses batch statistics (and updates
  /// the running estimates) and applies dropout keyed by `dropout_seed`.
  nn::Tensor<float> forward(const nn::Tensor<float>& images, nn::Phase phase, std::uint64_t dropout_seed = 0);

  /// Inference-mode probabilities. Throws StateError without BN statistics.
  nn::Tensor<float> predict_proba(const nn::Tensor<float>& images) const;

  struct StepResult {
    double loss = 0.0;
    nn::Tensor<float> probabilities;
  };

  /// Training-mode forward and full backward pass; gradients are left in the
  /// buffers exposed by `parameters()`.
  StepResult forward_backward(const nn::Tensor<float>& images, std::span<const int> labels,
                              std::uint64_t dropout_seed);

  /// Trainable tensors with their gradient buffers, in a fixed order.
  std::vector<nn::ParamRef<float>> parameters();

  /// Parameters plus running statistics, named "conv<k>.weight", "bn<k>.scale",
  /// "lstm.input_weights", "fc<j>.bias", ...
  std::vector<nn::NamedTensor> state_tensors() const;

  nn::Checkpoint to_checkpoint(int epoch, std::uint64_t seed, const std::string& config_hash) const;
  static Network from_checkpoint(const nn::Checkpoint& checkpoint);

  std::vector<ConvUnit>& conv_units() noexcept { return conv_; }
  const std::vector<ConvUnit>& conv_units() const noexcept { return conv_; }
  nn::LstmParams<float>& lstm() noexcept { return lstm_; }
  std::vector<DenseUnit>& dense_units() noexcept { return dense_; }
  const std::vector<DenseUnit>& dense_units() const noexcept { return dense_; }

  std::vector<EpochRecord> history;

 private:
  struct Gradients {
    std::vector<ConvUnit> conv;  // norm.scale / norm.offset hold BN gradients
    nn::LstmParams<float> lstm;
    std::vector<DenseUnit> dense;
  };

  Network() = default;
  void allocate_gradients();
  void zero_gradients();

  ModelSpec spec_;
  Geometry geometry_;
  std::vector<ConvUnit> conv_;
  nn::LstmParams<float> lstm_;
  std::vector<DenseUnit> dense_;
  Gradients grads_;
};

/// Predicted class index (ties go to class 0) and the probability pair.
struct Prediction {
  int label = 0;
  float probabilities[2] = {0.0F, 0.0F};
};

Prediction predict(const Network& network, const img::Image& image);

/// Row-wise argmax with ties resolved toward index 0.
int argmax_row(const nn::Tensor<float>& probabilities, std::size_t row);

}  // namespace blastlime::model
