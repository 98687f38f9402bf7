#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "blastlime/nn/layers.hpp"

namespace blastlime::model {

/// One conv3x3 -> batch norm -> ReLU unit, optionally followed by pooling.
struct ConvStage {
  std::size_t filters = 32;
  std::optional<nn::PoolGeometry> pool;
  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

/// Network topology. A shared trunk feeds two parallel branches whose outputs
/// are depth-concatenated, dropped out, read row by row as an LSTM sequence,
/// and classified by a stack of fully connected layers with ReLU between them.
struct ModelSpec {
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t input_channels = 3;
  std::vector<ConvStage> trunk;
  std::vector<ConvStage> branch_a;
  std::vector<ConvStage> branch_b;
  double dropout = 0.4;
  std::size_t lstm_hidden = 128;
  std::vector<std::size_t> fc_sizes{64, 2};

  /// conv32, 4 x conv64, 4 x [conv32 + max 3x3/2] trunk;
  /// branch A 2 x [conv64 + max 5x5/2]; branch B 2 x [conv64 + avg 5x5/2].
  static ModelSpec blastocyst(std::size_t input_size = 224);

  std::size_t conv_count() const { return trunk.size() + branch_a.size() + branch_b.size(); }

  /// Throws ConfigError unless there are exactly 13 conv stages, 2 output
  /// classes, matching branch geometry and no collapsed spatial dimension.
  void validate() const;

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct StageGeometry {
  std::string name;  // "conv<k>"
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;  // conv resolution (same padding keeps input dims)
  std::size_t width = 0;
  std::size_t out_height = 0;  // after pooling, if any
  std::size_t out_width = 0;
};

struct Geometry {
  std::vector<StageGeometry> stages;  // trunk, then branch A, then branch B
  std::size_t concat_channels = 0;
  std::size_t final_height = 0;
  std::size_t final_width = 0;
  std::size_t sequence_steps = 0;     // final_height
  std::size_t sequence_features = 0;  // concat_channels * final_width
};

/// Walks the spatial arithmetic. ConfigError if any stage collapses below 1
/// or the branch outputs cannot be concatenated.
Geometry walk_geometry(const ModelSpec& spec);

/// Trainable parameter count (conv weights+bias, batch-norm scale+offset,
/// LSTM input/recurrent weights+bias, FC weights+bias).
std::size_t parameter_count(const ModelSpec& spec);

}  // namespace blastlime::model
