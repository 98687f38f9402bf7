#include "blastlime/model/spec.hpp"

#include <array>

#include <json.hpp>

#include "blastlime/error.hpp"

namespace blastlime::model {
namespace {

nn::PoolGeometry max_pool(std::size_t window) { return {nn::PoolKind::Max, window, 2}; }
nn::PoolGeometry avg_pool(std::size_t window) { return {nn::PoolKind::Avg, window, 2}; }

nlohmann::json stage_json(const ConvStage& s) {
  nlohmann::json j{{"filters", s.filters}};
  if (s.pool) {
    j["pool"] = {{"kind", s.pool->kind == nn::PoolKind::Max ? "max" : "avg"},
                 {"window", s.pool->window},
                 {"stride", s.pool->stride}};
  }
  return j;
}

ConvStage stage_from_json(const nlohmann::json& j) {
  ConvStage s;
  s.filters = j.at("filters").get<std::size_t>();
  if (j.contains("pool")) {
    const auto& p = j.at("pool");
    const std::string kind = p.at("kind").get<std::string>();
    if (kind != "max" && kind != "avg") throw ConfigError("model spec: unknown pool kind '" + kind + "'");
    s.pool = nn::PoolGeometry{kind == "max" ? nn::PoolKind::Max : nn::PoolKind::Avg,
                              p.at("window").get<std::size_t>(), p.at("stride").get<std::size_t>()};
  }
  return s;
}

nlohmann::json stages_json(const std::vector<ConvStage>& stages) {
  nlohmann::json arr = nlohmann::json::array();
  for (const ConvStage& s : stages) arr.push_back(stage_json(s));
  return arr;
}

std::vector<ConvStage> stages_from_json(const nlohmann::json& j) {
  std::vector<ConvStage> out;
  for (const auto& s : j) out.push_back(stage_from_json(s));
  return out;
}

}  // namespace

ModelSpec ModelSpec::blastocyst(std::size_t input_size) {
  ModelSpec s;
  s.input_height = input_size;
  s.input_width = input_size;
  s.trunk.push_back({32, std::nullopt});
  for (int i = 0; i < 4; ++i) s.trunk.push_back({64, std::nullopt});
  for (int i = 0; i < 4; ++i) s.trunk.push_back({32, max_pool(3)});
  for (int i = 0; i < 2; ++i) s.branch_a.push_back({64, max_pool(5)});
  for (int i = 0; i < 2; ++i) s.branch_b.push_back({64, avg_pool(5)});
  return s;
}

Geometry walk_geometry(const ModelSpec& spec) {
  if (spec.input_height == 0 || spec.input_width == 0 || spec.input_channels == 0) {
    throw ConfigError("model spec: input dimensions must be positive");
  }
  Geometry g;
  std::size_t index = 0;
  auto walk = [&](const std::vector<ConvStage>& stages, std::size_t channels, std::size_t h, std::size_t w) {
    for (const ConvStage& s : stages) {
      if (s.filters == 0) throw ConfigError("model spec: conv" + std::to_string(index) + " has no filters");
      StageGeometry sg;
      sg.name = "conv" + std::to_string(index++);
      sg.in_channels = channels;
      sg.out_channels = s.filters;
      sg.height = h;
      sg.width = w;
      if (s.pool) {
        if (s.pool->window == 0 || s.pool->stride == 0 || h < s.pool->window || w < s.pool->window) {
          throw ConfigError("model spec: " + sg.name + " pooling window " + std::to_string(s.pool->window) +
                            " collapses a " + std::to_string(h) + "x" + std::to_string(w) + " map below 1");
        }
        h = s.pool->output_extent(h);
        w = s.pool->output_extent(w);
      }
      sg.out_height = h;
      sg.out_width = w;
      channels = s.filters;
      g.stages.push_back(sg);
    }
    return std::array<std::size_t, 3>{channels, h, w};
  };
  const auto trunk = walk(spec.trunk, spec.input_channels, spec.input_height, spec.input_width);
  const auto a = walk(spec.branch_a, trunk[0], trunk[1], trunk[2]);
  const auto b = walk(spec.branch_b, trunk[0], trunk[1], trunk[2]);
  if (a[1] != b[1] || a[2] != b[2]) {
    throw ConfigError("model spec: branch outputs " + std::to_string(a[1]) + "x" + std::to_string(a[2]) + " and " +
                      std::to_string(b[1]) + "x" + std::to_string(b[2]) + " cannot be depth-concatenated");
  }
  g.concat_channels = a[0] + b[0];
  g.final_height = a[1];
  g.final_width = a[2];
  g.sequence_steps = g.final_height;
  g.sequence_features = g.concat_channels * g.final_width;
  return g;
}

void ModelSpec::validate() const {
  if (conv_count() != 13) {
    throw ConfigError("model spec: expected 13 conv layers, got " + std::to_string(conv_count()));
  }
  if (trunk.empty() || branch_a.empty() || branch_b.empty()) {
    throw ConfigError("model spec: trunk and both branches need at least one conv layer");
  }
  if (fc_sizes.empty() || fc_sizes.back() != 2) throw ConfigError("model spec: the last FC layer must have 2 outputs");
  for (std::size_t s : fc_sizes) {
    if (s == 0) throw ConfigError("model spec: FC layer of width 0");
  }
  if (lstm_hidden == 0) throw ConfigError("model spec: LSTM needs at least one hidden unit");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model spec: dropout must lie in [0, 1)");
  walk_geometry(*this);
}

std::size_t parameter_count(const ModelSpec& spec) {
  const Geometry g = walk_geometry(spec);
  std::size_t total = 0;
  for (const StageGeometry& s : g.stages) {
    total += s.out_channels * s.in_channels * 9 + s.out_channels;  // conv weights + bias
    total += 2 * s.out_channels;                                   // BN scale + offset
  }
  const std::size_t h = spec.lstm_hidden;
  total += 4 * h * g.sequence_features + 4 * h * h + 4 * h;
  std::size_t in = h;
  for (std::size_t out : spec.fc_sizes) {
    total += out * in + out;
    in = out;
  }
  return total;
}

std::string ModelSpec::to_json() const {
  nlohmann::json j;
  j["input"] = {input_height, input_width, input_channels};
  j["trunk"] = stages_json(trunk);
  j["branch_a"] = stages_json(branch_a);
  j["branch_b"] = stages_json(branch_b);
  j["dropout"] = dropout;
  j["lstm_hidden"] = lstm_hidden;
  j["fc_sizes"] = fc_sizes;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelSpec s;
    const auto& in = j.at("input");
    s.input_height = in.at(0).get<std::size_t>();
    s.input_width = in.at(1).get<std::size_t>();
    s.input_channels = in.at(2).get<std::size_t>();
    s.trunk = stages_from_json(j.at("trunk"));
    s.branch_a = stages_from_json(j.at("branch_a"));
    s.branch_b = stages_from_json(j.at("branch_b"));
    s.dropout = j.at("dropout").get<double>();
    s.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    s.fc_sizes = j.at("fc_sizes").get<std::vector<std::size_t>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec JSON: ") + e.what());
  }
}

}  // namespace blastlime::model
