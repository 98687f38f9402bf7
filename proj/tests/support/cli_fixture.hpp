#pragma once

// Small on-disk datasets and an in-process runner for the command-line tool.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "blastlime/imgcore/io.hpp"
#include "blastlime/model/network.hpp"
#include "blastlime/nn/checkpoint.hpp"
#include "cli.hpp"
#include "support/synthetic.hpp"

namespace blastlime::fixtures {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

inline CliRun run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// <root>/good/e<i>.png and <root>/poor/e<i>.png, class-coloured blobs.
inline void write_source_tree(const std::filesystem::path& root, std::size_t per_class, int size,
                              std::uint64_t seed) {
  for (int cls = 0; cls < 2; ++cls) {
    const auto label = static_cast<img::Label>(cls);
    const auto dir = root / std::string(img::label_name(label));
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < per_class; ++i) {
      img::write_png(dir / ("e" + std::to_string(i) + ".png"),
                     embryo_like(size, label, CounterRng::derive(seed, {static_cast<std::uint64_t>(cls), i})));
    }
  }
}

// A network whose output is class `cls` for every input: the last layer's
// weights are zero and its bias strongly favours `cls`.
inline model::Network constant_network(int cls) {
  auto net = model::Network::build(model::ModelSpec::blastocyst(), 1);
  auto& last = net.dense_units().back();
  last.weights.fill(0.0F);
  last.bias.fill(0.0F);
  last.bias[static_cast<std::size_t>(cls)] = 5.0F;
  nn::Tensor<float> x({2, 3, 224, 224}, 0.5F);
  x[7] = 0.9F;
  net.forward(x, nn::Phase::Train, 0);  // batch-norm running statistics
  return net;
}

}  // namespace blastlime::fixtures
