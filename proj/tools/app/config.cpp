#include "config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "blastlime/error.hpp"
#include "blastlime/model/spec.hpp"

namespace blastlime::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<RunConfig::Key>& RunConfig::keys() {
  static const std::vector<Key> k = {
      {"data.root", "", "dataset directory with good/ and poor/ subdirectories"},
      {"data.size", "224", "square model input resolution in pixels"},
      {"aug.variants", "14", "augmented variants per original image"},
      {"aug.seed", "0", "seed for augmentation and the train/test split"},
      {"train.epochs", "25", "epochs per fold"},
      {"train.folds", "10", "cross-validation folds"},
      {"train.batch", "32", "mini-batch size"},
      {"train.lr", "0.001", "initial learning rate"},
      {"train.lr_drop", "0.5", "learning-rate factor applied every five epochs"},
      {"train.runs", "5", "independent cross-validation runs"},
      {"train.seed", "0", "seed for initialisation, shuffling and folds"},
      {"lime.segments", "50", "target superpixel count"},
      {"lime.sigma", "0.25", "kernel width"},
      {"lime.k", "5", "features kept by K-LASSO"},
      {"lime.samples", "1000", "perturbation samples"},
      {"lime.seed", "0", "perturbation seed"},
      {"out.dir", "out", "output directory"},
  };
  return k;
}

bool RunConfig::known(const std::string& key) {
  const auto& k = keys();
  return std::any_of(k.begin(), k.end(), [&](const Key& x) { return x.name == key; });
}

RunConfig::RunConfig() {
  for (const Key& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown configuration key '" + key + "'");
  values_[key] = value;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!known(key)) throw ConfigError(origin + ":" + std::to_string(number) + ": unknown key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
  return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + " = '" + v + "' is not an integer");
  }
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + " = '" + v + "' is not a non-negative integer");
  }
  return out;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(out)) {
    throw ConfigError(key + " = '" + v + "' is not a finite number");
  }
  return out;
}

void RunConfig::validate() const {
  auto positive = [&](const char* key) {
    if (get_int(key) < 1) throw ConfigError(std::string(key) + " must be at least 1");
  };
  positive("data.size");
  if (get_int("aug.variants") < 0) throw ConfigError("aug.variants must be non-negative");
  get_u64("aug.seed");
  get_u64("train.seed");
  get_u64("lime.seed");
  positive("train.epochs");
  if (get_int("train.folds") < 2) throw ConfigError("train.folds must be at least 2");
  positive("train.batch");
  positive("train.runs");
  train_config().validate();
  positive("lime.segments");
  positive("lime.k");
  positive("lime.samples");
  if (get_int("lime.samples") < get_int("lime.segments") + 2) {
    throw ConfigError("lime.samples must be at least lime.segments + 2");
  }
  lime_config().validate();
  if (get("out.dir").empty()) throw ConfigError("out.dir must not be empty");
  try {
    model::ModelSpec::blastocyst(data_size()).validate();
  } catch (const ConfigError& e) {
    throw ConfigError("data.size = " + get("data.size") + " is too small for the network: " + e.what());
  }
}

model::TrainConfig RunConfig::train_config() const {
  model::TrainConfig c;
  c.epochs = static_cast<int>(get_int("train.epochs"));
  c.folds = static_cast<int>(get_int("train.folds"));
  c.batch = static_cast<int>(get_int("train.batch"));
  c.learning_rate = get_double("train.lr");
  c.lr_drop = get_double("train.lr_drop");
  c.runs = static_cast<int>(get_int("train.runs"));
  c.seed = get_u64("train.seed");
  return c;
}

img::AugmentParams RunConfig::augment_params() const {
  img::AugmentParams p;
  p.variants_per_image = static_cast<int>(get_int("aug.variants"));
  p.seed = get_u64("aug.seed");
  return p;
}

lime::LimeConfig RunConfig::lime_config() const {
  lime::LimeConfig c;
  c.segments = static_cast<int>(get_int("lime.segments"));
  c.sigma = get_double("lime.sigma");
  c.k = static_cast<int>(get_int("lime.k"));
  c.samples = static_cast<int>(get_int("lime.samples"));
  c.seed = get_u64("lime.seed");
  return c;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  return out.str();
}

}  // namespace blastlime::cli
