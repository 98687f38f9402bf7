#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "blastlime/imgcore/augment.hpp"
#include "blastlime/lime/explain.hpp"
#include "blastlime/model/trainer.hpp"

namespace blastlime::cli {

/// Merged view of a flat `key = value` config file and `--key value`
/// overrides. Only the documented keys are accepted, and every value is
/// checked when the configuration is finalised.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string default_value;
    std::string help;
  };
  static const std::vector<Key>& keys();
  static bool known(const std::string& key);

  RunConfig();

  /// Lines are `key = value`; `#` starts a comment; blank lines are ignored.
  /// IoError if unreadable, ConfigError (with line number) on syntax errors
  /// or unknown keys.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<config>");
  void set(const std::string& key, const std::string& value);

  /// ConfigError naming the first invalid key.
  void validate() const;

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;

  std::filesystem::path out_dir() const { return get("out.dir"); }
  std::size_t data_size() const { return static_cast<std::size_t>(get_int("data.size")); }
  model::TrainConfig train_config() const;
  img::AugmentParams augment_params() const;
  lime::LimeConfig lime_config() const;

  /// Sorted `key = value` lines.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace blastlime::cli
