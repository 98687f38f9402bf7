#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blastlime/imgcore/image.hpp"

namespace blastlime::img {

enum class Label : std::uint8_t { Good = 0, Poor = 1 };

inline constexpr std::array<std::string_view, 2> kClassNames{"good", "poor"};

std::string_view label_name(Label label) noexcept;
Label parse_label(std::string_view name);  // ConfigError on unknown names
inline int label_index(Label label) noexcept { return static_cast<int>(label); }

enum class Split : std::uint8_t { Train, Test };

std::string_view split_name(Split split) noexcept;
Split parse_split(std::string_view name);

inline constexpr std::string_view kOriginalTag = "original";

struct LabeledSample {
  Image image;
  Label label = Label::Good;
  std::string source_id;
  std::string transform_tag{kOriginalTag};
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::array<std::string, 2> class_names{"good", "poor"};
  std::optional<std::vector<Split>> split;

  std::size_t size() const noexcept { return samples.size(); }
  std::array<std::size_t, 2> class_counts() const;
  /// Indices of samples assigned to `which`; ConfigError when unsplit.
  std::vector<std::size_t> indices(Split which) const;
  void validate() const;
};

/// Reads `<root>/good/*.{png,jpg,jpeg}` and `<root>/poor/*...` in file-name
/// order, resizing to `target`. source_id is "<class>/<file stem>".
Dataset load_dataset_dir(const std::filesystem::path& root, Size target);

/// Per class, floor(n * train_fraction) samples (chosen by a seeded shuffle)
/// are marked Train and the remainder Test.
Dataset split_stratified(Dataset dataset, double train_fraction, std::uint64_t seed);

/// FNV-1a over labels, ids, tags, split and quantised pixel data.
std::uint64_t content_hash(const Dataset& dataset);

// ---------------------------------------------------------------------------
// Manifest: tab-separated, one header line then one line per sample:
//   path  label  source_id  transform_tag  split
// `path` is relative to the manifest's directory; split is train/test/-.

struct ManifestRow {
  std::string path;
  Label label = Label::Good;
  std::string source_id;
  std::string transform_tag;
  std::optional<Split> split;
};

void write_manifest(const std::filesystem::path& file, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& file);

/// Writes every sample as PNG under `dir/<class>/` and the manifest at
/// `dir/manifest.tsv`. Returns the rows written.
std::vector<ManifestRow> write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

/// Loads the samples listed in a manifest (images resized to `target`).
Dataset load_manifest_dataset(const std::filesystem::path& manifest, Size target);

}  // namespace blastlime::img
