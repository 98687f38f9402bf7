#include "blastlime/imgcore/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "blastlime/error.hpp"
#include "blastlime/imgcore/io.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::img {
namespace fs = std::filesystem;

std::string_view label_name(Label label) noexcept { return kClassNames[static_cast<std::size_t>(label)]; }

Label parse_label(std::string_view name) {
  if (name == "good") return Label::Good;
  if (name == "poor") return Label::Poor;
  throw ConfigError("unknown class label '" + std::string(name) + "'");
}

std::string_view split_name(Split split) noexcept { return split == Split::Train ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train or test)");
}

std::array<std::size_t, 2> Dataset::class_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  return counts;
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  if (!split) throw ConfigError("dataset has no split assignment");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if ((*split)[i] == which) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (split && split->size() != samples.size()) {
    throw ConfigError("split assignment length does not match sample count");
  }
  for (const auto& s : samples) {
    if (s.source_id.empty()) throw ConfigError("sample with empty source_id");
  }
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

Dataset load_dataset_dir(const fs::path& root, Size target) {
  if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root.string());
  Dataset ds;
  for (Label label : {Label::Good, Label::Poor}) {
    const fs::path dir = root / std::string(label_name(label));
    if (!fs::is_directory(dir)) throw IoError("missing class directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      LabeledSample s;
      s.image = load_image(f, target);
      s.label = label;
      s.source_id = std::string(label_name(label)) + "/" + f.stem().string();
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

Dataset split_stratified(Dataset dataset, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) {
    throw ConfigError("train_fraction must lie in [0, 1]");
  }
  std::vector<Split> split(dataset.size(), Split::Test);
  for (Label label : {Label::Good, Label::Poor}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (dataset.samples[i].label == label) members.push_back(i);
    }
    if (members.empty()) {
      throw ConfigError("cannot stratify: class '" + std::string(label_name(label)) + "' is empty");
    }
    CounterRng rng(CounterRng::derive(seed, {0x5b117, static_cast<std::uint64_t>(label)}));
    shuffle(members.begin(), members.end(), rng);
    // The epsilon keeps exact products such as 735 * 0.8 from rounding down.
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(members.size()) * train_fraction + 1e-9));
    for (std::size_t k = 0; k < n_train; ++k) split[members[k]] = Split::Train;
  }
  dataset.split = std::move(split);
  return dataset;
}

std::uint64_t content_hash(const Dataset& dataset) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto label = static_cast<std::uint8_t>(s.label);
    feed(&label, 1);
    feed(s.source_id.data(), s.source_id.size());
    feed(s.transform_tag.data(), s.transform_tag.size());
    if (dataset.split) {
      const auto sp = static_cast<std::uint8_t>((*dataset.split)[i]);
      feed(&sp, 1);
    }
    const int dims[3] = {s.image.width(), s.image.height(), s.image.channels()};
    feed(dims, sizeof dims);
    for (float v : s.image.data()) {
      const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0F));
      feed(&q, sizeof q);
    }
  }
  return h;
}

void write_manifest(const fs::path& file, const std::vector<ManifestRow>& rows) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << "path\tlabel\tsource_id\ttransform_tag\tsplit\n";
  for (const auto& r : rows) {
    out << r.path << '\t' << label_name(r.label) << '\t' << r.source_id << '\t' << r.transform_tag
        << '\t' << (r.split ? split_name(*r.split) : std::string_view("-")) << '\n';
  }
  if (!out) throw IoError("error writing manifest " + file.string());
}

std::vector<ManifestRow> read_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("path\t", 0) != 0) {
    throw FormatError("manifest " + file.string() + " lacks the expected header");
  }
  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() != 5) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 5 fields");
    }
    ManifestRow r;
    r.path = fields[0];
    r.label = parse_label(fields[1]);
    r.source_id = fields[2];
    r.transform_tag = fields[3];
    if (fields[4] != "-") r.split = parse_split(fields[4]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ManifestRow> write_dataset(const fs::path& dir, const Dataset& dataset) {
  dataset.validate();
  std::vector<ManifestRow> rows;
  rows.reserve(dataset.size());
  for (Label label : {Label::Good, Label::Poor}) fs::create_directories(dir / std::string(label_name(label)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    std::string stem = s.source_id.substr(s.source_id.find('/') + 1);
    char idx[16];
    std::snprintf(idx, sizeof idx, "%05zu", i);
    const std::string rel = std::string(label_name(s.label)) + "/" + idx + "_" + stem + ".png";
    write_png(dir / rel, s.image);
    ManifestRow r;
    r.path = rel;
    r.label = s.label;
    r.source_id = s.source_id;
    r.transform_tag = s.transform_tag;
    if (dataset.split) r.split = (*dataset.split)[i];
    rows.push_back(std::move(r));
  }
  write_manifest(dir / "manifest.tsv", rows);
  return rows;
}

Dataset load_manifest_dataset(const fs::path& manifest, Size target) {
  const auto rows = read_manifest(manifest);
  const fs::path base = manifest.parent_path();
  Dataset ds;
  bool any_split = false;
  bool all_split = true;
  for (const auto& r : rows) {
    LabeledSample s;
    s.image = load_image(base / r.path, target);
    s.label = r.label;
    s.source_id = r.source_id;
    s.transform_tag = r.transform_tag;
    ds.samples.push_back(std::move(s));
    any_split = any_split || r.split.has_value();
    all_split = all_split && r.split.has_value();
  }
  if (any_split && !all_split) throw FormatError("manifest mixes split and unsplit rows");
  if (any_split && !rows.empty()) {
    std::vector<Split> split;
    for (const auto& r : rows) split.push_back(*r.split);
    ds.split = std::move(split);
  }
  return ds;
}

}  // namespace blastlime::img
