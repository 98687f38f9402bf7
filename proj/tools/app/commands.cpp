#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "blastlime/eval/metrics.hpp"
#include "blastlime/imgcore/augment.hpp"
#include "blastlime/imgcore/io.hpp"
#include "blastlime/lime/explain.hpp"
#include "blastlime/model/trainer.hpp"
#include "blastlime/nn/checkpoint.hpp"
#include "blastlime/rng.hpp"
#include "cli.hpp"
#include "config.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;

namespace blastlime::cli {
namespace {

constexpr double kTrainFraction = 0.8;
constexpr std::uint64_t kFinalStream = 0x46494e;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string history_csv(const std::vector<model::EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,lr,loss,train_acc\n";
  char line[160];
  for (const model::EpochRecord& r : history) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.learning_rate, r.loss, r.train_accuracy);
    out << line;
  }
  return out.str();
}

nlohmann::ordered_json config_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const RunConfig::Key& k : RunConfig::keys()) j[k.name] = cfg.get(k.name);
  return j;
}

model::SampleRefs refs_for(const img::Dataset& ds, const std::string& split) {
  model::SampleRefs refs;
  if (split == "all") {
    for (const auto& s : ds.samples) refs.push_back(&s);
    return refs;
  }
  for (std::size_t i : ds.indices(img::parse_split(split))) refs.push_back(&ds.samples[i]);
  if (refs.empty()) throw ConfigError("split '" + split + "' is empty");
  return refs;
}

model::Network load_network(const fs::path& checkpoint) {
  return model::Network::from_checkpoint(nn::load_checkpoint(checkpoint));
}

img::Size model_size(const model::Network& net) {
  return {static_cast<int>(net.spec().input_width), static_cast<int>(net.spec().input_height)};
}

// ---------------------------------------------------------------------------

int cmd_augment(const RunConfig& cfg, bool split_first, std::ostream& out) {
  const std::string root = cfg.get("data.root");
  if (root.empty()) throw ConfigError("data.root is not set");
  const auto size = static_cast<int>(cfg.data_size());
  const img::Dataset originals = img::load_dataset_dir(root, {size, size});
  const img::AugmentParams params = cfg.augment_params();
  img::Dataset result;
  if (split_first) {
    result = img::augment_dataset(img::split_stratified(originals, kTrainFraction, params.seed), params);
  } else {
    result = img::split_stratified(img::augment_dataset(originals, params), kTrainFraction, params.seed);
  }
  const fs::path dir = cfg.out_dir();
  const auto rows = img::write_dataset(dir, result);

  const auto counts = result.class_counts();
  std::size_t per_split[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < result.size(); ++i) {
    ++per_split[static_cast<int>((*result.split)[i])][img::label_index(result.samples[i].label)];
  }
  out << "originals: " << originals.size() << "\n"
      << "samples:   " << result.size() << " (good " << counts[0] << ", poor " << counts[1] << ")\n"
      << "train:     " << per_split[0][0] + per_split[0][1] << " (good " << per_split[0][0] << ", poor "
      << per_split[0][1] << ")\n"
      << "test:      " << per_split[1][0] + per_split[1][1] << " (good " << per_split[1][0] << ", poor "
      << per_split[1][1] << ")\n"
      << "protocol:  " << (split_first ? "split-first" : "augment-then-split") << "\n"
      << "manifest:  " << (dir / "manifest.tsv").string() << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest_arg, std::ostream& out) {
  const fs::path dir = cfg.out_dir();
  const fs::path manifest = manifest_arg.empty() ? dir / "manifest.tsv" : fs::path(manifest_arg);
  const auto size = static_cast<int>(cfg.data_size());
  const img::Dataset ds = img::load_manifest_dataset(manifest, {size, size});
  const model::SampleRefs train_set = refs_for(ds, ds.split ? "train" : "all");
  const model::TrainConfig tc = cfg.train_config();
  const model::ModelSpec spec = model::ModelSpec::blastocyst(cfg.data_size());
  fs::create_directories(dir);

  out << "training on " << train_set.size() << " samples, " << model::parameter_count(spec)
      << " trainable parameters\n";

  model::CrossValidationHooks hooks;
  hooks.train.on_epoch = [&](const model::EpochRecord& r) {
    char line[160];
    std::snprintf(line, sizeof line, "  epoch %3d  lr %.6g  loss %.6f  acc %.4f\n", r.epoch, r.learning_rate, r.loss,
                  r.train_accuracy);
    out << line << std::flush;
  };
  nlohmann::ordered_json folds = nlohmann::ordered_json::array();
  hooks.on_fold = [&](const model::FoldResult& f, const model::Network& net) {
    const fs::path run_dir = dir / ("run_" + std::to_string(f.run));
    fs::create_directories(run_dir);
    const std::string stem = "fold_" + std::to_string(f.fold);
    nn::save_checkpoint(run_dir / (stem + ".ckpt"), net.to_checkpoint(static_cast<int>(f.history.size()),
                                                                      model::init_seed(tc.seed, f.run, f.fold),
                                                                      tc.hash()));
    write_text(run_dir / (stem + ".history.csv"), history_csv(f.history));
    folds.push_back({{"run", f.run},
                     {"fold", f.fold},
                     {"train_size", f.train_size},
                     {"validation_size", f.validation_size},
                     {"validation_accuracy", f.validation_accuracy},
                     {"final_loss", f.history.empty() ? 0.0 : f.history.back().loss},
                     {"final_train_accuracy", f.history.empty() ? 0.0 : f.history.back().train_accuracy}});
    out << "run " << f.run << " fold " << f.fold << ": validation accuracy " << f.validation_accuracy << "\n";
  };
  const model::CrossValidationReport report = model::cross_validate(train_set, tc, spec, hooks);
  out << "cross-validation accuracy: " << report.summary() << "\n";

  // Final model on the whole training split.
  model::Network final_net = model::Network::build(spec, model::init_seed(tc.seed, 0, -1));
  model::TrainConfig final_config = tc;
  final_config.seed = CounterRng::derive(tc.seed, {kFinalStream});
  out << "final model\n";
  model::train(final_net, train_set, final_config, hooks.train);
  nn::save_checkpoint(dir / "final.ckpt", final_net.to_checkpoint(tc.epochs, model::init_seed(tc.seed, 0, -1), tc.hash()));
  write_text(dir / "final.history.csv", history_csv(final_net.history));

  nlohmann::ordered_json summary;
  summary["config"] = config_json(cfg);
  summary["config_hash"] = tc.hash();
  summary["parameter_count"] = model::parameter_count(spec);
  summary["folds"] = folds;
  summary["mean_accuracy"] = report.mean_accuracy;
  summary["std_accuracy"] = report.std_accuracy;
  summary["summary"] = report.summary();
  nlohmann::ordered_json fin;
  fin["checkpoint"] = "final.ckpt";
  fin["epochs"] = final_net.history.size();
  if (ds.split && !ds.indices(img::Split::Test).empty()) {
    const model::Evaluation ev = model::evaluate(final_net, refs_for(ds, "test"));
    fin["test"] = nlohmann::ordered_json::parse(eval::metrics_json(ev.confusion, eval::metrics(ev.confusion)));
    out << "test accuracy: " << ev.accuracy << "\n";
  }
  summary["final"] = fin;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "wrote " << (dir / "summary.json").string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
                 const std::string& manifest_arg, std::ostream& out, std::ostream& err) {
  const model::Network net = load_network(checkpoint);
  const fs::path dir = cfg.out_dir();
  const fs::path manifest = manifest_arg.empty() ? dir / "manifest.tsv" : fs::path(manifest_arg);
  const img::Dataset ds = img::load_manifest_dataset(manifest, model_size(net));
  const model::SampleRefs refs = refs_for(ds, split);
  const model::Evaluation ev = model::evaluate(net, refs);
  const eval::MetricsReport report = eval::metrics(ev.confusion);

  std::optional<double> auc;
  std::vector<char> positive;
  for (const auto* s : refs) positive.push_back(s->label == img::Label::Poor);
  const bool both = std::count(positive.begin(), positive.end(), 1) > 0 &&
                    std::count(positive.begin(), positive.end(), 0) > 0;
  if (both) {
    std::unique_ptr<bool[]> flags(new bool[positive.size()]);
    for (std::size_t i = 0; i < positive.size(); ++i) flags[i] = positive[i] != 0;
    const eval::RocCurve roc = eval::roc_auc(ev.positive_scores, std::span<const bool>(flags.get(), positive.size()));
    auc = roc.auc;
    write_text(dir / "roc.csv", eval::roc_csv(roc));
  } else {
    err << "warning: split '" << split << "' has a single class; ROC curve skipped\n";
  }
  write_text(dir / "metrics.json", eval::metrics_json(ev.confusion, report, auc));
  out << eval::metrics_table("CNN-LSTM (" + split + ")", report);
  out << "confusion (positive = " << ev.confusion.positive_class << "): tp " << ev.confusion.tp << ", fp "
      << ev.confusion.fp << ", fn " << ev.confusion.fn << ", tn " << ev.confusion.tn << "\n";
  if (auc) out << "AUC: " << *auc << "\n";
  return kExitOk;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint, const std::vector<std::string>& images,
                std::ostream& out) {
  const model::Network net = load_network(checkpoint);
  std::ostringstream tsv;
  tsv << "path\tlabel\tp_good\tp_poor\n";
  for (const std::string& path : images) {
    const model::Prediction p = model::predict(net, img::load_image(path, model_size(net)));
    tsv << path << '\t' << img::kClassNames[static_cast<std::size_t>(p.label)] << '\t' << p.probabilities[0] << '\t'
        << p.probabilities[1] << '\n';
  }
  write_text(cfg.out_dir() / "predictions.tsv", tsv.str());
  out << tsv.str();
  return kExitOk;
}

int cmd_explain(const RunConfig& cfg, const std::string& checkpoint, const std::string& image_path,
                std::optional<int> k, const std::string& annotation, std::ostream& out, std::ostream& err) {
  const model::Network net = load_network(checkpoint);
  const img::Image image = img::load_image(image_path, model_size(net));
  lime::LimeConfig lc = cfg.lime_config();
  if (k) {
    if (*k < 1) throw ConfigError("--k must be at least 1");
    lc.k = *k;
  }
  const lime::PredictFn predict_fn = [&net](const img::Image& x) {
    const model::Prediction p = model::predict(net, x);
    return std::vector<double>{p.probabilities[0], p.probabilities[1]};
  };
  const lime::Explanation ex = lime::explain(predict_fn, image, lc);
  for (const std::string& w : ex.warnings) err << "warning: " << w << "\n";

  const fs::path dir = cfg.out_dir();
  const std::string stem = fs::path(image_path).stem().string();
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(lime::explanation_json(ex));
  j["image"] = fs::path(image_path).filename().string();
  if (!annotation.empty()) {
    const img::Image mask = img::resize_nearest(img::load_mask(annotation), image.size());
    j["iou"] = lime::explanation_iou(ex, mask);
  }
  write_text(dir / (stem + ".explanation.json"), j.dump(2) + "\n");

  const std::vector<int> tops = k ? std::vector<int>{*k} : std::vector<int>{1, 3, 5};
  for (int t : tops) {
    int shown = t;
    if (static_cast<std::size_t>(t) > ex.segments.size()) {
      shown = static_cast<int>(ex.segments.size());
      err << "warning: top-" << t << " requested but only " << shown << " segments were selected\n";
    }
    const fs::path file = dir / (stem + ".top" + std::to_string(t) + ".png");
    img::write_png(file, lime::render_overlay(image, ex, shown));
    out << "wrote " << file.string() << "\n";
  }
  out << "class " << img::kClassNames[static_cast<std::size_t>(ex.explained_class)] << ", fidelity " << ex.fidelity
      << ", " << ex.segments.size() << " segments selected of " << ex.superpixels.count << "\n";
  return kExitOk;
}

int cmd_selfcheck(const std::string& fault, std::ostream& out, std::ostream& err) {
  SelfcheckOptions options;
  options.inject_fault = fault;
  std::vector<std::string> failed;
  for (const CheckOutcome& c : run_selfcheck(options)) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    if (!c.passed) failed.push_back(c.name);
  }
  if (failed.empty()) {
    out << "all checks passed\n";
    return kExitOk;
  }
  err << "failed checks:";
  for (const std::string& f : failed) err << " " << f;
  err << "\n";
  return kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"blastlime: blastocyst image classifier with LIME explanations"};
  app.require_subcommand(1);

  std::string config_file;
  app.add_option("--config", config_file, "flat key = value configuration file");
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_opts;
  for (const RunConfig::Key& k : RunConfig::keys()) {
    override_opts[k.name] = app.add_option("--" + k.name, overrides[k.name], k.help + " (default " +
                                           (k.default_value.empty() ? "unset" : k.default_value) + ")");
  }

  auto* augment = app.add_subcommand("augment", "augment the source images and write a manifest");
  bool split_first = false;
  augment->add_flag("--split-first", split_first, "split originals before augmenting (no sibling leakage)");

  auto* train = app.add_subcommand("train", "cross-validate, then train the final model");
  std::string manifest;
  train->add_option("--manifest", manifest, "manifest file (default <out.dir>/manifest.tsv)");

  auto* evaluate = app.add_subcommand("evaluate", "metrics of a checkpoint on a split");
  std::string checkpoint;
  std::string split = "test";
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  evaluate->add_option("--manifest", manifest, "manifest file (default <out.dir>/manifest.tsv)");

  auto* predict = app.add_subcommand("predict", "classify images");
  std::vector<std::string> images;
  predict->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  predict->add_option("--image", images, "image file(s)")->required();

  auto* explain = app.add_subcommand("explain", "LIME explanation of one image");
  std::string image;
  std::optional<int> k;
  std::string annotation;
  explain->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  explain->add_option("--image", image, "image file")->required();
  explain->add_option("--k", k, "single overlay with the top k segments (default: top 1, 3 and 5)");
  explain->add_option("--annotation", annotation, "binary annotation mask for IoU scoring");

  auto* selfcheck = app.add_subcommand("selfcheck", "gradient, LIME and metric oracle checks");
  std::string fault;
  selfcheck->add_option("--inject-fault", fault, "corrupt the named layer's gradient (harness test)");

  for (auto* sub : {augment, train, evaluate, predict, explain, selfcheck}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitInputError;
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& [key, opt] : override_opts) {
      if (opt->count() > 0) cfg.set(key, overrides[key]);
    }
    cfg.validate();

    if (*augment) return cmd_augment(cfg, split_first, out);
    if (*train) return cmd_train(cfg, manifest, out);
    if (*evaluate) return cmd_evaluate(cfg, checkpoint, split, manifest, out, err);
    if (*predict) return cmd_predict(cfg, checkpoint, images, out);
    if (*explain) return cmd_explain(cfg, checkpoint, image, k, annotation, out, err);
    if (*selfcheck) return cmd_selfcheck(fault, out, err);
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kExitTrainingError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInputError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitInputError;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace blastlime::cli
