#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <vector>

#include "blastlime/error.hpp"
#include "blastlime/model/network.hpp"
#include "blastlime/model/spec.hpp"
#include "blastlime/model/trainer.hpp"
#include "blastlime/rng.hpp"
#include "support/synthetic.hpp"

using namespace blastlime;
using namespace blastlime::model;

namespace {

// Frozen from tests/oracles/param_count.py, which walks the layer table by
// hand without any of the library's code.
constexpr std::size_t kBlastocystParameters = 428546;

using FTensor = nn::Tensor<float>;

FTensor image_batch(std::size_t n, std::uint64_t seed) {
  FTensor x({n, 3, 224, 224});
  CounterRng rng(seed);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

// The whole training step written as a plain composition of the batch layer
// kernels, keeping every activation. The network's lean path must agree.
struct Reference {
  double loss = 0;
  FTensor probabilities;
  std::map<std::string, FTensor> grads;
  std::vector<nn::BatchNormParams<float>> norms;  // after the step
};

struct StageTape {
  FTensor input, z, y;
  nn::BatchNormCache<float> norm;
  nn::PoolResult<float> pool;
  bool pooled = false;
};

Reference reference_step(Network net, const FTensor& images, const std::vector<int>& labels, std::uint64_t seed) {
  const ModelSpec& spec = net.spec();
  std::vector<ConvStage> stages = spec.trunk;
  stages.insert(stages.end(), spec.branch_a.begin(), spec.branch_a.end());
  stages.insert(stages.end(), spec.branch_b.begin(), spec.branch_b.end());
  std::vector<StageTape> tape(stages.size());
  Reference ref;

  auto forward = [&](std::size_t k, const FTensor& in) {
    auto& u = net.conv_units()[k];
    StageTape& s = tape[k];
    s.input = in;
    s.z = nn::conv2d_forward(in, u.weights, u.bias);
    s.y = nn::batchnorm_forward(s.z, u.norm, nn::Phase::Train, &s.norm);
    FTensor r = nn::relu_forward(s.y);
    if (stages[k].pool) {
      s.pooled = true;
      s.pool = nn::pool_forward(r, *stages[k].pool);
      return s.pool.output;
    }
    return r;
  };
  auto backward = [&](std::size_t k, FTensor g) {
    auto& u = net.conv_units()[k];
    StageTape& s = tape[k];
    if (s.pooled) g = nn::pool_backward(s.y.shape(), *stages[k].pool, s.pool.argmax, g);
    g = nn::relu_backward(s.y, g);
    auto bg = nn::batchnorm_backward(s.z, u.norm, s.norm, g);
    auto cg = nn::conv2d_backward(s.input, u.weights, bg.input);
    const std::string c = "conv" + std::to_string(k), b = "bn" + std::to_string(k);
    ref.grads[c + ".weight"] = cg.weights;
    ref.grads[c + ".bias"] = cg.bias;
    ref.grads[b + ".scale"] = bg.scale;
    ref.grads[b + ".offset"] = bg.offset;
    return cg.input;
  };

  const std::size_t t = spec.trunk.size(), a = spec.branch_a.size(), b = spec.branch_b.size();
  FTensor x = images;
  for (std::size_t k = 0; k < t; ++k) x = forward(k, x);
  FTensor ya = x, yb = x;
  for (std::size_t k = 0; k < a; ++k) ya = forward(t + k, ya);
  for (std::size_t k = 0; k < b; ++k) yb = forward(t + a + k, yb);
  const FTensor cat = nn::depth_concat(ya, yb);
  auto drop = nn::dropout_forward(cat, spec.dropout, nn::Phase::Train, seed);
  // Final map is C x 1 x 1 at 224, so the sequence is one step of C features.
  const std::size_t n = images.dim(0), c = cat.dim(1);
  FTensor seq = drop.output.reshaped({n, 1, c});
  nn::LstmCache<float> lc;
  FTensor h = nn::lstm_forward(seq, net.lstm(), &lc);
  auto& dense = net.dense_units();
  FTensor pre0 = nn::fully_connected_forward(h, dense[0].weights, dense[0].bias);
  FTensor act0 = nn::relu_forward(pre0);
  FTensor logits = nn::fully_connected_forward(act0, dense[1].weights, dense[1].bias);
  const FTensor y = nn::one_hot<float>(labels, 2);
  auto out = nn::softmax_xent_forward(logits, y);
  ref.loss = out.loss;
  ref.probabilities = out.probabilities;

  FTensor g = nn::softmax_xent_backward(out.probabilities, y);
  auto g1 = nn::fully_connected_backward(act0, dense[1].weights, g);
  ref.grads["fc1.weight"] = g1.weights;
  ref.grads["fc1.bias"] = g1.bias;
  auto g0 = nn::fully_connected_backward(h, dense[0].weights, nn::relu_backward(pre0, g1.input));
  ref.grads["fc0.weight"] = g0.weights;
  ref.grads["fc0.bias"] = g0.bias;
  auto lg = nn::lstm_backward(seq, net.lstm(), lc, g0.input);
  ref.grads["lstm.input_weights"] = lg.input_weights;
  ref.grads["lstm.recurrent_weights"] = lg.recurrent_weights;
  ref.grads["lstm.bias"] = lg.bias;
  FTensor dcat = nn::dropout_backward(lg.input.reshaped(cat.shape()), drop.keep, spec.dropout);
  auto [da, db] = nn::depth_split(dcat, ya.dim(1));
  for (std::size_t k = b; k-- > 0;) db = backward(t + a + k, db);
  for (std::size_t k = a; k-- > 0;) da = backward(t + k, da);
  for (std::size_t i = 0; i < da.size(); ++i) da[i] += db[i];
  for (std::size_t k = t; k-- > 0;) da = backward(k, da);
  for (const auto& u : net.conv_units()) ref.norms.push_back(u.norm);
  return ref;
}

double relative_l2(const FTensor& a, const FTensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
    den += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

std::vector<img::LabeledSample> noise_samples(std::size_t n, std::uint64_t seed) {
  std::vector<img::LabeledSample> s;
  for (std::size_t i = 0; i < n; ++i) {
    img::LabeledSample x;
    x.image = fixtures::noise_image(224, 224, 3, CounterRng::derive(seed, {i}));
    x.label = i % 2 ? img::Label::Poor : img::Label::Good;
    x.source_id = "s" + std::to_string(i);
    s.push_back(std::move(x));
  }
  return s;
}

SampleRefs refs_of(const std::vector<img::LabeledSample>& s) {
  SampleRefs r;
  for (const auto& x : s) r.push_back(&x);
  return r;
}

}  // namespace

// --- spec ------------------------------------------------------------------

TEST(Spec, ParameterCountMatchesShapeWalk) {
  const auto spec = ModelSpec::blastocyst();
  EXPECT_EQ(parameter_count(spec), kBlastocystParameters);
  EXPECT_EQ(Network::build(spec, 1).parameter_count(), kBlastocystParameters);
}

TEST(Spec, Geometry) {
  const auto g = walk_geometry(ModelSpec::blastocyst());
  ASSERT_EQ(g.stages.size(), 13U);
  EXPECT_EQ(g.stages[0].in_channels, 3U);
  EXPECT_EQ(g.stages[8].out_height, 13U);
  EXPECT_EQ(g.concat_channels, 128U);
  EXPECT_EQ(g.final_height, 1U);
  EXPECT_EQ(g.final_width, 1U);
  EXPECT_EQ(g.sequence_steps, 1U);
  EXPECT_EQ(g.sequence_features, 128U);
}

TEST(Spec, ValidationAndJson) {
  auto spec = ModelSpec::blastocyst();
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(ModelSpec::from_json(spec.to_json()), spec);
  auto fewer = spec;
  fewer.trunk.pop_back();
  EXPECT_THROW(fewer.validate(), ConfigError);
  auto classes = spec;
  classes.fc_sizes.back() = 3;
  EXPECT_THROW(classes.validate(), ConfigError);
  EXPECT_THROW(ModelSpec::blastocyst(128).validate(), ConfigError);
}

// --- forward ---------------------------------------------------------------

class ForwardTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    net_ = new Network(Network::build(ModelSpec::blastocyst(), 5));
    net_->forward(image_batch(4, 1), nn::Phase::Train, 1);  // records BN statistics
  }
  static void TearDownTestSuite() { delete net_; }
  static Network* net_;
};
Network* ForwardTest::net_ = nullptr;

TEST_F(ForwardTest, RowsAreDistributions) {
  for (auto phase : {nn::Phase::Inference, nn::Phase::Train}) {
    auto p = net_->forward(image_batch(3, 2), phase, 9);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(p[2 * i] + p[2 * i + 1], 1.0, 1e-6);
      EXPECT_GE(p[2 * i], 0.0F);
      EXPECT_LE(p[2 * i], 1.0F);
    }
  }
}

TEST_F(ForwardTest, InferenceIsRepeatableAndBatchIndependent) {
  auto x = image_batch(2, 3);
  FTensor dup({3, 3, 224, 224});
  std::copy(x.data().begin(), x.data().end(), dup.data().begin());
  std::copy(x.data().begin(), x.data().begin() + 3 * 224 * 224, dup.data().begin() + 2 * 3 * 224 * 224);
  auto a = net_->predict_proba(x);
  EXPECT_EQ(a, net_->predict_proba(x));
  auto d = net_->predict_proba(dup);
  EXPECT_EQ(d[0], d[4]);
  EXPECT_EQ(d[1], d[5]);
  EXPECT_EQ(d[0], a[0]);
}

TEST_F(ForwardTest, PredictAgreesWithBatchArgmax) {
  const std::size_t n = 40;
  std::vector<img::Image> images;
  for (std::size_t i = 0; i < n; ++i) images.push_back(fixtures::noise_image(224, 224, 3, 1000 + i));
  auto probs = net_->predict_proba(to_batch(std::span<const img::Image>(images), 224, 224));
  for (std::size_t i = 0; i < n; ++i) {
    auto p = predict(*net_, images[i]);
    EXPECT_EQ(p.label, argmax_row(probs, i)) << i;
    EXPECT_NEAR(p.probabilities[0], probs[2 * i], 1e-5);  // GEMM blocking differs with batch size
  }
}

TEST_F(ForwardTest, ResolutionMismatch) {
  EXPECT_THROW(net_->predict_proba(FTensor({1, 3, 200, 224})), ShapeError);
  std::vector<img::Image> wrong{img::Image(100, 100, 3)};
  EXPECT_THROW(to_batch(std::span<const img::Image>(wrong), 224, 224), ShapeError);
}

TEST(Forward, UntrainedStatisticsRejected) {
  auto net = Network::build(ModelSpec::blastocyst(), 1);
  EXPECT_FALSE(net.has_statistics());
  EXPECT_THROW(net.predict_proba(image_batch(1, 1)), StateError);
}

TEST(Forward, ArgmaxTiesGoToFirstClass) {
  FTensor p({2, 2}, std::vector<float>{0.9F, 0.1F, 0.5F, 0.5F});
  EXPECT_EQ(argmax_row(p, 0), 0);
  EXPECT_EQ(argmax_row(p, 1), 0);
}

// --- training step ---------------------------------------------------------

TEST(TrainingStep, LeanPathMatchesReferenceComposition) {
  auto net = Network::build(ModelSpec::blastocyst(), 11);
  const auto x = image_batch(2, 4);
  const std::vector<int> labels{0, 1};
  const auto ref = reference_step(net, x, labels, 77);
  const auto got = net.forward_backward(x, labels, 77);
  EXPECT_NEAR(got.loss, ref.loss, 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(got.probabilities[i], ref.probabilities[i], 1e-5);
  std::set<std::string> seen;
  auto norm = [](const FTensor& t) {
    double s = 0;
    for (float v : t.data()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  };
  for (const auto& p : net.parameters()) {
    ASSERT_TRUE(ref.grads.count(p.name)) << p.name;
    seen.insert(p.name);
    if (p.name.starts_with("conv") && p.name.ends_with(".bias")) {
      // Training-mode batch norm cancels any per-channel shift, so the exact
      // gradient is zero and both paths only carry roundoff.
      const std::string bn = "bn" + p.name.substr(4, p.name.size() - 9) + ".offset";
      const double scale = norm(ref.grads.at(bn));
      EXPECT_LT(norm(*p.grad), 1e-3 * scale) << p.name;
      EXPECT_LT(norm(ref.grads.at(p.name)), 1e-3 * scale) << p.name;
      continue;
    }
    EXPECT_LT(relative_l2(*p.grad, ref.grads.at(p.name)), 2e-3) << p.name;
  }
  EXPECT_EQ(seen.size(), ref.grads.size());
}

TEST(TrainingStep, RunningStatisticsMatchReference) {
  auto net = Network::build(ModelSpec::blastocyst(), 12);
  const auto x = image_batch(2, 5);
  const std::vector<int> labels{1, 0};
  const auto ref = reference_step(net, x, labels, 3);
  net.forward_backward(x, labels, 3);
  for (std::size_t k = 0; k < net.conv_units().size(); ++k) {
    const auto& got = net.conv_units()[k].norm;
    EXPECT_TRUE(got.has_statistics);
    EXPECT_LT(relative_l2(got.running_mean, ref.norms[k].running_mean), 1e-4) << k;
    EXPECT_LT(relative_l2(got.running_var, ref.norms[k].running_var), 1e-4) << k;
  }
}

// --- trainer ---------------------------------------------------------------

TEST(Trainer, SameSeedGivesBitIdenticalLossTrace) {
  auto samples = noise_samples(4, 21);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 2;
  cfg.seed = 8;
  auto run = [&] {
    auto net = Network::build(ModelSpec::blastocyst(), init_seed(cfg.seed, 0, -1));
    train(net, refs_of(samples), cfg);
    return net;
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.history.size(), 2U);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(a.history[e].loss, b.history[e].loss);
  EXPECT_EQ(a.state_tensors()[0].tensor, b.state_tensors()[0].tensor);
}

TEST(Trainer, FirstEpochLossNearChance) {
  auto ds = fixtures::balanced_dataset(4, 224, 3);
  SampleRefs refs;
  for (const auto& s : ds.samples) refs.push_back(&s);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch = 4;
  auto net = Network::build(ModelSpec::blastocyst(), 2);
  auto hist = train(net, refs, cfg);
  ASSERT_EQ(hist.size(), 1U);
  EXPECT_NEAR(hist[0].loss, std::log(2.0), 0.15);
  EXPECT_DOUBLE_EQ(hist[0].learning_rate, 0.001);
}

TEST(Trainer, RejectsBadTrainingSets) {
  auto samples = noise_samples(4, 1);
  auto net = Network::build(ModelSpec::blastocyst(), 1);
  TrainConfig cfg;
  cfg.batch = 8;
  EXPECT_THROW(train(net, refs_of(samples), cfg), ConfigError);
  cfg.batch = 2;
  EXPECT_THROW(train(net, {}, cfg), ConfigError);
  SampleRefs one_class{&samples[0], &samples[2]};
  EXPECT_THROW(train(net, one_class, cfg), ConfigError);
}

TEST(Trainer, NonFiniteInputAbortsWithDiagnostics) {
  auto samples = noise_samples(2, 3);
  samples[0].image.data()[5] = std::nanf("");
  auto net = Network::build(ModelSpec::blastocyst(), 1);
  TrainConfig cfg;
  cfg.batch = 2;
  cfg.epochs = 1;
  try {
    train(net, refs_of(samples), cfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
    EXPECT_NE(what.find("batch 1"), std::string::npos) << what;
  }
}

TEST(Trainer, ConfigValidationAndHash) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.epochs, 25);
  EXPECT_EQ(cfg.folds, 10);
  EXPECT_EQ(cfg.batch, 32);
  EXPECT_EQ(cfg.runs, 5);
  auto other = cfg;
  other.seed = 1;
  EXPECT_NE(cfg.hash(), other.hash());
  EXPECT_EQ(cfg.hash(), TrainConfig{}.hash());
  other.folds = 1;
  EXPECT_THROW(other.validate(), ConfigError);
}

// --- folds -----------------------------------------------------------------

TEST(Folds, TenFoldsOnFullTrainingSplit) {
  std::vector<img::Label> labels;
  for (int i = 0; i < 1176; ++i) labels.push_back(i < 588 ? img::Label::Good : img::Label::Poor);
  auto folds = stratified_folds(labels, 10, 4);
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<int> sizes(10, 0);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (static_cast<int>(labels[i]) == cls) ++sizes[static_cast<std::size_t>(folds[i])];
    EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()), 1);
  }
}

TEST(Folds, TwoFoldsOnFourSamplesPartition) {
  std::vector<img::Label> labels{img::Label::Good, img::Label::Poor, img::Label::Good, img::Label::Poor};
  auto folds = stratified_folds(labels, 2, 9);
  ASSERT_EQ(folds.size(), 4U);
  std::vector<int> per_fold(2, 0);
  for (int f : folds) {
    ASSERT_TRUE(f == 0 || f == 1);
    ++per_fold[static_cast<std::size_t>(f)];
  }
  EXPECT_EQ(per_fold, (std::vector<int>{2, 2}));
  EXPECT_EQ(folds, stratified_folds(labels, 2, 9));
}

TEST(Folds, TooFewSamplesPerClass) {
  std::vector<img::Label> labels{img::Label::Good, img::Label::Poor, img::Label::Good};
  EXPECT_THROW(stratified_folds(labels, 2, 1), ConfigError);
}

TEST(CrossValidation, EverySampleValidatedOncePerRun) {
  auto samples = noise_samples(4, 30);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.folds = 2;
  cfg.runs = 1;
  cfg.batch = 2;
  auto report = cross_validate(refs_of(samples), cfg, ModelSpec::blastocyst());
  ASSERT_EQ(report.folds.size(), 2U);
  std::size_t validated = 0;
  for (const auto& f : report.folds) {
    validated += f.validation_size;
    EXPECT_EQ(f.train_size + f.validation_size, 4U);
    EXPECT_EQ(f.history.size(), 1U);
  }
  EXPECT_EQ(validated, 4U);
  const double m = (report.folds[0].validation_accuracy + report.folds[1].validation_accuracy) / 2;
  EXPECT_DOUBLE_EQ(report.mean_accuracy, m);
}

TEST(CrossValidation, SummaryFormat) {
  EXPECT_EQ(format_mean_std(0.977, 0.0082), "97.7% ± 0.82%");
  CrossValidationReport r;
  r.mean_accuracy = 0.5;
  r.std_accuracy = 0.0;
  EXPECT_EQ(r.summary(), "50.0% ± 0.00%");
}

// --- checkpoint through the network ----------------------------------------

TEST(NetworkCheckpoint, RoundTripGivesIdenticalOutputs) {
  auto net = Network::build(ModelSpec::blastocyst(), 3);
  const auto x = image_batch(2, 6);
  net.forward(x, nn::Phase::Train, 1);
  net.history.push_back({1, 0.001, 0.69, 0.5});
  const auto before = net.predict_proba(x);
  const auto bytes = nn::encode_checkpoint(net.to_checkpoint(1, 3, "abc"));
  const auto back = Network::from_checkpoint(nn::decode_checkpoint(bytes));
  EXPECT_EQ(back.predict_proba(x), before);
  EXPECT_EQ(back.spec(), net.spec());
  ASSERT_EQ(back.history.size(), 1U);
  EXPECT_EQ(back.history[0].loss, 0.69);
  const auto a = net.state_tensors(), b = back.state_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tensor, b[i].tensor) << a[i].name;
}

TEST(NetworkCheckpoint, MissingTensorIsMalformed) {
  auto net = Network::build(ModelSpec::blastocyst(), 3);
  auto ck = net.to_checkpoint(0, 0, "");
  ck.tensors.erase(ck.tensors.begin() + 3);
  try {
    Network::from_checkpoint(ck);
    FAIL();
  } catch (const nn::CheckpointError& e) {
    EXPECT_EQ(e.kind(), nn::CheckpointError::Kind::Malformed);
  }
}
