#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <tuple>
#include <vector>

#include "blastlime/error.hpp"
#include "blastlime/nn/checkpoint.hpp"
#include "blastlime/nn/gradcheck.hpp"
#include "blastlime/nn/layers.hpp"
#include "blastlime/nn/lstm.hpp"
#include "blastlime/nn/optim.hpp"
#include "blastlime/rng.hpp"
#include "support/synthetic.hpp"

using namespace blastlime;
using namespace blastlime::nn;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  CounterRng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

// --- gradient checks -------------------------------------------------------

class LayerGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(LayerGradient, MatchesCentralDifferences) {
  auto r = run_gradient_check(GetParam());
  EXPECT_TRUE(r.passed) << r.layer << " max relative error " << r.max_relative_error;
  EXPECT_GE(r.instances, 5);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllLayers, LayerGradient, ::testing::ValuesIn(gradcheck_layers()),
                         [](const auto& info) { return info.param; });

TEST(GradientCheck, CoversEveryKernel) {
  auto layers = gradcheck_layers();
  for (const char* name : {"conv2d", "batchnorm", "relu", "maxpool", "avgpool", "depth_concat", "lstm",
                           "fully_connected", "softmax_xent"}) {
    EXPECT_NE(std::find(layers.begin(), layers.end(), name), layers.end()) << name;
  }
}

TEST(GradientCheck, DetectsCorruptedBackward) {
  GradCheckOptions opt;
  opt.inject_fault = "conv2d";
  EXPECT_FALSE(run_gradient_check("conv2d", opt).passed);
  EXPECT_TRUE(run_gradient_check("relu", opt).passed);
}

TEST(GradientCheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
}

// --- conv ------------------------------------------------------------------

TEST(Conv, DeltaKernelArithmetic) {
  Tensor<float> x({1, 1, 1, 1}, 2.0F);
  Tensor<float> w({1, 1, 3, 3}, 0.0F);
  w[4] = 3.0F;
  Tensor<float> b({1}, 0.5F);
  EXPECT_FLOAT_EQ(conv2d_forward(x, w, b)[0], 6.5F);
}

TEST(Conv, IdentityKernel) {
  auto x = random_tensor({2, 3, 7, 5}, 1);
  Tensor<double> w({3, 3, 3, 3}, 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[(c * 3 + c) * 9 + 4] = 1.0;
  EXPECT_EQ(conv2d_forward(x, w, Tensor<double>({3})), x);
}

TEST(Conv, MatchesDirectLoopOnLargePlane) {
  // Large enough for the banded im2col to take several bands.
  auto x = random_tensor({1, 4, 40, 37}, 2);
  auto w = random_tensor({5, 4, 3, 3}, 3);
  auto b = random_tensor({5}, 4);
  auto y = conv2d_forward(x, w, b);
  const std::ptrdiff_t h = 40, wd = 37;
  double worst = 0;
  for (std::size_t o = 0; o < 5; ++o) {
    for (std::ptrdiff_t i = 0; i < h; ++i) {
      for (std::ptrdiff_t j = 0; j < wd; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < 4; ++c)
          for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
            for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
              const auto yy = i + dy, xx = j + dx;
              if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
              s += w[((o * 4 + c) * 3 + static_cast<std::size_t>(dy + 1)) * 3 + static_cast<std::size_t>(dx + 1)] *
                   x[(c * 40 + static_cast<std::size_t>(yy)) * 37 + static_cast<std::size_t>(xx)];
            }
        worst = std::max(worst, std::fabs(s - y[(o * 40 + static_cast<std::size_t>(i)) * 37 + static_cast<std::size_t>(j)]));
      }
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv, BackwardIndependentOfBufferAlignment) {
  auto x = random_tensor({1, 3, 9, 11}, 6).cast<float>();
  auto w = random_tensor({4, 3, 3, 3}, 7).cast<float>();
  auto dy = random_tensor({1, 4, 9, 11}, 8).cast<float>();
  std::vector<float> cols;
  auto run = [&](std::size_t offset) {
    std::vector<float> xin(offset + x.size()), din(offset + dy.size());
    std::copy(x.data().begin(), x.data().end(), xin.begin() + static_cast<std::ptrdiff_t>(offset));
    std::copy(dy.data().begin(), dy.data().end(), din.begin() + static_cast<std::ptrdiff_t>(offset));
    Tensor<float> gw(w.shape()), gb({4});
    std::vector<float> gx(x.size());
    conv3x3_image_backward(xin.data() + offset, 3, 9, 11, w, din.data() + offset, gx.data(), gw, gb, cols);
    return std::make_tuple(gw, gb, gx);
  };
  const auto base = run(0);
  for (std::size_t off = 1; off < 16; ++off) EXPECT_TRUE(run(off) == base) << off;
}

TEST(Conv, ChannelMismatch) {
  EXPECT_THROW(conv2d_forward(Tensor<float>({1, 2, 4, 4}), Tensor<float>({1, 3, 3, 3}), Tensor<float>({1})),
               ShapeError);
}

// --- batch norm ------------------------------------------------------------

TEST(BatchNorm, TwoPointStandardisation) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1, 3});
  auto p = BatchNormParams<double>::identity(1);
  auto y = batchnorm_forward(x, p, Phase::Train);
  EXPECT_NEAR(y[0], -1, 1e-3);
  EXPECT_NEAR(y[1], 1, 1e-3);
  auto q = BatchNormParams<double>::identity(1);
  q.scale[0] = 2;
  q.offset[0] = 1;
  auto z = batchnorm_forward(x, q, Phase::Train);
  EXPECT_NEAR(z[0], -1, 2e-3);
  EXPECT_NEAR(z[1], 3, 2e-3);
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1, 3});
  auto p = BatchNormParams<double>::identity(1);
  batchnorm_forward(x, p, Phase::Train);
  EXPECT_NEAR(p.running_mean[0], 0.1 * 2, 1e-12);
  EXPECT_NEAR(p.running_var[0], 0.9 * 1 + 0.1 * 2, 1e-12);  // unbiased variance of {1, 3} is 2
  EXPECT_TRUE(p.has_statistics);
}

TEST(BatchNorm, InferenceNeedsStatistics) {
  auto p = BatchNormParams<float>::identity(2);
  EXPECT_THROW(batchnorm_forward(Tensor<float>({1, 2, 2, 2}), p, Phase::Inference), StateError);
}

// --- relu, pooling, concat, dropout ----------------------------------------

TEST(Relu, ForwardAndMask) {
  Tensor<float> x({3}, std::vector<float>{-1, 0, 2});
  EXPECT_EQ(relu_forward(x), (Tensor<float>({3}, std::vector<float>{0, 0, 2})));
  Tensor<float> g({3}, 1.0F);
  EXPECT_EQ(relu_backward(x, g), (Tensor<float>({3}, std::vector<float>{0, 0, 1})));
  Tensor<float> pos({2}, std::vector<float>{0.5F, 4.0F});
  EXPECT_EQ(relu_forward(pos), pos);
  EXPECT_EQ(relu_backward(pos, pos), pos);
}

TEST(Pool, ConstantInputGivesConstantOutput) {
  Tensor<float> x({1, 2, 9, 9}, 0.25F);
  for (auto kind : {PoolKind::Max, PoolKind::Avg}) {
    auto y = pool_forward(x, PoolGeometry{kind, 5, 2}).output;
    EXPECT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
    for (float v : y.data()) EXPECT_FLOAT_EQ(v, 0.25F);
  }
}

TEST(Pool, MaxMatchesBruteForceScan) {
  Tensor<float> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i + 1);
  auto r = pool_forward(x, PoolGeometry{PoolKind::Max, 3, 2});
  ASSERT_EQ(r.output.size(), 1U);
  EXPECT_EQ(r.output[0], 11.0F);  // top-left 3x3 window of 1..16
  auto big = random_tensor({2, 3, 13, 11}, 8);
  auto fb = big.cast<float>();
  auto m = pool_forward(fb, PoolGeometry{PoolKind::Max, 3, 2}).output;
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        float best = -1e30F;
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) best = std::max(best, fb[(p * 13 + 2 * i + a) * 11 + 2 * j + b]);
        ASSERT_EQ(m[(p * 6 + i) * 5 + j], best);
      }
}

TEST(Pool, MaxTieRoutesToFirstElement) {
  Tensor<float> x({1, 1, 3, 3}, 1.0F);
  auto r = pool_forward(x, PoolGeometry{PoolKind::Max, 3, 2});
  auto g = pool_backward(x.shape(), PoolGeometry{PoolKind::Max, 3, 2}, r.argmax, Tensor<float>({1, 1, 1, 1}, 1.0F));
  EXPECT_EQ(g[0], 1.0F);
  for (std::size_t i = 1; i < 9; ++i) EXPECT_EQ(g[i], 0.0F);
}

TEST(Pool, AvgGradientIsUniform) {
  Tensor<double> x({1, 1, 5, 5});
  PoolGeometry geo{PoolKind::Avg, 5, 2};
  auto g = pool_backward<double>(x.shape(), geo, {}, Tensor<double>({1, 1, 1, 1}, 1.0));
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 25);
}

TEST(Pool, OutputExtentAndTooSmall) {
  EXPECT_EQ((PoolGeometry{PoolKind::Max, 3, 2}.output_extent(224)), 111U);
  EXPECT_EQ((PoolGeometry{PoolKind::Max, 5, 2}.output_extent(13)), 5U);
  EXPECT_THROW(pool_forward(Tensor<float>({1, 1, 4, 4}), PoolGeometry{PoolKind::Avg, 5, 2}), ShapeError);
}

TEST(Concat, ShapesAndInverse) {
  auto a = random_tensor({1, 32, 13, 13}, 1);
  auto b = random_tensor({1, 64, 13, 13}, 2);
  auto c = depth_concat(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 96, 13, 13}));
  auto [ga, gb] = depth_split(c, 32);
  EXPECT_EQ(ga, a);
  EXPECT_EQ(gb, b);
  EXPECT_EQ(depth_concat(a, Tensor<double>({1, 0, 13, 13})), a);
  EXPECT_THROW(depth_concat(a, Tensor<double>({1, 2, 12, 13})), ShapeError);
}

TEST(Dropout, InferenceAndZeroRateAreIdentity) {
  auto x = random_tensor({4, 10}, 5).cast<float>();
  EXPECT_EQ(dropout_forward(x, 0.4, Phase::Inference, 1).output, x);
  EXPECT_EQ(dropout_forward(x, 0.0, Phase::Train, 1).output, x);
  EXPECT_THROW(dropout_forward(x, 1.0, Phase::Train, 1), ConfigError);
}

TEST(Dropout, KeptFractionAndExpectation) {
  Tensor<double> x({100000}, 1.0);
  auto r = dropout_forward(x, 0.4, Phase::Train, 42);
  double kept = 0, sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) kept += r.keep[i], sum += r.output[i];
  EXPECT_NEAR(kept / 1e5, 0.6, 0.01);
  EXPECT_NEAR(sum / 1e5, 1.0, 0.02);
  EXPECT_EQ(r.output, dropout_forward(x, 0.4, Phase::Train, 42).output);
}

// --- LSTM ------------------------------------------------------------------

TEST(Lstm, ZeroParametersGiveZeroState) {
  LstmParams<double> p{Tensor<double>({8, 3}), Tensor<double>({8, 2}), Tensor<double>({8})};
  auto h = lstm_forward(random_tensor({2, 4, 3}, 9), p);
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, ScalarRecurrenceByHand) {
  // H = 1, F = 1, T = 1; gate rows i, f, g, o.
  LstmParams<double> p{Tensor<double>({4, 1}, std::vector<double>{0.5, -0.3, 0.8, 1.2}),
                       Tensor<double>({4, 1}, std::vector<double>{0.1, 0.2, 0.3, 0.4}),
                       Tensor<double>({4}, std::vector<double>{0.05, 1.0, -0.1, 0.0})};
  const double x = 0.7;
  auto h = lstm_forward(Tensor<double>({1, 1, 1}, std::vector<double>{x}), p);
  const double i = sigmoid(0.5 * x + 0.05);
  const double f = sigmoid(-0.3 * x + 1.0);
  const double g = std::tanh(0.8 * x - 0.1);
  const double o = sigmoid(1.2 * x);
  const double c = f * 0.0 + i * g;
  EXPECT_NEAR(h[0], o * std::tanh(c), 1e-15);
}

TEST(Lstm, FeatureMismatch) {
  LstmParams<double> p{Tensor<double>({8, 3}), Tensor<double>({8, 2}), Tensor<double>({8})};
  EXPECT_THROW(lstm_forward(Tensor<double>({1, 2, 4}), p), ShapeError);
}

// --- fully connected, softmax ----------------------------------------------

TEST(Dense, IdentityAndBiasOnly) {
  auto x = random_tensor({3, 4}, 10);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1;
  EXPECT_EQ(fully_connected_forward(x, eye, Tensor<double>({4})), x);
  Tensor<double> b({2}, std::vector<double>{0.5, -2});
  auto y = fully_connected_forward(x, Tensor<double>({2, 4}), b);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y[r * 2], 0.5);
    EXPECT_EQ(y[r * 2 + 1], -2);
  }
}

TEST(Softmax, SymmetricAndStable) {
  std::vector<int> zero{0};
  auto r = softmax_xent_forward(Tensor<double>({1, 2}), one_hot<double>(zero));
  EXPECT_DOUBLE_EQ(r.probabilities[0], 0.5);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  auto s = softmax_xent_forward(Tensor<double>({1, 2}, std::vector<double>{1000, 0}), one_hot<double>(zero));
  EXPECT_TRUE(std::isfinite(s.loss));
  EXPECT_NEAR(s.loss, 0.0, 1e-12);
}

TEST(Softmax, GradientIsResidualOverBatch) {
  std::vector<int> labels{1, 0, 1};
  auto y = one_hot<double>(labels);
  auto r = softmax_xent_forward(random_tensor({3, 2}, 4, -3, 3), y);
  auto g = softmax_xent_backward(r.probabilities, y);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(g[i], (r.probabilities[i] - y[i]) / 3, 1e-15);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.probabilities[2 * i] + r.probabilities[2 * i + 1], 1, 1e-12);
}

TEST(Softmax, RejectsNonOneHotLabels) {
  Tensor<double> bad({1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_THROW(softmax_xent_forward(Tensor<double>({1, 2}), bad), ConfigError);
  EXPECT_THROW(softmax_xent_forward(Tensor<double>({1, 2}), Tensor<double>({1, 3})), ShapeError);
}

// --- Adam and schedule -----------------------------------------------------

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> p({3}, std::vector<double>{1, 2, 3});
  Tensor<double> g({3});
  std::vector<ParamRef<double>> refs{{"p", &p, &g}};
  AdamState<double> st;
  adam_step<double>(refs, st, 0.001);
  EXPECT_EQ(p, (Tensor<double>({3}, std::vector<double>{1, 2, 3})));
  EXPECT_EQ(st.step, 1U);
}

TEST(Adam, TwoStepsMatchHandTrace) {
  Tensor<double> p({1}, 0.5);
  Tensor<double> g({1});
  std::vector<ParamRef<double>> refs{{"w", &p, &g}};
  AdamState<double> st;
  const double lr = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, w = 0.5;
  const double grads[2] = {0.3, -1.7};
  for (int t = 1; t <= 2; ++t) {
    g[0] = grads[t - 1];
    adam_step<double>(refs, st, lr);
    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    EXPECT_NEAR(p[0], w, 1e-12);
    if (t == 1) {
      EXPECT_NEAR(p[0], 0.5 - lr, 1e-10);  // first Adam step moves by lr
    }
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor<float> p({2}, 1.0F);
  Tensor<float> g({2}, std::vector<float>{0.1F, std::nanf("")});
  std::vector<ParamRef<float>> refs{{"conv3.weight", &p, &g}};
  AdamState<float> st;
  try {
    adam_step<float>(refs, st, 0.001);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("conv3.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0], 1.0F);
}

TEST(Schedule, PiecewiseHalving) {
  for (int e = 1; e <= 5; ++e) EXPECT_DOUBLE_EQ(lr_schedule(0.001, e), 0.001);
  EXPECT_DOUBLE_EQ(lr_schedule(0.001, 6), 0.0005);
  EXPECT_DOUBLE_EQ(lr_schedule(0.001, 11), 0.00025);
}

// --- checkpoint ------------------------------------------------------------

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.tensors.push_back({"conv0.weight", random_tensor({4, 3, 3, 3}, 1).cast<float>()});
  ck.tensors.push_back({"bn0.scale", Tensor<float>({4}, std::vector<float>{1.0F, -0.0F, 1e-30F, 3.4e38F})});
  ck.tensors.push_back({"scalar", Tensor<float>({}, std::vector<float>{7.0F})});
  ck.epoch = 12;
  ck.seed = 0xfeedfacecafebeefULL;
  ck.config_hash = "0123abcd";
  ck.metadata_json = R"({"note":"x"})";
  return ck;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  fixtures::TempDir dir("ckpt");
  const auto ck = sample_checkpoint();
  save_checkpoint(dir.path() / "a.ckpt", ck);
  const auto back = load_checkpoint(dir.path() / "a.ckpt");
  ASSERT_EQ(back.tensors.size(), ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, ck.tensors[i].name);
    EXPECT_EQ(back.tensors[i].tensor.shape(), ck.tensors[i].tensor.shape());
    EXPECT_EQ(std::memcmp(back.tensors[i].tensor.ptr(), ck.tensors[i].tensor.ptr(),
                          ck.tensors[i].tensor.size() * sizeof(float)),
              0);
  }
  EXPECT_EQ(back.epoch, 12);
  EXPECT_EQ(back.seed, ck.seed);
  EXPECT_EQ(back.config_hash, "0123abcd");
  EXPECT_NE(back.metadata_json.find("note"), std::string::npos);
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = encode_checkpoint(sample_checkpoint());
  ASSERT_GT(bytes.size(), 12U);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BLSK");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 3);
}

TEST(Checkpoint, CorruptionIsNamed) {
  auto bytes = encode_checkpoint(sample_checkpoint());
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      decode_checkpoint(b);
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    return CheckpointError::Kind::Io;
  };
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), CheckpointError::Kind::BadMagic);
  auto version = bytes;
  version[4] = 2;
  EXPECT_EQ(kind_of(version), CheckpointError::Kind::VersionMismatch);
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_EQ(kind_of(t), CheckpointError::Kind::Truncated) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(kind_of(trailing), CheckpointError::Kind::Malformed);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), CheckpointError);
}

TEST(Checkpoint, MissingTensorLookup) {
  auto ck = sample_checkpoint();
  EXPECT_NO_THROW(ck.find("scalar"));
  EXPECT_THROW(ck.find("nope"), CheckpointError);
}
