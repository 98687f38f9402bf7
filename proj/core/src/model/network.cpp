#include "blastlime/model/network.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "blastlime/error.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::model {
namespace {

using FTensor = nn::Tensor<float>;

void fill_uniform(FTensor& t, double limit, std::uint64_t key) {
  CounterRng rng(key);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
}

// Activation memory of one conv stage during a training step. Only the conv
// output z is kept; the normalised/rectified/pooled output is recomputed from
// it when a later stage needs its input for the weight gradient.
struct StageCache {
  FTensor z;                  // N x C x H x W, pre-normalisation
  std::vector<float> scale;   // per-channel affine of the batch-norm output:
  std::vector<float> shift;   //   y = relu(scale * z + shift)
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::vector<std::uint32_t> argmax;
};

// y = relu(a * z + b) for the planes of one image.
void normalise_rectify(const float* z, std::size_t channels, std::size_t plane, const std::vector<float>& a,
                       const std::vector<float>& b, float* out) {
  for (std::size_t c = 0; c < channels; ++c) {
    const float* zp = z + c * plane;
    float* op = out + c * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const float v = a[c] * zp[j] + b[c];
      op[j] = v > 0.0F ? v : 0.0F;
    }
  }
}

FTensor softmax_rows(const FTensor& logits) {
  FTensor p(logits.shape());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / sum);
  }
  return p;
}

// N x C x H x W  ->  N x H x (C * W): row r becomes timestep r.
FTensor to_sequence(const FTensor& map) {
  const std::size_t n = map.dim(0), c = map.dim(1), h = map.dim(2), w = map.dim(3);
  FTensor seq({n, h, c * w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t x = 0; x < w; ++x) seq[(i * h + r) * c * w + ch * w + x] = map[((i * c + ch) * h + r) * w + x];
  return seq;
}

FTensor from_sequence(const FTensor& seq, std::size_t c, std::size_t h, std::size_t w) {
  const std::size_t n = seq.dim(0);
  FTensor map({n, c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t x = 0; x < w; ++x) map[((i * c + ch) * h + r) * w + x] = seq[(i * h + r) * c * w + ch * w + x];
  return map;
}

void add_into(FTensor& dst, const FTensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------

nn::Tensor<float> to_batch(std::span<const img::Image* const> images, std::size_t height, std::size_t width,
                           std::size_t channels) {
  FTensor batch({images.size(), channels, height, width});
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const img::Image& im = *images[i];
    if (static_cast<std::size_t>(im.width()) != width || static_cast<std::size_t>(im.height()) != height ||
        static_cast<std::size_t>(im.channels()) != channels) {
      throw ShapeError("image " + std::to_string(i) + " is " + std::to_string(im.width()) + "x" +
                       std::to_string(im.height()) + "x" + std::to_string(im.channels()) + ", model expects " +
                       std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(channels));
    }
    const float* src = im.data().data();
    float* dst = batch.ptr() + i * channels * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t c = 0; c < channels; ++c) dst[c * plane + p] = src[p * channels + c];
  }
  return batch;
}

nn::Tensor<float> to_batch(std::span<const img::Image> images, std::size_t height, std::size_t width,
                           std::size_t channels) {
  std::vector<const img::Image*> ptrs;
  ptrs.reserve(images.size());
  for (const img::Image& im : images) ptrs.push_back(&im);
  return to_batch(ptrs, height, width, channels);
}

// ---------------------------------------------------------------------------

Network Network::build(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network net;
  net.spec_ = spec;
  net.geometry_ = walk_geometry(spec);
  std::uint64_t tensor_index = 0;
  auto key = [&] { return CounterRng::derive(seed, {tensor_index++}); };

  for (const StageGeometry& s : net.geometry_.stages) {
    ConvUnit u;
    u.weights = FTensor({s.out_channels, s.in_channels, 3, 3});
    fill_uniform(u.weights, std::sqrt(6.0 / static_cast<double>(s.in_channels * 9)), key());
    u.bias = FTensor({s.out_channels});
    u.norm = nn::BatchNormParams<float>::identity(s.out_channels);
    net.conv_.push_back(std::move(u));
  }

  const std::size_t h = spec.lstm_hidden;
  const std::size_t f = net.geometry_.sequence_features;
  const double lstm_limit = 1.0 / std::sqrt(static_cast<double>(h));
  net.lstm_.input_weights = FTensor({4 * h, f});
  net.lstm_.recurrent_weights = FTensor({4 * h, h});
  net.lstm_.bias = FTensor({4 * h});
  fill_uniform(net.lstm_.input_weights, lstm_limit, key());
  fill_uniform(net.lstm_.recurrent_weights, lstm_limit, key());
  fill_uniform(net.lstm_.bias, lstm_limit, key());

  std::size_t in = h;
  for (std::size_t out : spec.fc_sizes) {
    DenseUnit d{FTensor({out, in}), FTensor({out})};
    fill_uniform(d.weights, std::sqrt(6.0 / static_cast<double>(in)), key());
    net.dense_.push_back(std::move(d));
    in = out;
  }
  net.allocate_gradients();
  return net;
}

void Network::allocate_gradients() {
  grads_.conv.clear();
  for (const ConvUnit& u : conv_) {
    ConvUnit g;
    g.weights = FTensor(u.weights.shape());
    g.bias = FTensor(u.bias.shape());
    g.norm.scale = FTensor(u.norm.scale.shape());
    g.norm.offset = FTensor(u.norm.offset.shape());
    grads_.conv.push_back(std::move(g));
  }
  grads_.lstm.input_weights = FTensor(lstm_.input_weights.shape());
  grads_.lstm.recurrent_weights = FTensor(lstm_.recurrent_weights.shape());
  grads_.lstm.bias = FTensor(lstm_.bias.shape());
  grads_.dense.clear();
  for (const DenseUnit& d : dense_) grads_.dense.push_back({FTensor(d.weights.shape()), FTensor(d.bias.shape())});
}

void Network::zero_gradients() {
  for (ConvUnit& g : grads_.conv) {
    g.weights.fill(0.0F);
    g.bias.fill(0.0F);
    g.norm.scale.fill(0.0F);
    g.norm.offset.fill(0.0F);
  }
  grads_.lstm.input_weights.fill(0.0F);
  grads_.lstm.recurrent_weights.fill(0.0F);
  grads_.lstm.bias.fill(0.0F);
  for (DenseUnit& g : grads_.dense) {
    g.weights.fill(0.0F);
    g.bias.fill(0.0F);
  }
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const ConvUnit& u : conv_) total += u.weights.size() + u.bias.size() + u.norm.scale.size() + u.norm.offset.size();
  total += lstm_.input_weights.size() + lstm_.recurrent_weights.size() + lstm_.bias.size();
  for (const DenseUnit& d : dense_) total += d.weights.size() + d.bias.size();
  return total;
}

bool Network::has_statistics() const {
  return std::all_of(conv_.begin(), conv_.end(), [](const ConvUnit& u) { return u.norm.has_statistics; });
}

std::vector<nn::ParamRef<float>> Network::parameters() {
  std::vector<nn::ParamRef<float>> refs;
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    const std::string c = "conv" + std::to_string(k);
    const std::string b = "bn" + std::to_string(k);
    refs.push_back({c + ".weight", &conv_[k].weights, &grads_.conv[k].weights});
    refs.push_back({c + ".bias", &conv_[k].bias, &grads_.conv[k].bias});
    refs.push_back({b + ".scale", &conv_[k].norm.scale, &grads_.conv[k].norm.scale});
    refs.push_back({b + ".offset", &conv_[k].norm.offset, &grads_.conv[k].norm.offset});
  }
  refs.push_back({"lstm.input_weights", &lstm_.input_weights, &grads_.lstm.input_weights});
  refs.push_back({"lstm.recurrent_weights", &lstm_.recurrent_weights, &grads_.lstm.recurrent_weights});
  refs.push_back({"lstm.bias", &lstm_.bias, &grads_.lstm.bias});
  for (std::size_t j = 0; j < dense_.size(); ++j) {
    const std::string f = "fc" + std::to_string(j);
    refs.push_back({f + ".weight", &dense_[j].weights, &grads_.dense[j].weights});
    refs.push_back({f + ".bias", &dense_[j].bias, &grads_.dense[j].bias});
  }
  return refs;
}

// ---------------------------------------------------------------------------
// Inference: one image at a time through the conv stages so peak memory is a
// single image's activations.

nn::Tensor<float> Network::predict_proba(const nn::Tensor<float>& images) const {
  if (images.rank() != 4 || images.dim(1) != spec_.input_channels || images.dim(2) != spec_.input_height ||
      images.dim(3) != spec_.input_width) {
    throw ShapeError("predict: input " + nn::shape_string(images.shape()) + " does not match model input " +
                     std::to_string(spec_.input_channels) + "x" + std::to_string(spec_.input_height) + "x" +
                     std::to_string(spec_.input_width));
  }
  if (!has_statistics()) throw StateError("predict: batch-norm layers have no running statistics; train first");

  const std::size_t n = images.dim(0);
  const Geometry& g = geometry_;
  FTensor cat({n, g.concat_channels, g.final_height, g.final_width});
  const std::size_t image_size = spec_.input_channels * spec_.input_height * spec_.input_width;
  const std::size_t trunk_n = spec_.trunk.size();
  const std::size_t a_n = spec_.branch_a.size();

  auto run_stage = [&](std::size_t k, const ConvStage& stage, const FTensor& x) {
    FTensor y = nn::batchnorm_inference(nn::conv2d_forward(x, conv_[k].weights, conv_[k].bias), conv_[k].norm);
    for (float& v : y.data()) v = v > 0.0F ? v : 0.0F;
    if (stage.pool) return nn::pool_forward(y, *stage.pool).output;
    return y;
  };

  for (std::size_t i = 0; i < n; ++i) {
    FTensor x({1, spec_.input_channels, spec_.input_height, spec_.input_width},
              std::vector<float>(images.ptr() + i * image_size, images.ptr() + (i + 1) * image_size));
    for (std::size_t k = 0; k < trunk_n; ++k) x = run_stage(k, spec_.trunk[k], x);
    FTensor a = x;
    for (std::size_t k = 0; k < a_n; ++k) a = run_stage(trunk_n + k, spec_.branch_a[k], a);
    FTensor b = std::move(x);
    for (std::size_t k = 0; k < spec_.branch_b.size(); ++k) b = run_stage(trunk_n + a_n + k, spec_.branch_b[k], b);
    const FTensor joined = nn::depth_concat(a, b);
    std::copy(joined.data().begin(), joined.data().end(), cat.ptr() + i * joined.size());
  }

  FTensor act = nn::lstm_forward(to_sequence(cat), lstm_);
  for (std::size_t j = 0; j < dense_.size(); ++j) {
    act = nn::fully_connected_forward(act, dense_[j].weights, dense_[j].bias);
    if (j + 1 < dense_.size()) {
      for (float& v : act.data()) v = v > 0.0F ? v : 0.0F;
    }
  }
  return softmax_rows(act);
}

// ---------------------------------------------------------------------------
// Training step.

namespace {

struct HeadCache {
  std::vector<std::uint8_t> keep;
  FTensor sequence;
  nn::LstmCache<float> lstm;
  std::vector<FTensor> fc_inputs;  // input of each FC layer
  std::vector<FTensor> fc_pre;     // pre-activation of each hidden FC layer
  FTensor probabilities;
};

}  // namespace

struct TrainPass {
  Network& net;
  const ModelSpec& spec;
  const Geometry& geom;
  std::vector<ConvUnit>& conv;
  const FTensor& images;
  std::vector<StageCache> stages;
  std::vector<float> cols;

  std::size_t batch() const { return images.dim(0); }

  // Index of the stage feeding stage k, or -1 for the network input.
  long source(std::size_t k) const {
    const std::size_t t = spec.trunk.size(), a = spec.branch_a.size();
    if (k == 0) return -1;
    if (k == t || k == t + a) return static_cast<long>(t) - 1;
    return static_cast<long>(k) - 1;
  }

  const ConvStage& stage_spec(std::size_t k) const {
    const std::size_t t = spec.trunk.size(), a = spec.branch_a.size();
    if (k < t) return spec.trunk[k];
    if (k < t + a) return spec.branch_a[k - t];
    return spec.branch_b[k - t - a];
  }

  // Output of stage k for image i, recomputed from the cached conv output.
  std::vector<float> stage_output(std::size_t k, std::size_t i) const {
    const StageGeometry& g = geom.stages[k];
    const std::size_t plane = g.height * g.width;
    const StageCache& sc = stages[k];
    FTensor y({1, g.out_channels, g.height, g.width});
    normalise_rectify(sc.z.ptr() + i * g.out_channels * plane, g.out_channels, plane, sc.scale, sc.shift, y.ptr());
    if (const auto& pool = stage_spec(k).pool) return std::move(nn::pool_forward(y, *pool).output.storage());
    return std::move(y.storage());
  }

  FTensor forward_stage(std::size_t k, const FTensor* input) {
    const StageGeometry& g = geom.stages[k];
    const std::size_t n = batch();
    const std::size_t plane = g.height * g.width;
    const std::size_t in_size = g.in_channels * plane;
    const std::size_t c = g.out_channels;
    StageCache& sc = stages[k];
    ConvUnit& u = conv[k];
    sc.z = FTensor({n, c, g.height, g.width});
    for (std::size_t i = 0; i < n; ++i) {
      const float* x = (input != nullptr ? input->ptr() : images.ptr()) + i * in_size;
      nn::conv3x3_image_forward(x, g.in_channels, g.height, g.width, u.weights, u.bias,
                                sc.z.ptr() + i * c * plane, cols);
    }

    const std::size_t m = n * plane;
    sc.scale.assign(c, 0.0F);
    sc.shift.assign(c, 0.0F);
    sc.mean.assign(c, 0.0);
    sc.inv_std.assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = sc.z.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* p = sc.z.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mu) * (p[j] - mu);
      }
      const double var = sq / static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + nn::kBatchNormEpsilon);
      sc.mean[ch] = mu;
      sc.inv_std[ch] = istd;
      sc.scale[ch] = static_cast<float>(u.norm.scale[ch] * istd);
      sc.shift[ch] = static_cast<float>(u.norm.offset[ch] - u.norm.scale[ch] * mu * istd);
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      u.norm.running_mean[ch] = static_cast<float>((1 - nn::kBatchNormMomentum) * u.norm.running_mean[ch] +
                                                   nn::kBatchNormMomentum * mu);
      u.norm.running_var[ch] = static_cast<float>((1 - nn::kBatchNormMomentum) * u.norm.running_var[ch] +
                                                  nn::kBatchNormMomentum * unbiased);
    }
    u.norm.has_statistics = true;

    FTensor y({n, c, g.height, g.width});
    for (std::size_t i = 0; i < n; ++i) {
      normalise_rectify(sc.z.ptr() + i * c * plane, c, plane, sc.scale, sc.shift, y.ptr() + i * c * plane);
    }
    if (const auto& pool = stage_spec(k).pool) {
      nn::PoolResult<float> pooled = nn::pool_forward(y, *pool);
      sc.argmax = std::move(pooled.argmax);
      return std::move(pooled.output);
    }
    return y;
  }

  // Consumes the gradient w.r.t. stage k's output; accumulates parameter
  // gradients into `grads` and returns the gradient w.r.t. its input (empty
  // for the first stage).
  FTensor backward_stage(std::size_t k, FTensor grad_out, ConvUnit& grads) {
    const StageGeometry& g = geom.stages[k];
    const std::size_t n = batch();
    const std::size_t c = g.out_channels;
    const std::size_t plane = g.height * g.width;
    StageCache& sc = stages[k];
    const ConvUnit& u = conv[k];

    FTensor dy;
    if (const auto& pool = stage_spec(k).pool) {
      dy = nn::pool_backward(sc.z.shape(), *pool, sc.argmax, grad_out);
      grad_out = FTensor();
    } else {
      dy = std::move(grad_out);
    }

    const double m = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double mu = sc.mean[ch];
      const double istd = sc.inv_std[ch];
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const float* z = sc.z.ptr() + (i * c + ch) * plane;
        float* d = dy.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (!(sc.scale[ch] * z[j] + sc.shift[ch] > 0.0F)) d[j] = 0.0F;
          sum_dy += d[j];
          sum_dy_xhat += d[j] * (z[j] - mu) * istd;
        }
      }
      grads.norm.offset[ch] += static_cast<float>(sum_dy);
      grads.norm.scale[ch] += static_cast<float>(sum_dy_xhat);
      const double kk = u.norm.scale[ch] * istd;
      for (std::size_t i = 0; i < n; ++i) {
        const float* z = sc.z.ptr() + (i * c + ch) * plane;
        float* d = dy.ptr() + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double xhat = (z[j] - mu) * istd;
          d[j] = static_cast<float>(kk * (d[j] - sum_dy / m - xhat * sum_dy_xhat / m));
        }
      }
    }
    sc.z = FTensor();  // dz now lives in dy

    const long src = source(k);
    const std::size_t in_size = g.in_channels * plane;
    FTensor din;
    if (src >= 0) din = FTensor({n, g.in_channels, g.height, g.width});
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> recomputed;
      const float* x;
      if (src < 0) {
        x = images.ptr() + i * in_size;
      } else {
        recomputed = stage_output(static_cast<std::size_t>(src), i);
        x = recomputed.data();
      }
      nn::conv3x3_image_backward(x, g.in_channels, g.height, g.width, u.weights, dy.ptr() + i * c * plane,
                                 src >= 0 ? din.ptr() + i * in_size : nullptr, grads.weights, grads.bias, cols);
    }
    return din;
  }
};

namespace {

FTensor train_trunk_and_branches(TrainPass& pass, const ModelSpec& spec) {
  const std::size_t t = spec.trunk.size(), a = spec.branch_a.size(), b = spec.branch_b.size();
  FTensor x = pass.forward_stage(0, nullptr);
  for (std::size_t k = 1; k < t; ++k) x = pass.forward_stage(k, &x);
  FTensor ya = pass.forward_stage(t, &x);
  for (std::size_t k = 1; k < a; ++k) ya = pass.forward_stage(t + k, &ya);
  FTensor yb = pass.forward_stage(t + a, &x);
  x = FTensor();
  for (std::size_t k = 1; k < b; ++k) yb = pass.forward_stage(t + a + k, &yb);
  return nn::depth_concat(ya, yb);
}

}  // namespace

Network::StepResult Network::forward_backward(const nn::Tensor<float>& images, std::span<const int> labels,
                                              std::uint64_t dropout_seed) {
  if (images.rank() != 4 || images.dim(1) != spec_.input_channels || images.dim(2) != spec_.input_height ||
      images.dim(3) != spec_.input_width) {
    throw ShapeError("train: input " + nn::shape_string(images.shape()) + " does not match the model input");
  }
  if (labels.size() != images.dim(0)) throw ShapeError("train: label count does not match batch size");
  zero_gradients();

  TrainPass pass{*this, spec_, geometry_, conv_, images, std::vector<StageCache>(conv_.size()), {}};
  const FTensor cat = train_trunk_and_branches(pass, spec_);

  HeadCache head;
  nn::DropoutResult<float> dropped = nn::dropout_forward(cat, spec_.dropout, nn::Phase::Train, dropout_seed);
  head.keep = std::move(dropped.keep);
  head.sequence = to_sequence(dropped.output);
  FTensor act = nn::lstm_forward(head.sequence, lstm_, &head.lstm);
  for (std::size_t j = 0; j < dense_.size(); ++j) {
    head.fc_inputs.push_back(act);
    act = nn::fully_connected_forward(act, dense_[j].weights, dense_[j].bias);
    if (j + 1 < dense_.size()) {
      head.fc_pre.push_back(act);
      for (float& v : act.data()) v = v > 0.0F ? v : 0.0F;
    }
  }
  const FTensor targets = nn::one_hot<float>(labels, 2);
  nn::SoftmaxXentResult<float> out = nn::softmax_xent_forward(act, targets);

  // Backward through the head.
  FTensor grad = nn::softmax_xent_backward(out.probabilities, targets);
  for (std::size_t j = dense_.size(); j-- > 0;) {
    nn::LinearGrads<float> lg = nn::fully_connected_backward(head.fc_inputs[j], dense_[j].weights, grad);
    add_into(grads_.dense[j].weights, lg.weights);
    add_into(grads_.dense[j].bias, lg.bias);
    grad = std::move(lg.input);
    if (j > 0) grad = nn::relu_backward(head.fc_pre[j - 1], grad);
  }
  nn::LstmGrads<float> lstm_grads = nn::lstm_backward(head.sequence, lstm_, head.lstm, grad);
  add_into(grads_.lstm.input_weights, lstm_grads.input_weights);
  add_into(grads_.lstm.recurrent_weights, lstm_grads.recurrent_weights);
  add_into(grads_.lstm.bias, lstm_grads.bias);
  FTensor dcat = nn::dropout_backward(
      from_sequence(lstm_grads.input, geometry_.concat_channels, geometry_.final_height, geometry_.final_width),
      head.keep, spec_.dropout);
  auto [da, db] = nn::depth_split(dcat, spec_.branch_a.back().filters);

  // Backward through the branches (both read the trunk output, which must
  // still be cached), then the trunk.
  const std::size_t t = spec_.trunk.size(), a = spec_.branch_a.size(), b = spec_.branch_b.size();
  for (std::size_t k = b; k-- > 0;) db = pass.backward_stage(t + a + k, std::move(db), grads_.conv[t + a + k]);
  for (std::size_t k = a; k-- > 0;) da = pass.backward_stage(t + k, std::move(da), grads_.conv[t + k]);
  add_into(da, db);
  db = FTensor();
  FTensor dx = std::move(da);
  for (std::size_t k = t; k-- > 0;) dx = pass.backward_stage(k, std::move(dx), grads_.conv[k]);

  return {static_cast<double>(out.loss), std::move(out.probabilities)};
}

nn::Tensor<float> Network::forward(const nn::Tensor<float>& images, nn::Phase phase, std::uint64_t dropout_seed) {
  if (phase == nn::Phase::Inference) return predict_proba(images);
  if (images.rank() != 4 || images.dim(1) != spec_.input_channels || images.dim(2) != spec_.input_height ||
      images.dim(3) != spec_.input_width) {
    throw ShapeError("forward: input " + nn::shape_string(images.shape()) + " does not match the model input");
  }
  TrainPass pass{*this, spec_, geometry_, conv_, images, std::vector<StageCache>(conv_.size()), {}};
  const FTensor cat = train_trunk_and_branches(pass, spec_);
  pass.stages.clear();
  FTensor act = nn::lstm_forward(
      to_sequence(nn::dropout_forward(cat, spec_.dropout, nn::Phase::Train, dropout_seed).output), lstm_);
  for (std::size_t j = 0; j < dense_.size(); ++j) {
    act = nn::fully_connected_forward(act, dense_[j].weights, dense_[j].bias);
    if (j + 1 < dense_.size()) {
      for (float& v : act.data()) v = v > 0.0F ? v : 0.0F;
    }
  }
  return softmax_rows(act);
}

// ---------------------------------------------------------------------------

std::vector<nn::NamedTensor> Network::state_tensors() const {
  std::vector<nn::NamedTensor> out;
  for (std::size_t k = 0; k < conv_.size(); ++k) {
    const std::string c = "conv" + std::to_string(k);
    const std::string b = "bn" + std::to_string(k);
    out.push_back({c + ".weight", conv_[k].weights});
    out.push_back({c + ".bias", conv_[k].bias});
    out.push_back({b + ".scale", conv_[k].norm.scale});
    out.push_back({b + ".offset", conv_[k].norm.offset});
    out.push_back({b + ".running_mean", conv_[k].norm.running_mean});
    out.push_back({b + ".running_var", conv_[k].norm.running_var});
  }
  out.push_back({"lstm.input_weights", lstm_.input_weights});
  out.push_back({"lstm.recurrent_weights", lstm_.recurrent_weights});
  out.push_back({"lstm.bias", lstm_.bias});
  for (std::size_t j = 0; j < dense_.size(); ++j) {
    const std::string f = "fc" + std::to_string(j);
    out.push_back({f + ".weight", dense_[j].weights});
    out.push_back({f + ".bias", dense_[j].bias});
  }
  return out;
}

nn::Checkpoint Network::to_checkpoint(int epoch, std::uint64_t seed, const std::string& config_hash) const {
  nn::Checkpoint ck;
  ck.tensors = state_tensors();
  ck.epoch = epoch;
  ck.seed = seed;
  ck.config_hash = config_hash;
  nlohmann::ordered_json meta;
  meta["model"] = nlohmann::json::parse(spec_.to_json());
  meta["bn_statistics"] = has_statistics();
  nlohmann::json hist = nlohmann::json::array();
  for (const EpochRecord& r : history) {
    hist.push_back({{"epoch", r.epoch}, {"lr", r.learning_rate}, {"loss", r.loss}, {"train_acc", r.train_accuracy}});
  }
  meta["history"] = hist;
  ck.metadata_json = meta.dump();
  return ck;
}

Network Network::from_checkpoint(const nn::Checkpoint& checkpoint) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(checkpoint.metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw nn::CheckpointError(nn::CheckpointError::Kind::Malformed, std::string("metadata: ") + e.what());
  }
  if (!meta.contains("model")) {
    throw nn::CheckpointError(nn::CheckpointError::Kind::Malformed, "metadata has no model description");
  }
  ModelSpec spec;
  try {
    spec = ModelSpec::from_json(meta.at("model").dump());
  } catch (const ConfigError& e) {
    throw nn::CheckpointError(nn::CheckpointError::Kind::Malformed, e.what());
  }
  Network net = build(spec, 0);
  const std::vector<nn::NamedTensor> expected = net.state_tensors();
  if (checkpoint.tensors.size() != expected.size()) {
    throw nn::CheckpointError(nn::CheckpointError::Kind::Malformed,
                              "expected " + std::to_string(expected.size()) + " tensors, found " +
                                  std::to_string(checkpoint.tensors.size()));
  }
  auto assign = [&](const std::string& name, FTensor& dst) {
    const FTensor& src = checkpoint.find(name);
    if (src.shape() != dst.shape()) {
      throw nn::CheckpointError(nn::CheckpointError::Kind::Malformed,
                                name + " has shape " + nn::shape_string(src.shape()) + ", model expects " +
                                    nn::shape_string(dst.shape()));
    }
    dst = src;
  };
  const bool stats = meta.value("bn_statistics", false);
  for (std::size_t k = 0; k < net.conv_.size(); ++k) {
    const std::string c = "conv" + std::to_string(k);
    const std::string b = "bn" + std::to_string(k);
    assign(c + ".weight", net.conv_[k].weights);
    assign(c + ".bias", net.conv_[k].bias);
    assign(b + ".scale", net.conv_[k].norm.scale);
    assign(b + ".offset", net.conv_[k].norm.offset);
    assign(b + ".running_mean", net.conv_[k].norm.running_mean);
    assign(b + ".running_var", net.conv_[k].norm.running_var);
    net.conv_[k].norm.has_statistics = stats;
  }
  assign("lstm.input_weights", net.lstm_.input_weights);
  assign("lstm.recurrent_weights", net.lstm_.recurrent_weights);
  assign("lstm.bias", net.lstm_.bias);
  for (std::size_t j = 0; j < net.dense_.size(); ++j) {
    const std::string f = "fc" + std::to_string(j);
    assign(f + ".weight", net.dense_[j].weights);
    assign(f + ".bias", net.dense_[j].bias);
  }
  if (meta.contains("history")) {
    for (const auto& r : meta.at("history")) {
      net.history.push_back({r.at("epoch").get<int>(), r.at("lr").get<double>(), r.at("loss").get<double>(),
                             r.at("train_acc").get<double>()});
    }
  }
  return net;
}

// ---------------------------------------------------------------------------

int argmax_row(const nn::Tensor<float>& probabilities, std::size_t row) {
  const std::size_t k = probabilities.dim(1);
  int best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (probabilities[row * k + j] > probabilities[row * k + static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  }
  return best;
}

Prediction predict(const Network& network, const img::Image& image) {
  const img::Image* one[] = {&image};
  const ModelSpec& s = network.spec();
  const FTensor p = network.predict_proba(to_batch(one, s.input_height, s.input_width, s.input_channels));
  Prediction out;
  out.label = argmax_row(p, 0);
  out.probabilities[0] = p[0];
  out.probabilities[1] = p[1];
  return out;
}

}  // namespace blastlime::model
