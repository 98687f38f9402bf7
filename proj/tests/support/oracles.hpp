#pragma once

// Reference computations written without touching the library's own solvers.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "blastlime/imgcore/image.hpp"
#include "blastlime/lime/regression.hpp"
#include "blastlime/lime/superpixels.hpp"

namespace blastlime::fixtures {

// Dense Gaussian elimination with partial pivoting in long double.
inline std::vector<long double> gauss_solve(std::vector<std::vector<long double>> a, std::vector<long double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a[r][c]) > std::fabs(a[piv][c])) piv = r;
    if (std::fabs(a[piv][c]) < 1e-300L) throw std::runtime_error("singular system");
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const long double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<long double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    long double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

struct OracleFit {
  double intercept = 0;
  std::vector<double> coefficients;
};

// Weighted least squares with an explicit intercept column: solves
// [1 X]^T W [1 X] beta = [1 X]^T W y.
inline OracleFit weighted_normal_equations(const lime::Matrix& x, std::span<const double> y,
                                           std::span<const double> w) {
  const std::size_t p = x.cols + 1;
  std::vector<std::vector<long double>> a(p, std::vector<long double>(p, 0));
  std::vector<long double> b(p, 0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<long double> row(p);
    row[0] = 1;
    for (std::size_t j = 0; j < x.cols; ++j) row[j + 1] = x(i, j);
    for (std::size_t r = 0; r < p; ++r) {
      b[r] += w[i] * row[r] * y[i];
      for (std::size_t c = 0; c < p; ++c) a[r][c] += w[i] * row[r] * row[c];
    }
  }
  const auto beta = gauss_solve(a, b);
  OracleFit fit;
  fit.intercept = static_cast<double>(beta[0]);
  for (std::size_t j = 1; j < p; ++j) fit.coefficients.push_back(static_cast<double>(beta[j]));
  return fit;
}

// Half credit for ties, every (positive, negative) pair counted once.
inline double pair_count_auc(std::span<const double> s, std::span<const bool> pos) {
  double hits = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1;
      if (s[i] > s[j]) hits += 1;
      if (s[i] == s[j]) hits += 0.5;
    }
  }
  return hits / pairs;
}

// std::vector<bool> cannot be viewed as a span.
struct Flags {
  std::unique_ptr<bool[]> data;
  std::size_t n;
  explicit Flags(const std::vector<bool>& v) : data(new bool[v.size()]), n(v.size()) {
    for (std::size_t i = 0; i < n; ++i) data[i] = v[i];
  }
  std::span<const bool> span() const { return {data.get(), n}; }
};

// 100x80 image of 5x4 textured colour blocks; SLIC recovers the blocks.
inline img::Image block_image() {
  img::Image im(100, 80, 3);
  for (int y = 0; y < 80; ++y) {
    for (int x = 0; x < 100; ++x) {
      const int block = (y / 20) * 5 + x / 20;
      const float tex = ((x / 2 + y / 2) % 2 == 0) ? 0.06F : -0.06F;
      im.at(x, y, 0) = 0.15F + 0.035F * static_cast<float>(block) + tex;
      im.at(x, y, 1) = 0.5F + 0.3F * std::sin(static_cast<float>(block) * 1.7F) + tex;
      im.at(x, y, 2) = 0.5F + 0.3F * std::cos(static_cast<float>(block) * 2.3F) + tex;
    }
  }
  return im;
}

// Labels (y / 20) * 5 + x / 20: the 20 blocks of block_image().
inline lime::SuperpixelMap block_map(const img::Image& im) {
  std::vector<int> labels(im.pixel_count());
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x) labels[static_cast<std::size_t>(y * im.width() + x)] = (y / 20) * 5 + x / 20;
  return lime::make_superpixel_map(im, labels);
}

// Five nonzero weights over 20 segments, largest |w| first: 3, 11, 16, 7, 0.
inline std::vector<double> planted_linear_weights() {
  std::vector<double> w(20, 0.0);
  w[3] = 0.25;
  w[11] = -0.2;
  w[16] = 0.15;
  w[7] = 0.1;
  w[0] = -0.07;
  return w;
}

// Reads z' back out of a masked image through one probe pixel per segment
// whose value differs from the segment mean.
class MaskProbe {
 public:
  MaskProbe(img::Image original, lime::SuperpixelMap map) : original_(std::move(original)), map_(std::move(map)) {
    const auto c = static_cast<std::size_t>(original_.channels());
    probe_.assign(static_cast<std::size_t>(map_.count), 0);
    std::vector<float> best(probe_.size(), -1.0F);
    for (std::size_t p = 0; p < map_.labels.size(); ++p) {
      const auto l = static_cast<std::size_t>(map_.labels[p]);
      const float d = std::fabs(original_.data()[p * c] - map_.mean_colors[l * c]);
      if (d > best[l]) best[l] = d, probe_[l] = p;
    }
  }

  std::vector<double> read(const img::Image& masked) const {
    const auto c = static_cast<std::size_t>(original_.channels());
    std::vector<double> z(probe_.size());
    for (std::size_t j = 0; j < z.size(); ++j)
      z[j] = masked.data()[probe_[j] * c] == original_.data()[probe_[j] * c] ? 1.0 : 0.0;
    return z;
  }

  const lime::SuperpixelMap& map() const { return map_; }

 private:
  img::Image original_;
  lime::SuperpixelMap map_;
  std::vector<std::size_t> probe_;
};

// P(class 1) = 0.5 + sum_j w_j (z'_j - 0.5), exactly linear in z'.
inline std::function<std::vector<double>(const img::Image&)> linear_model(const MaskProbe& probe,
                                                                         std::vector<double> w) {
  return [&probe, w](const img::Image& x) {
    const auto z = probe.read(x);
    double p = 0.5;
    for (std::size_t j = 0; j < z.size(); ++j) p += w[j] * (z[j] - 0.5);
    return std::vector<double>{1.0 - p, p};
  };
}

}  // namespace blastlime::fixtures
