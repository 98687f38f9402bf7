#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace blastlime::lime {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

using MaskRows = std::vector<std::vector<std::uint8_t>>;

Matrix to_matrix(const MaskRows& masks);
/// Keeps only the listed columns, in that order.
Matrix select_columns(const Matrix& x, std::span<const std::size_t> columns);

enum class DistanceKind { Cosine, Hamming };

/// Distance from z to the all-ones vector. Cosine: 1 - sum(z) / (sqrt(d)
/// sqrt(sum(z))), with the all-zero mask at distance 1. Hamming: zeros / d.
double mask_distance(std::span<const std::uint8_t> z, DistanceKind kind = DistanceKind::Cosine);

/// exp(-D^2 / sigma^2). ConfigError unless sigma > 0.
double kernel_weight(std::span<const std::uint8_t> z, double sigma, DistanceKind kind = DistanceKind::Cosine);

/// Row 0 is all ones; every other coordinate is Bernoulli(0.5) drawn from the
/// stream keyed by (seed, row).
MaskRows sample_perturbations(std::size_t features, std::size_t samples, std::uint64_t seed);

struct LassoPathOptions {
  int steps = 100;
  double shrink = 0.9;
  double tolerance = 1e-7;
  int max_sweeps = 100000;
};

/// K-LASSO: cyclic coordinate descent on the weighted lasso
///   (1 / 2W) sum_i w_i (y~_i - x~_i b)^2 + lambda |b|_1
/// over weighted-centred data, along lambda_k = lambda_max shrink^k with warm
/// starts. Features are returned in order of first entry into the active set
/// (simultaneous entrants by |coefficient|, then index), truncated to K.
/// Returns an empty list when y carries no signal (lambda_max ~ 0).
/// ConfigError when sizes disagree or rows < K + 1.
std::vector<std::size_t> select_features_klasso(const Matrix& x, std::span<const double> y,
                                                std::span<const double> weights, std::size_t k,
                                                const LassoPathOptions& options = {});

struct LeastSquaresFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  bool rank_deficient = false;

  double predict(std::span<const double> row) const;
};

/// Minimises sum_i w_i (y_i - x_i w - b)^2. The intercept is handled by
/// weighted centring; the slopes come from the normal equations of the
/// sqrt(w)-scaled centred design with 1e-8 added to the diagonal. A (near-)singular
/// Gram matrix sets `rank_deficient` but still yields a finite solution.
/// With zero columns the fit is the weighted mean.
LeastSquaresFit fit_weighted_least_squares(const Matrix& x, std::span<const double> y,
                                           std::span<const double> weights);

/// sum_i w_i (y_i - fit(x_i))^2
double weighted_square_loss(const Matrix& x, std::span<const double> y, std::span<const double> weights,
                            const LeastSquaresFit& fit);

/// Weighted R^2: 1 - sum w (y - yhat)^2 / sum w (y - ybar_w)^2. When y has no
/// weighted variance the score is 1 if the residuals vanish and 0 otherwise.
double weighted_r2(std::span<const double> y, std::span<const double> predicted, std::span<const double> weights);

}  // namespace blastlime::lime
