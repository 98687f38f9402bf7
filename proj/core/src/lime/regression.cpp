#include "blastlime/lime/regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "blastlime/error.hpp"
#include "blastlime/rng.hpp"

namespace blastlime::lime {
namespace {

void check_sizes(const Matrix& x, std::span<const double> y, std::span<const double> w, const char* who) {
  if (y.size() != x.rows || w.size() != x.rows) {
    throw ConfigError(std::string(who) + ": design has " + std::to_string(x.rows) + " rows but " +
                      std::to_string(y.size()) + " responses and " + std::to_string(w.size()) + " weights");
  }
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(who) + ": weights must be finite and >= 0");
  }
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace

Matrix to_matrix(const MaskRows& masks) {
  Matrix m(masks.size(), masks.empty() ? 0 : masks.front().size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].size() != m.cols) throw ShapeError("mask rows have different lengths");
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = masks[i][j];
  }
  return m;
}

Matrix select_columns(const Matrix& x, std::span<const std::size_t> columns) {
  Matrix out(x.rows, columns.size());
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out(i, j) = x(i, columns[j]);
  }
  return out;
}

double mask_distance(std::span<const std::uint8_t> z, DistanceKind kind) {
  if (z.empty()) return 0.0;
  const double d = static_cast<double>(z.size());
  const double on = static_cast<double>(std::count_if(z.begin(), z.end(), [](std::uint8_t v) { return v != 0; }));
  if (kind == DistanceKind::Hamming) return (d - on) / d;
  if (on == 0.0) return 1.0;
  return 1.0 - on / (std::sqrt(d) * std::sqrt(on));
}

double kernel_weight(std::span<const std::uint8_t> z, double sigma, DistanceKind kind) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("kernel width sigma must be positive");
  const double dist = mask_distance(z, kind);
  return std::exp(-(dist * dist) / (sigma * sigma));
}

MaskRows sample_perturbations(std::size_t features, std::size_t samples, std::uint64_t seed) {
  MaskRows rows;
  rows.reserve(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    std::vector<std::uint8_t> z(features, 1);
    if (i > 0) {
      CounterRng rng(CounterRng::derive(seed, {static_cast<std::uint64_t>(i)}));
      for (std::uint8_t& v : z) v = rng.bernoulli(0.5) ? 1 : 0;
    }
    rows.push_back(std::move(z));
  }
  return rows;
}

std::vector<std::size_t> select_features_klasso(const Matrix& x, std::span<const double> y,
                                                std::span<const double> weights, std::size_t k,
                                                const LassoPathOptions& options) {
  check_sizes(x, y, weights, "K-LASSO");
  if (x.rows < k + 1) {
    throw ConfigError("K-LASSO: " + std::to_string(x.rows) + " samples cannot select " + std::to_string(k) +
                      " features");
  }
  const std::size_t n = x.rows, d = x.cols;
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (k == 0 || d == 0 || !(total > 0.0)) return {};

  // Weighted centring, then fold sqrt(w / W) into the rows so the objective
  // becomes an ordinary lasso (1/2)|yt - Xt b|^2 + lambda |b|_1.
  std::vector<double> xmean(d, 0.0);
  double ymean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ymean += weights[i] * y[i];
    for (std::size_t j = 0; j < d; ++j) xmean[j] += weights[i] * x(i, j);
  }
  ymean /= total;
  for (double& m : xmean) m /= total;
  Matrix xt(n, d);
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::sqrt(weights[i] / total);
    resid[i] = s * (y[i] - ymean);
    for (std::size_t j = 0; j < d; ++j) xt(i, j) = s * (x(i, j) - xmean[j]);
  }
  std::vector<double> norm2(d, 0.0), corr(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      norm2[j] += xt(i, j) * xt(i, j);
      corr[j] += xt(i, j) * resid[i];
    }
  }
  double lambda_max = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    if (norm2[j] > 0.0) lambda_max = std::max(lambda_max, std::abs(corr[j]));
  }
  const double yscale = std::max(1.0, std::abs(ymean));
  if (lambda_max <= 1e-12 * yscale) return {};

  std::vector<double> beta(d, 0.0);
  std::vector<char> entered(d, 0);
  std::vector<std::size_t> order;
  double lambda = lambda_max;
  for (int step = 0; step < options.steps && order.size() < k; ++step, lambda *= options.shrink) {
    for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
      double max_change = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        if (norm2[j] <= 0.0) continue;
        double rho = 0.0;
        for (std::size_t i = 0; i < n; ++i) rho += xt(i, j) * resid[i];
        rho += norm2[j] * beta[j];
        const double updated = soft_threshold(rho, lambda) / norm2[j];
        const double delta = updated - beta[j];
        if (delta != 0.0) {
          for (std::size_t i = 0; i < n; ++i) resid[i] -= delta * xt(i, j);
          beta[j] = updated;
          max_change = std::max(max_change, std::abs(delta));
        }
      }
      if (max_change < options.tolerance) break;
    }
    std::vector<std::size_t> newcomers;
    for (std::size_t j = 0; j < d; ++j) {
      if (!entered[j] && beta[j] != 0.0) newcomers.push_back(j);
    }
    std::sort(newcomers.begin(), newcomers.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(beta[a]) != std::abs(beta[b])) return std::abs(beta[a]) > std::abs(beta[b]);
      return a < b;
    });
    for (std::size_t j : newcomers) {
      entered[j] = 1;
      order.push_back(j);
    }
  }
  if (order.size() > k) order.resize(k);
  return order;
}

double LeastSquaresFit::predict(std::span<const double> row) const {
  double v = intercept;
  for (std::size_t j = 0; j < coefficients.size(); ++j) v += coefficients[j] * row[j];
  return v;
}

LeastSquaresFit fit_weighted_least_squares(const Matrix& x, std::span<const double> y,
                                           std::span<const double> weights) {
  check_sizes(x, y, weights, "weighted least squares");
  const std::size_t n = x.rows, k = x.cols;
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("weighted least squares: weights sum to zero");

  // The intercept is eliminated by weighted centring; the slopes solve the
  // jittered normal equations of the sqrt(w)-scaled centred design.
  std::vector<double> xmean(k, 0.0);
  double ymean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ymean += weights[i] * y[i];
    for (std::size_t j = 0; j < k; ++j) xmean[j] += weights[i] * x(i, j);
  }
  ymean /= total;
  for (double& m : xmean) m /= total;

  LeastSquaresFit fit;
  fit.intercept = ymean;
  if (k == 0) return fit;

  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(n), kk);
  Eigen::VectorXd b(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::sqrt(weights[i]);
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < k; ++j) a(r, static_cast<Eigen::Index>(j)) = s * (x(i, j) - xmean[j]);
    b(r) = s * (y[i] - ymean);
  }
  const Eigen::MatrixXd gram = a.transpose() * a;
  const Eigen::VectorXd rhs = a.transpose() * b;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double max_eig = eig.eigenvalues().maxCoeff();
  fit.rank_deficient = !(max_eig > 0.0) || eig.eigenvalues().minCoeff() <= 1e-10 * max_eig;

  Eigen::MatrixXd jittered = gram;
  jittered.diagonal().array() += 1e-8;
  const Eigen::VectorXd sol = jittered.ldlt().solve(rhs);
  fit.coefficients.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    fit.coefficients[j] = sol(static_cast<Eigen::Index>(j));
    fit.intercept -= fit.coefficients[j] * xmean[j];
  }
  return fit;
}

double weighted_square_loss(const Matrix& x, std::span<const double> y, std::span<const double> weights,
                            const LeastSquaresFit& fit) {
  double loss = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double r = y[i] - fit.predict(std::span<const double>(&x.values[i * x.cols], x.cols));
    loss += weights[i] * r * r;
  }
  return loss;
}

double weighted_r2(std::span<const double> y, std::span<const double> predicted, std::span<const double> weights) {
  if (y.size() != predicted.size() || y.size() != weights.size()) {
    throw ConfigError("fidelity: responses, predictions and weights differ in length");
  }
  if (y.size() < 2) throw ConfigError("fidelity needs at least two samples");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ConfigError("fidelity: weights sum to zero");
  double mean = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) mean += weights[i] * y[i];
  mean /= total;
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_tot += weights[i] * (y[i] - mean) * (y[i] - mean);
    ss_res += weights[i] * (y[i] - predicted[i]) * (y[i] - predicted[i]);
  }
  const double zero = 1e-24 * total * std::max(1.0, mean * mean);
  if (ss_tot <= zero) return ss_res <= zero ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace blastlime::lime
