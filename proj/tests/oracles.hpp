#pragma once

// Test-only reference computations. None of these call into the library's
// moment, solver or metric code paths.

#include "lmd/types.hpp"

#include <Eigen/Dense>
#include <Eigen/QR>

#include <cmath>
#include <functional>
#include <random>

namespace oracle {

using lmd::Matrix;
using lmd::RowMatrix;
using lmd::Vector;

inline RowMatrix random_rows(std::mt19937_64 &gen, Eigen::Index n, Eigen::Index d,
                             double mean = 0.0, double sd = 1.0) {
  std::normal_distribution<double> dist(mean, sd);
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      m(i, j) = dist(gen);
  return m;
}

inline Matrix random_matrix(std::mt19937_64 &gen, Eigen::Index r, Eigen::Index c) {
  return random_rows(gen, r, c);
}

struct NaiveSums {
  double count = 0;
  Vector sum_z, sum_u;
  Matrix sum_zz, sum_uz;
  double sum_uu = 0;
};

/// Elementwise triple loops over the data.
inline NaiveSums naive_sums(const RowMatrix &U, const RowMatrix &Z) {
  NaiveSums s;
  const auto n = Z.rows(), kd = Z.cols(), du = U.cols();
  s.count = static_cast<double>(n);
  s.sum_z = Vector::Zero(kd);
  s.sum_u = Vector::Zero(du);
  s.sum_zz = Matrix::Zero(kd, kd);
  s.sum_uz = Matrix::Zero(du, kd);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index i = 0; i < kd; ++i) {
      s.sum_z(i) += Z(r, i);
      for (Eigen::Index j = 0; j < kd; ++j)
        s.sum_zz(i, j) += Z(r, i) * Z(r, j);
    }
    for (Eigen::Index a = 0; a < du; ++a) {
      s.sum_u(a) += U(r, a);
      s.sum_uu += U(r, a) * U(r, a);
      for (Eigen::Index j = 0; j < kd; ++j)
        s.sum_uz(a, j) += U(r, a) * Z(r, j);
    }
  }
  return s;
}

/// Two-pass population covariance between the columns of X and Y.
inline Matrix two_pass_cov(const RowMatrix &X, const RowMatrix &Y) {
  const double n = static_cast<double>(X.rows());
  const Vector mx = X.colwise().sum().transpose() / n;
  const Vector my = Y.colwise().sum().transpose() / n;
  Matrix c = Matrix::Zero(X.cols(), Y.cols());
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index i = 0; i < X.cols(); ++i)
      for (Eigen::Index j = 0; j < Y.cols(); ++j)
        c(i, j) += (X(r, i) - mx(i)) * (Y(r, j) - my(j));
  return c / n;
}

inline double pearson(const Vector &x, const Vector &y) {
  const double mx = x.mean(), my = y.mean();
  double sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    sxy += (x(i) - mx) * (y(i) - my);
    sxx += (x(i) - mx) * (x(i) - mx);
    syy += (y(i) - my) * (y(i) - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

struct LeastSquares {
  Matrix W;
  Vector b;
};

/// Minimum-norm least squares fit of U on [Z 1] through a complete orthogonal
/// decomposition of the centered data matrix.
inline LeastSquares least_squares(const RowMatrix &U, const RowMatrix &Z) {
  const Vector mz = Z.colwise().mean().transpose();
  const Vector mu = U.colwise().mean().transpose();
  const Matrix Zc = Z.rowwise() - mz.transpose();
  const Matrix Uc = U.rowwise() - mu.transpose();
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Zc);
  LeastSquares out;
  out.W = cod.solve(Uc).transpose();
  out.b = mu - out.W * mz;
  return out;
}

/// Mean squared residual of u ~ W z + b over the rows.
inline double mean_sq_residual(const RowMatrix &U, const RowMatrix &Z, const Matrix &W,
                               const Vector &b) {
  double s = 0;
  for (Eigen::Index r = 0; r < U.rows(); ++r)
    s += (U.row(r).transpose() - W * Z.row(r).transpose() - b).squaredNorm();
  return s / static_cast<double>(U.rows());
}

/// R^2 computed directly from rows: 1 - mean residual / mean deviation.
inline double r2_direct(const RowMatrix &U, const RowMatrix &Z, const Matrix &W,
                        const Vector &b) {
  const Vector mu = U.colwise().mean().transpose();
  double sst = 0;
  for (Eigen::Index r = 0; r < U.rows(); ++r)
    sst += (U.row(r).transpose() - mu).squaredNorm();
  sst /= static_cast<double>(U.rows());
  return 1.0 - mean_sq_residual(U, Z, W, b) / sst;
}

/// Central differences of f at W, one entry at a time.
inline Matrix finite_difference(const std::function<double(const Matrix &)> &f,
                                const Matrix &W, double step) {
  Matrix g(W.rows(), W.cols());
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
      Matrix plus = W, minus = W;
      plus(i, j) += step;
      minus(i, j) -= step;
      g(i, j) = (f(plus) - f(minus)) / (2 * step);
    }
  return g;
}

inline double rel_diff(const Matrix &a, const Matrix &b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

} // namespace oracle
