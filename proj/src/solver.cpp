#include "lmd/solver.hpp"

#include "lmd/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace lmd {

std::string_view to_string(SolverMode mode) noexcept {
  switch (mode) {
  case SolverMode::full_rank:
    return "full_rank";
  case SolverMode::min_norm:
    return "min_norm";
  case SolverMode::ridge_fixed:
    return "ridge_fixed";
  case SolverMode::ridge_adaptive:
    return "ridge_adaptive";
  }
  return "ridge_adaptive";
}

std::optional<SolverMode> parse_solver_mode(std::string_view text) noexcept {
  if (text == "full_rank" || text == "full-rank")
    return SolverMode::full_rank;
  if (text == "min_norm" || text == "min-norm")
    return SolverMode::min_norm;
  if (text == "ridge_fixed" || text == "ridge")
    return SolverMode::ridge_fixed;
  if (text == "ridge_adaptive" || text == "ridge-adaptive")
    return SolverMode::ridge_adaptive;
  return std::nullopt;
}

void SolverConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ConfigError("lambda must be a finite value >= 0");
  if (mode == SolverMode::ridge_fixed && !(lambda > 0.0))
    throw ConfigError("ridge_fixed needs lambda > 0");
  if (!(eig_target > 0.0) || !std::isfinite(eig_target))
    throw ConfigError("eig_target must be > 0");
  if (!(pinv_cutoff > 0.0 && pinv_cutoff < 1.0))
    throw ConfigError("pinv_cutoff must lie in (0, 1)");
}

Matrix LmdSolution::block(std::size_t i) const {
  if (i >= block_widths.size())
    throw DimensionError("block index " + std::to_string(i) + " out of range");
  Eigen::Index offset = 0;
  for (std::size_t j = 0; j < i; ++j)
    offset += static_cast<Eigen::Index>(block_widths[j]);
  return W.middleCols(offset, static_cast<Eigen::Index>(block_widths[i]));
}

namespace {

Matrix cholesky_solve(const Matrix &system, const Matrix &uz, const char *what) {
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success)
    throw RankDeficiencyError(std::string(what) +
                              ": system matrix is not numerically positive "
                              "definite; use min_norm or a ridge mode");
  return llt.solve(uz.transpose()).transpose();
}

} // namespace

LmdSolution solve(const MomentSummary &moments, const SolverConfig &config) {
  config.validate();
  const auto kd = moments.zz.rows();
  if (kd < 1 || moments.zz.cols() != kd)
    throw DimensionError("solve needs a square basis moment matrix of size >= 1");
  if (moments.uz.cols() != kd)
    throw DimensionError("cross moment has " + std::to_string(moments.uz.cols()) +
                         " columns, expected " + std::to_string(kd));
  if (moments.count < 1 || (moments.centered && moments.count < 2))
    throw EmptyAccumulatorError("not enough samples to solve");
  if (moments.centered != config.center)
    throw ConfigError(config.center
                          ? "config asks for a bias term but moments are not centered"
                          : "moments are centered but config disables the bias term");

  const Matrix &A = moments.zz;
  const bool needs_vectors = config.mode == SolverMode::min_norm;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(
      A, needs_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success)
    throw Error("symmetric eigendecomposition failed");
  const Vector &evals = eig.eigenvalues(); // ascending
  const double lmin = evals(0);
  const double lmax = evals(kd - 1);
  const double cutoff = config.pinv_cutoff * std::max(lmax, 0.0);

  LmdSolution sol;
  sol.mode = config.mode;
  sol.block_widths = moments.block_widths;
  sol.rank_deficient = !(lmin > cutoff);
  sol.effective_rank = static_cast<std::size_t>((evals.array() > cutoff).count());

  switch (config.mode) {
  case SolverMode::full_rank:
    if (sol.rank_deficient)
      throw RankDeficiencyError(
          "full_rank: second-moment matrix is rank deficient (min eigenvalue " +
          std::to_string(lmin) + ", max " + std::to_string(lmax) +
          "); use min_norm or a ridge mode");
    sol.W = cholesky_solve(A, moments.uz, "full_rank");
    sol.eig_floor = lmin;
    break;
  case SolverMode::ridge_fixed:
  case SolverMode::ridge_adaptive: {
    const double lambda = config.mode == SolverMode::ridge_fixed
                              ? config.lambda
                              : std::max(0.0, config.eig_target - lmin);
    Matrix system = A;
    system.diagonal().array() += lambda;
    sol.W = cholesky_solve(system, moments.uz, to_string(config.mode).data());
    sol.lambda_used = lambda;
    sol.eig_floor = lmin + lambda;
    break;
  }
  case SolverMode::min_norm: {
    const Matrix &V = eig.eigenvectors();
    Vector inv = Vector::Zero(kd);
    for (Eigen::Index i = 0; i < kd; ++i)
      if (evals(i) > cutoff)
        inv(i) = 1.0 / evals(i);
    sol.W = (moments.uz * V) * inv.asDiagonal() * V.transpose();
    sol.eig_floor = lmin;
    break;
  }
  }

  if (!sol.W.allFinite())
    throw Error("solver produced non-finite coefficients");
  if (moments.centered)
    sol.bias = moments.mean_u - sol.W * moments.mean_z;
  return sol;
}

LossAndGradient loss_and_gradient(const Matrix &W, const MomentSummary &moments) {
  if (W.rows() != moments.uz.rows() || W.cols() != moments.zz.rows())
    throw DimensionError("W is " + std::to_string(W.rows()) + "x" +
                         std::to_string(W.cols()) + ", moments expect " +
                         std::to_string(moments.uz.rows()) + "x" +
                         std::to_string(moments.zz.rows()));
  const Matrix WA = W * moments.zz;
  LossAndGradient out;
  out.loss = (WA.array() * W.array()).sum() -
             2.0 * (moments.uz.array() * W.array()).sum() + moments.uu;
  out.gradient = 2.0 * (WA - moments.uz);
  return out;
}

MomentAccumulator accumulate(const AlignedView &view, std::size_t chunk_rows) {
  const auto &target = view.target();
  MomentAccumulator acc(target.d(), view.block_widths());
  chunk_rows = std::max<std::size_t>(chunk_rows, 1);
  for (std::size_t begin = 0; begin < view.rows(); begin += chunk_rows) {
    const auto count = std::min(chunk_rows, view.rows() - begin);
    const RowMatrix u = target.values.middleRows(static_cast<Eigen::Index>(begin),
                                                 static_cast<Eigen::Index>(count));
    acc.observe_rows(u, view.z_rows(begin, count));
  }
  return acc;
}

LmdSolution fit(const EmbeddingDataset &target,
                std::span<const EmbeddingDataset *const> bases,
                const SolverConfig &config) {
  config.validate();
  const auto view = align_datasets(
      std::vector<const EmbeddingDataset *>(bases.begin(), bases.end()), &target);
  return solve(accumulate(view).finalize(config.center), config);
}

} // namespace lmd
