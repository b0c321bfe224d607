#pragma once

#include "lmd/embedding_store.hpp"
#include "lmd/moments.hpp"
#include "lmd/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lmd {

enum class SolverMode { full_rank, min_norm, ridge_fixed, ridge_adaptive };

[[nodiscard]] std::string_view to_string(SolverMode mode) noexcept;
[[nodiscard]] std::optional<SolverMode> parse_solver_mode(std::string_view text) noexcept;

struct SolverConfig {
  SolverMode mode = SolverMode::ridge_adaptive;
  /// Ridge strength for ridge_fixed.
  double lambda = 1e-6;
  /// Smallest eigenvalue the regularized system must reach in ridge_adaptive.
  double eig_target = 1e-6;
  /// Eigenvalues at or below pinv_cutoff * max eigenvalue count as zero.
  double pinv_cutoff = 1e-12;
  /// Fit a bias term (solve on covariances instead of raw second moments).
  bool center = true;

  /// Throws ConfigError.
  void validate() const;
};

/// Coefficients W = [W_1 .. W_k] (d_u x sum d_i) and optional bias such that
/// u ~ W z + b.
struct LmdSolution {
  Matrix W;
  std::optional<Vector> bias;
  std::vector<std::size_t> block_widths;
  double lambda_used = 0.0;
  /// Smallest eigenvalue of the matrix actually solved against.
  double eig_floor = 0.0;
  bool rank_deficient = false;
  std::size_t effective_rank = 0;
  SolverMode mode = SolverMode::ridge_adaptive;

  [[nodiscard]] std::size_t target_dim() const noexcept {
    return static_cast<std::size_t>(W.rows());
  }
  [[nodiscard]] std::size_t basis_dim() const noexcept {
    return static_cast<std::size_t>(W.cols());
  }
  /// W_i, the d_u x d_i coefficient block for basis i.
  [[nodiscard]] Matrix block(std::size_t i) const;
};

/// Closed-form LMD coefficients from moment summaries.
///
/// full_rank: W = uz * zz^-1 (Cholesky); rejects systems whose smallest
///   eigenvalue is at or below pinv_cutoff * largest.
/// ridge_fixed: W = uz * (lambda I + zz)^-1.
/// ridge_adaptive: lambda = max(0, eig_target - min eig(zz)), then ridge.
/// min_norm: W = uz * pinv(zz) through the symmetric eigendecomposition.
///
/// When the summary is centered the bias is b = E[u] - W E[z].
[[nodiscard]] LmdSolution solve(const MomentSummary &moments,
                                const SolverConfig &config);

struct LossAndGradient {
  double loss = 0.0;
  Matrix gradient;
};

/// L(W) = tr(zz W'W) - 2 tr(uz' W) + uu and dL/dW = 2 (W zz - uz).
[[nodiscard]] LossAndGradient loss_and_gradient(const Matrix &W,
                                                const MomentSummary &moments);

/// One-pass accumulation of (target, bases) moments over aligned datasets.
[[nodiscard]] MomentAccumulator accumulate(const AlignedView &view,
                                           std::size_t chunk_rows = 4096);

/// Aligns, accumulates and solves.
[[nodiscard]] LmdSolution fit(const EmbeddingDataset &target,
                              std::span<const EmbeddingDataset *const> bases,
                              const SolverConfig &config);

struct DependenceEntry {
  std::string model;
  /// In-sample R^2 of this model on all others; NaN when degenerate.
  double r2 = 0.0;
  bool zero_model = false;
  bool degenerate = false;
  std::string note;
};

struct DependenceVerdict {
  bool dependent = false;
  std::vector<DependenceEntry> entries;
  /// Models that are zero or representable by the rest.
  std::vector<std::string> representable;
};

/// Fits every dataset on the remaining ones (min_norm, lambda = 0, with bias)
/// and declares the set dependent when some model is identically zero or
/// reaches in-sample R^2 >= 1 - tolerance.
[[nodiscard]] DependenceVerdict
check_linear_dependence(std::span<const EmbeddingDataset> datasets,
                        double tolerance);

} // namespace lmd
