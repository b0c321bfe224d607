#pragma once

#include "lmd/embedding_store.hpp"
#include "lmd/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lmd {

enum class TargetRule { exact_combination, noisy_combination, independent, duplicate_of, zero };

[[nodiscard]] std::string_view to_string(TargetRule rule) noexcept;

/// Recipe for a synthetic (target, bases) family with known linear structure.
///
/// Basis rows are z = mu + g (g ~ N(0, I)) or, with latent_rank r,
/// z = mu + L h with L a fixed kd x r matrix and h ~ N(0, I_r).
/// Rows [row_offset, row_offset + n) of the infinite row stream are emitted,
/// so train and test splits can share one ground truth.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::size_t row_offset = 0;
  std::vector<std::size_t> dims = {4};
  /// Target dimension; 0 means "same as the first basis".
  std::size_t target_dim = 0;
  TargetRule rule = TargetRule::exact_combination;
  std::size_t duplicate_index = 0;
  double noise_sigma = 0.0;
  std::optional<Matrix> true_W;
  std::optional<Vector> true_b;
  std::optional<std::size_t> latent_rank;
  /// Scale of the random per-coordinate basis means.
  double mean_scale = 1.0;
  std::uint32_t seq_len = 1;
  Split split = Split::train;
  std::string basis_prefix = "basis";
  std::string target_name = "target";

  [[nodiscard]] std::size_t resolved_target_dim() const;
  [[nodiscard]] std::size_t basis_dim() const;
  /// Throws ConfigError.
  void validate() const;
};

struct GroundTruth {
  Matrix W;
  Vector b;
  double sigma = 0.0;
  /// Population signal variance tr(W cov(z) W').
  double signal_variance = 0.0;
  /// signal / (signal + d_u sigma^2) for the noisy rule. An approximation
  /// target for in-sample R^2, not an exact oracle.
  std::optional<double> expected_r2;
};

struct SynthResult {
  EmbeddingDataset target;
  std::vector<EmbeddingDataset> bases;
  GroundTruth truth;
};

/// Ground truth only (no rows). Deterministic in the spec.
[[nodiscard]] GroundTruth make_truth(const SynthSpec &spec);

/// Noise level giving the requested expected in-sample R^2 under `spec`.
[[nodiscard]] double sigma_for_r2(const SynthSpec &spec, double r2);

[[nodiscard]] SynthResult generate(const SynthSpec &spec);

struct Scale {
  double c;
};
/// x -> A x + b per row; A must be square and invertible.
struct Affine {
  Matrix A;
  Vector b;
};
struct PermuteRows {
  std::vector<std::size_t> order; ///< output row i = input row order[i]
};
using Transform = std::variant<Scale, Affine, PermuteRows>;

/// Transformed copy of `dataset`. Rejects an A whose smallest singular value
/// is below 1e-10 times its largest.
[[nodiscard]] EmbeddingDataset perturb(const EmbeddingDataset &dataset,
                                       const Transform &transform);

} // namespace lmd
