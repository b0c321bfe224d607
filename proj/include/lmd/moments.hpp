#pragma once

#include "lmd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lmd {

/// Expectations consumed by the solver. With `centered` set, `zz` and `uz`
/// hold cov(z,z) and cov(u,z), and `uu` holds tr cov(u,u); otherwise they are
/// the raw second moments E[zz'], E[uz'] and E[u'u]. All normalized by count.
struct MomentSummary {
  std::uint64_t count = 0;
  bool centered = false;
  Matrix zz;
  Matrix uz;
  Vector mean_z;
  Vector mean_u;
  double uu = 0.0;
  std::vector<std::size_t> block_widths;

  [[nodiscard]] std::size_t target_dim() const noexcept {
    return static_cast<std::size_t>(uz.rows());
  }
  [[nodiscard]] std::size_t basis_dim() const noexcept {
    return static_cast<std::size_t>(zz.rows());
  }
};

/// Mergeable sufficient statistics over stacked basis rows z and target rows
/// u. Plain (uncompensated) sums so that merging is exact field-wise addition.
class MomentAccumulator {
public:
  MomentAccumulator(std::size_t target_dim, std::vector<std::size_t> block_widths);
  MomentAccumulator(std::size_t target_dim, std::size_t basis_dim)
      : MomentAccumulator(target_dim, std::vector<std::size_t>{basis_dim}) {}

  void observe(std::span<const double> u_row, std::span<const double> z_row);
  /// Observes every row of U and Z (one sample per row).
  void observe_rows(const RowMatrix &u_rows, const RowMatrix &z_rows);
  void merge(const MomentAccumulator &other);

  /// Throws EmptyAccumulatorError when count is 0 (or below 2 with centering).
  [[nodiscard]] MomentSummary finalize(bool center) const;

  [[nodiscard]] std::uint64_t count() const noexcept { return count_; }
  [[nodiscard]] std::size_t target_dim() const noexcept {
    return static_cast<std::size_t>(sum_u_.size());
  }
  [[nodiscard]] std::size_t basis_dim() const noexcept {
    return static_cast<std::size_t>(sum_z_.size());
  }
  [[nodiscard]] const std::vector<std::size_t> &block_widths() const noexcept {
    return widths_;
  }
  [[nodiscard]] const Vector &sum_z() const noexcept { return sum_z_; }
  [[nodiscard]] const Vector &sum_u() const noexcept { return sum_u_; }
  [[nodiscard]] const Matrix &sum_zz() const noexcept { return sum_zz_; }
  [[nodiscard]] const Matrix &sum_uz() const noexcept { return sum_uz_; }
  [[nodiscard]] double sum_uu_trace() const noexcept { return sum_uu_; }

  friend bool operator==(const MomentAccumulator &,
                         const MomentAccumulator &) = default;

  /// Binary snapshot for resumable jobs ("LMDMOM\0\1" header, little-endian).
  void save(const std::filesystem::path &destination) const;
  [[nodiscard]] static MomentAccumulator load(const std::filesystem::path &source);

private:
  void check_same_shape(const MomentAccumulator &other) const;
  void mirror_lower();

  std::vector<std::size_t> widths_;
  std::uint64_t count_ = 0;
  Vector sum_z_;
  Vector sum_u_;
  Matrix sum_zz_;
  Matrix sum_uz_;
  double sum_uu_ = 0.0;
};

[[nodiscard]] MomentAccumulator merge(MomentAccumulator a,
                                      const MomentAccumulator &b);

/// Treats `joint` as moments over concatenated per-model blocks (target_dim
/// 0) and extracts the summary for one target block regressed on the given
/// basis blocks.
[[nodiscard]] MomentSummary select_blocks(const MomentSummary &joint,
                                          std::size_t target_block,
                                          std::span<const std::size_t> basis_blocks);

} // namespace lmd
