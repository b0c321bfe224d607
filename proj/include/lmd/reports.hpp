#pragma once

#include "lmd/metrics.hpp"
#include "lmd/solver.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lmd {

/// Shortest decimal that round-trips to the same double; "NaN"/"inf" for
/// non-finite values.
[[nodiscard]] std::string format_double(double value);

[[nodiscard]] std::string to_json(const FitReport &report);
[[nodiscard]] FitReport fit_report_from_json(const std::string &text);

[[nodiscard]] std::string to_json(const CellResult &result);
[[nodiscard]] CellResult cell_result_from_json(const std::string &text);

[[nodiscard]] std::string to_json(const CorrelationReport &report);
[[nodiscard]] std::string to_json(const SweepReport &report);

/// n x n matrix with a header row and a leading name column, in model order.
[[nodiscard]] std::string pairwise_r2_csv(const CorrelationReport &report);
[[nodiscard]] std::string pairwise_rho_csv(const CorrelationReport &report);

/// Models x T table with a trailing "Group Corr" row.
[[nodiscard]] std::string group_csv(const CorrelationReport &report);
[[nodiscard]] std::string sweep_csv(const SweepReport &report);

/// Labels plus matrix values for external heatmap rendering.
[[nodiscard]] std::string plot_data(const CorrelationReport &report);
[[nodiscard]] std::string plot_data(const SweepReport &report);

struct SolutionMeta {
  std::string target;
  std::vector<std::string> basis;
  std::uint32_t seq_len = 1;
  std::uint64_t n_train = 0;
};

/// Writes `<prefix>.json` (metadata and bias) and `<prefix>.lmdemb` (W in the
/// embedding payload layout, d_u rows of width sum d_i).
void write_solution(const LmdSolution &solution, const SolutionMeta &meta,
                    const std::filesystem::path &prefix);

struct StoredSolution {
  LmdSolution solution;
  SolutionMeta meta;
};

[[nodiscard]] StoredSolution read_solution(const std::filesystem::path &prefix);

} // namespace lmd
