#pragma once

#include "lmd/embedding_store.hpp"
#include "lmd/solver.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lmd {

/// Goodness of fit of one (target, bases, split) triple.
struct FitReport {
  std::string target;
  std::vector<std::string> basis;
  Split split = Split::train;
  double ssr = 0.0; ///< mean squared residual norm
  double sst = 0.0; ///< mean squared deviation of the target from its mean
  double r2 = 0.0;  ///< 1 - ssr/sst, not clamped
  std::uint64_t n_eval = 0;
  bool in_sample = false;
};

/// R^2 of `solution` on the given rows. SST uses the mean of the evaluation
/// rows themselves. One streaming pass over the data.
/// Throws DegenerateTargetError when the target is constant (SST = 0).
[[nodiscard]] FitReport evaluate_r2(const LmdSolution &solution,
                                    const EmbeddingDataset &target,
                                    std::span<const EmbeddingDataset *const> bases,
                                    bool in_sample = false);

/// All available splits of one model, at one sequence length.
struct ModelEmbeddings {
  std::string name;
  std::map<Split, EmbeddingDataset> splits;

  [[nodiscard]] const EmbeddingDataset &at(Split split) const;
};

/// Outcome of one analysis cell: either a report or a recorded error.
struct CellResult {
  std::optional<FitReport> report;
  std::string error;
  std::string error_kind;

  [[nodiscard]] bool ok() const noexcept { return report.has_value(); }
};

struct CellError {
  std::string target;
  std::vector<std::string> basis;
  std::string kind;
  std::string message;
};

/// Persistence hook for cell-level resumption.
class CellStore {
public:
  virtual ~CellStore() = default;
  [[nodiscard]] virtual std::optional<CellResult> load(const std::string &key) = 0;
  virtual void save(const std::string &key, const CellResult &result) = 0;
};

struct AnalysisOptions {
  unsigned workers = 1;
  CellStore *store = nullptr;
};

/// Directional R^2 and symmetric rho between every ordered pair of models.
struct PairwiseResult {
  Matrix r2;  ///< row = target, column = basis; unit diagonal
  Matrix rho; ///< (r2 + r2') / 2; unit diagonal
};

/// Leave-one-out R^2 of every model on all others.
struct GroupResult {
  std::vector<double> r2;
  double rho = 0.0; ///< mean of r2
};

struct CorrelationReport {
  std::vector<std::string> models;
  Split eval_split = Split::test;
  bool in_sample = false;
  std::uint32_t seq_len = 0;
  std::optional<PairwiseResult> pairwise;
  std::optional<GroupResult> group;
  std::vector<CellError> errors;
  /// Models whose every cell failed.
  std::vector<std::string> failed_rows;
};

/// Fits R^2(u_i, u_j) on train for all i != j and evaluates on eval_split.
/// Failed cells become NaN entries plus a CellError.
[[nodiscard]] CorrelationReport pairwise_analysis(std::span<const ModelEmbeddings> models,
                                                  const SolverConfig &config,
                                                  Split eval_split,
                                                  const AnalysisOptions &options = {});

/// Fits each model on the remaining ones and averages the R^2 values.
[[nodiscard]] CorrelationReport group_analysis(std::span<const ModelEmbeddings> models,
                                               const SolverConfig &config,
                                               Split eval_split,
                                               const AnalysisOptions &options = {});

struct SweepReport {
  std::vector<std::uint32_t> seq_lens;
  std::vector<std::string> models;
  std::map<std::uint32_t, CorrelationReport> by_seq_len;
  std::map<std::uint32_t, std::string> failures;

  /// R^2 of `model` at `seq_len`, NaN when missing.
  [[nodiscard]] double r2(const std::string &model, std::uint32_t seq_len) const;
  [[nodiscard]] double group_rho(std::uint32_t seq_len) const;
};

/// Runs group_analysis per sequence length. A failure at one length is
/// recorded and the others still run.
[[nodiscard]] SweepReport
length_sweep(const std::map<std::uint32_t, std::vector<ModelEmbeddings>> &groups,
             const SolverConfig &config, Split eval_split,
             const AnalysisOptions &options = {});

/// Canonical cache key for one analysis cell.
[[nodiscard]] std::string cell_key(std::string_view analysis, std::uint32_t seq_len,
                                   Split eval_split, const std::string &target,
                                   const std::vector<std::string> &basis,
                                   const SolverConfig &config);

} // namespace lmd
