#include "lmd/error.hpp"
#include "lmd/metrics.hpp"
#include "lmd/solver.hpp"

#include <limits>

namespace lmd {

DependenceVerdict check_linear_dependence(std::span<const EmbeddingDataset> datasets,
                                          double tolerance) {
  if (datasets.size() < 2)
    throw ValidationError("linear dependence check needs at least 2 datasets");
  if (!(tolerance >= 0.0))
    throw ConfigError("tolerance must be >= 0");
  const auto view = align_datasets(datasets);

  SolverConfig config;
  config.mode = SolverMode::min_norm;
  config.lambda = 0.0;
  config.center = true;

  MomentAccumulator acc(0, view.block_widths());
  acc.observe_rows(RowMatrix(static_cast<Eigen::Index>(view.rows()), 0), view.stacked());
  const auto joint = acc.finalize(true);

  DependenceVerdict verdict;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    DependenceEntry entry;
    entry.model = datasets[i].model_name;
    entry.zero_model = (datasets[i].values.array() == 0.0).all();

    std::vector<std::size_t> others;
    std::vector<const EmbeddingDataset *> bases;
    for (std::size_t j = 0; j < datasets.size(); ++j) {
      if (j == i)
        continue;
      others.push_back(j);
      bases.push_back(&datasets[j]);
    }
    try {
      const auto solution = solve(select_blocks(joint, i, others), config);
      entry.r2 = evaluate_r2(solution, datasets[i], bases, true).r2;
    } catch (const DegenerateTargetError &e) {
      entry.degenerate = true;
      entry.r2 = std::numeric_limits<double>::quiet_NaN();
      entry.note = e.what();
    }
    if (entry.zero_model || (!entry.degenerate && entry.r2 >= 1.0 - tolerance)) {
      verdict.dependent = true;
      verdict.representable.push_back(entry.model);
    }
    verdict.entries.push_back(std::move(entry));
  }
  return verdict;
}

} // namespace lmd
