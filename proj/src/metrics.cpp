#include "lmd/metrics.hpp"

#include "lmd/error.hpp"
#include "parallel.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

namespace lmd {

namespace {

constexpr std::size_t kChunkRows = 4096;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

FitReport evaluate_r2(const LmdSolution &solution, const EmbeddingDataset &target,
                      std::span<const EmbeddingDataset *const> bases, bool in_sample) {
  const auto view = align_datasets(
      std::vector<const EmbeddingDataset *>(bases.begin(), bases.end()), &target);
  if (view.block_widths() != solution.block_widths)
    throw DimensionError("solution block widths do not match the basis datasets");
  if (solution.target_dim() != target.d())
    throw DimensionError("solution predicts " + std::to_string(solution.target_dim()) +
                         " coordinates but target " + target.model_name + " has " +
                         std::to_string(target.d()));

  const auto du = static_cast<Eigen::Index>(target.d());
  const Matrix Wt = solution.W.transpose();
  const Vector bias = solution.bias.value_or(Vector::Zero(du));

  // Residual sum plus chunk-combined per-coordinate mean and M2.
  double ssr_sum = 0.0;
  double seen = 0.0;
  Vector mean = Vector::Zero(du);
  Vector m2 = Vector::Zero(du);
  for (std::size_t begin = 0; begin < view.rows(); begin += kChunkRows) {
    const auto count = std::min(kChunkRows, view.rows() - begin);
    const auto u = target.values.middleRows(static_cast<Eigen::Index>(begin),
                                            static_cast<Eigen::Index>(count));
    RowMatrix residual = u;
    residual.noalias() -= view.z_rows(begin, count) * Wt;
    residual.rowwise() -= bias.transpose();
    ssr_sum += residual.squaredNorm();

    const double nb = static_cast<double>(count);
    const Vector chunk_mean = u.colwise().mean().transpose();
    const Vector chunk_m2 =
        (u.rowwise() - chunk_mean.transpose()).colwise().squaredNorm().transpose();
    const double total = seen + nb;
    const Vector delta = chunk_mean - mean;
    mean += delta * (nb / total);
    m2 += chunk_m2 + delta.cwiseAbs2() * (seen * nb / total);
    seen = total;
  }

  FitReport report;
  report.target = target.model_name;
  report.basis = view.basis_names();
  report.split = target.split;
  report.n_eval = view.rows();
  report.in_sample = in_sample;
  report.ssr = ssr_sum / seen;
  report.sst = m2.sum() / seen;
  if (!(report.sst > 0.0))
    throw DegenerateTargetError("target " + target.model_name +
                                " is constant on the evaluation rows (SST = 0)");
  report.r2 = 1.0 - report.ssr / report.sst;
  return report;
}

const EmbeddingDataset &ModelEmbeddings::at(Split split) const {
  const auto it = splits.find(split);
  if (it == splits.end())
    throw ValidationError("model " + name + " has no " +
                          std::string(to_string(split)) + " split");
  return it->second;
}

std::string cell_key(std::string_view analysis, std::uint32_t seq_len, Split eval_split,
                     const std::string &target, const std::vector<std::string> &basis,
                     const SolverConfig &config) {
  auto hex = [](double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
    return std::string(buf, end);
  };
  std::string key = std::string(analysis) + ";T=" + std::to_string(seq_len) +
                    ";eval=" + std::string(to_string(eval_split)) + ";target=" + target +
                    ";basis=";
  for (std::size_t i = 0; i < basis.size(); ++i)
    key += (i ? "," : "") + basis[i];
  key += ";mode=" + std::string(to_string(config.mode)) + ";lambda=" + hex(config.lambda) +
         ";eig=" + hex(config.eig_target) + ";cutoff=" + hex(config.pinv_cutoff) +
         ";center=" + (config.center ? "1" : "0");
  return key;
}

namespace {

struct Cell {
  std::size_t target;
  std::vector<std::size_t> basis;
};

std::vector<const EmbeddingDataset *> split_of(std::span<const ModelEmbeddings> models,
                                               Split split) {
  std::vector<const EmbeddingDataset *> out;
  for (const auto &m : models)
    out.push_back(&m.at(split));
  return out;
}

/// Runs every cell, reusing stored results. Joint train moments over all
/// models are accumulated once and sliced per cell.
std::vector<CellResult> run_cells(std::string_view analysis,
                                  std::span<const ModelEmbeddings> models,
                                  const std::vector<Cell> &cells, const SolverConfig &config,
                                  Split eval_split, const AnalysisOptions &options) {
  config.validate();
  if (models.size() < 2)
    throw ValidationError("analysis needs at least 2 models");
  const auto train = split_of(models, Split::train);
  const auto eval = split_of(models, eval_split);
  const auto train_view = align_datasets(train);
  (void)align_datasets(eval);
  const bool in_sample = eval_split == Split::train;
  const auto seq_len = train.front()->seq_len;

  std::vector<std::string> keys;
  std::vector<CellResult> results(cells.size());
  std::vector<char> have(cells.size(), 0);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<std::string> names;
    for (auto b : cells[c].basis)
      names.push_back(models[b].name);
    keys.push_back(cell_key(analysis, seq_len, eval_split, models[cells[c].target].name,
                            names, config));
    if (options.store) {
      if (auto cached = options.store->load(keys.back())) {
        results[c] = std::move(*cached);
        have[c] = 1;
      }
    }
  }
  if (std::all_of(have.begin(), have.end(), [](char h) { return h != 0; }))
    return results;

  MomentSummary joint;
  {
    MomentAccumulator acc(0, train_view.block_widths());
    for (std::size_t begin = 0; begin < train_view.rows(); begin += kChunkRows) {
      const auto count = std::min(kChunkRows, train_view.rows() - begin);
      acc.observe_rows(RowMatrix(static_cast<Eigen::Index>(count), 0),
                       train_view.z_rows(begin, count));
    }
    joint = acc.finalize(config.center);
  }

  detail::parallel_for(cells.size(), options.workers, [&](std::size_t c) {
    if (have[c])
      return;
    const auto &cell = cells[c];
    try {
      const auto moments = select_blocks(joint, cell.target, cell.basis);
      const auto solution = solve(moments, config);
      std::vector<const EmbeddingDataset *> bases;
      for (auto b : cell.basis)
        bases.push_back(eval[b]);
      auto report = evaluate_r2(solution, *eval[cell.target], bases, in_sample);
      report.target = models[cell.target].name;
      for (std::size_t i = 0; i < cell.basis.size(); ++i)
        report.basis[i] = models[cell.basis[i]].name;
      results[c].report = std::move(report);
    } catch (const Error &e) {
      results[c].error = e.what();
      results[c].error_kind = e.kind();
    } catch (const std::exception &e) {
      results[c].error = e.what();
      results[c].error_kind = "internal";
    }
  });

  if (options.store)
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (!have[c])
        options.store->save(keys[c], results[c]);
  return results;
}

CorrelationReport base_report(std::span<const ModelEmbeddings> models, Split eval_split) {
  CorrelationReport report;
  for (const auto &m : models)
    report.models.push_back(m.name);
  report.eval_split = eval_split;
  report.in_sample = eval_split == Split::train;
  if (!models.empty())
    report.seq_len = models.front().at(Split::train).seq_len;
  return report;
}

void record_error(CorrelationReport &report, std::span<const ModelEmbeddings> models,
                  const Cell &cell, const CellResult &result) {
  CellError err;
  err.target = models[cell.target].name;
  for (auto b : cell.basis)
    err.basis.push_back(models[b].name);
  err.kind = result.error_kind;
  err.message = result.error;
  report.errors.push_back(std::move(err));
}

} // namespace

CorrelationReport pairwise_analysis(std::span<const ModelEmbeddings> models,
                                    const SolverConfig &config, Split eval_split,
                                    const AnalysisOptions &options) {
  const auto n = models.size();
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j)
        cells.push_back({i, {j}});
  const auto results = run_cells("pairwise", models, cells, config, eval_split, options);

  auto report = base_report(models, eval_split);
  const auto size = static_cast<Eigen::Index>(n);
  PairwiseResult pw{Matrix::Identity(size, size), Matrix::Identity(size, size)};
  std::vector<std::size_t> failures(n, 0);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(cells[c].target);
    const auto j = static_cast<Eigen::Index>(cells[c].basis.front());
    if (results[c].ok()) {
      pw.r2(i, j) = results[c].report->r2;
    } else {
      pw.r2(i, j) = kNaN;
      ++failures[cells[c].target];
      record_error(report, models, cells[c], results[c]);
    }
  }
  for (Eigen::Index i = 0; i < size; ++i)
    for (Eigen::Index j = 0; j < size; ++j)
      if (i != j)
        pw.rho(i, j) = (pw.r2(i, j) + pw.r2(j, i)) / 2.0;
  for (std::size_t i = 0; i < n; ++i)
    if (failures[i] == n - 1)
      report.failed_rows.push_back(models[i].name);
  report.pairwise = std::move(pw);
  return report;
}

CorrelationReport group_analysis(std::span<const ModelEmbeddings> models,
                                 const SolverConfig &config, Split eval_split,
                                 const AnalysisOptions &options) {
  const auto n = models.size();
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < n; ++i) {
    Cell cell{i, {}};
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        cell.basis.push_back(j);
    cells.push_back(std::move(cell));
  }
  const auto results = run_cells("group", models, cells, config, eval_split, options);

  auto report = base_report(models, eval_split);
  GroupResult group;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (results[c].ok()) {
      group.r2.push_back(results[c].report->r2);
    } else {
      group.r2.push_back(kNaN);
      report.failed_rows.push_back(models[c].name);
      record_error(report, models, cells[c], results[c]);
    }
  }
  group.rho = std::accumulate(group.r2.begin(), group.r2.end(), 0.0) /
              static_cast<double>(group.r2.size());
  report.group = std::move(group);
  return report;
}

double SweepReport::r2(const std::string &model, std::uint32_t seq_len) const {
  const auto it = by_seq_len.find(seq_len);
  if (it == by_seq_len.end() || !it->second.group)
    return kNaN;
  const auto &rep = it->second;
  for (std::size_t i = 0; i < rep.models.size(); ++i)
    if (rep.models[i] == model)
      return rep.group->r2[i];
  return kNaN;
}

double SweepReport::group_rho(std::uint32_t seq_len) const {
  const auto it = by_seq_len.find(seq_len);
  if (it == by_seq_len.end() || !it->second.group)
    return kNaN;
  return it->second.group->rho;
}

SweepReport length_sweep(const std::map<std::uint32_t, std::vector<ModelEmbeddings>> &groups,
                         const SolverConfig &config, Split eval_split,
                         const AnalysisOptions &options) {
  SweepReport sweep;
  for (const auto &[seq_len, models] : groups) {
    sweep.seq_lens.push_back(seq_len);
    for (const auto &m : models)
      if (std::find(sweep.models.begin(), sweep.models.end(), m.name) == sweep.models.end())
        sweep.models.push_back(m.name);
    try {
      sweep.by_seq_len.emplace(seq_len, group_analysis(models, config, eval_split, options));
    } catch (const std::exception &e) {
      sweep.failures.emplace(seq_len, e.what());
    }
  }
  return sweep;
}

} // namespace lmd
