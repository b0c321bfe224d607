#include "lmd/cli.hpp"

#include "byte_io.hpp"
#include "lmd/embedding_store.hpp"
#include "lmd/error.hpp"
#include "lmd/metrics.hpp"
#include "lmd/reports.hpp"
#include "lmd/solver.hpp"
#include "lmd/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace lmd::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct GlobalOptions {
  std::string solver = "ridge-adaptive";
  double lambda = 1e-6;
  double eig_target = 1e-6;
  double pinv_cutoff = 1e-12;
  bool center = true;
  std::string eval_split = "test";
  std::string out = "lmd_out";
  std::vector<std::string> formats = {"json", "csv"};
  unsigned workers = 1;
  bool force = false;
  bool l2_normalize = false;
  std::string root = ".";
};

struct Formats {
  bool json = false;
  bool csv = false;
  bool plotdata = false;
};

SolverConfig solver_config(const GlobalOptions &g) {
  const auto mode = parse_solver_mode(g.solver);
  if (!mode)
    throw ConfigError("unknown solver '" + g.solver + "'");
  SolverConfig config;
  config.mode = *mode;
  config.lambda = g.lambda;
  config.eig_target = g.eig_target;
  config.pinv_cutoff = g.pinv_cutoff;
  config.center = g.center;
  config.validate();
  return config;
}

Split eval_split(const GlobalOptions &g) {
  const auto split = parse_split(g.eval_split);
  if (!split)
    throw ConfigError("unknown split '" + g.eval_split + "'");
  return *split;
}

Formats formats(const GlobalOptions &g) {
  Formats f;
  for (const auto &name : g.formats) {
    if (name == "json")
      f.json = true;
    else if (name == "csv")
      f.csv = true;
    else if (name == "plotdata")
      f.plotdata = true;
    else
      throw ConfigError("unknown output format '" + name + "'");
  }
  if (!f.json && !f.csv && !f.plotdata)
    throw ConfigError("at least one output format is required");
  return f;
}

fs::path dataset_path(const fs::path &root, const std::string &model, Split split,
                      std::uint32_t seq_len) {
  return root / model / std::string(to_string(split)) / ("T" + std::to_string(seq_len) + ".lmdemb");
}

EmbeddingDataset load(const GlobalOptions &g, const std::string &model, Split split,
                      std::uint32_t seq_len) {
  const auto path = dataset_path(g.root, model, split, seq_len);
  if (!fs::exists(path))
    throw IoError(path.string() + ": no such dataset for model " + model);
  auto ds = read_dataset(path);
  ds.model_name = model;
  ds.split = split;
  if (g.l2_normalize)
    l2_normalize_rows(ds);
  return ds;
}

std::vector<ModelEmbeddings> load_models(const GlobalOptions &g,
                                         const std::vector<std::string> &models,
                                         std::uint32_t seq_len, Split eval) {
  std::vector<ModelEmbeddings> out;
  for (const auto &name : models) {
    ModelEmbeddings m;
    m.name = name;
    m.splits.emplace(Split::train, load(g, name, Split::train, seq_len));
    if (eval != Split::train)
      m.splits.emplace(eval, load(g, name, eval, seq_len));
    out.push_back(std::move(m));
  }
  return out;
}

void write_text(const fs::path &path, const std::string &text) {
  detail::write_file_atomic(path, text);
}

std::uint64_t fnv1a(const std::string &text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// One JSON file per analysis cell under <out>/cells.
class DirectoryCellStore final : public CellStore {
public:
  DirectoryCellStore(fs::path dir, bool force) : dir_(std::move(dir)), force_(force) {}

  std::optional<CellResult> load(const std::string &key) override {
    if (force_)
      return std::nullopt;
    const auto path = path_for(key);
    if (!fs::exists(path))
      return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(detail::read_file(path));
      if (j.at("key").get<std::string>() != key)
        return std::nullopt;
      auto result = cell_result_from_json(j.at("result").dump());
      // Failed cells are retried on the next run.
      if (!result.ok())
        return std::nullopt;
      ++reused_;
      return result;
    } catch (const std::exception &) {
      return std::nullopt;
    }
  }

  void save(const std::string &key, const CellResult &result) override {
    ordered_json j;
    j["key"] = key;
    j["result"] = ordered_json::parse(to_json(result));
    write_text(path_for(key), j.dump(2) + "\n");
  }

  [[nodiscard]] std::size_t reused() const noexcept { return reused_; }

private:
  [[nodiscard]] fs::path path_for(const std::string &key) const {
    std::ostringstream name;
    name << std::hex << std::setw(16) << std::setfill('0') << fnv1a(key) << ".json";
    return dir_ / name.str();
  }

  fs::path dir_;
  bool force_;
  std::size_t reused_ = 0;
};

std::string error_json(const std::string &kind, const std::string &message) {
  ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  return j.dump();
}

// ---- validate --------------------------------------------------------------

struct Violation {
  std::string path;
  std::string kind;
  std::string message;
  std::optional<std::size_t> row;
};

int cmd_validate(const std::vector<std::string> &inputs, std::ostream &out) {
  std::vector<fs::path> files;
  std::vector<Violation> violations;
  for (const auto &input : inputs) {
    const fs::path p(input);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto &entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file() && entry.path().extension() == ".lmdemb" &&
            parse_split(entry.path().parent_path().filename().string()))
          found.push_back(entry.path());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      violations.push_back({input, "io", input + ": no such file or directory", {}});
    }
  }

  struct Loaded {
    std::string path;
    std::string model;
    Split split;
    std::uint32_t seq_len;
    std::size_t n;
    std::string corpus;
  };
  std::vector<Loaded> loaded;
  for (const auto &file : files) {
    try {
      const auto ds = read_dataset(file);
      ds.validate();
      loaded.push_back({file.string(), ds.model_name, ds.split, ds.seq_len, ds.n(), ds.corpus});
    } catch (const NonFiniteError &e) {
      violations.push_back({file.string(), e.kind(), e.what(), e.row()});
    } catch (const Error &e) {
      violations.push_back({file.string(), e.kind(), e.what(), {}});
    } catch (const std::exception &e) {
      violations.push_back({file.string(), "io", e.what(), {}});
    }
  }

  std::map<std::pair<Split, std::uint32_t>, std::vector<const Loaded *>> groups;
  for (const auto &l : loaded)
    groups[{l.split, l.seq_len}].push_back(&l);
  for (const auto &[key, members] : groups) {
    const auto *ref = members.front();
    std::string corpus;
    for (const auto *m : members)
      if (corpus.empty())
        corpus = m->corpus;
    for (const auto *m : members) {
      if (!m->corpus.empty() && m->corpus != corpus)
        violations.push_back({m->path, "alignment",
                              m->path + " has corpus '" + m->corpus + "' but the group uses '" +
                                  corpus + "' (split " + std::string(to_string(key.first)) +
                                  ", T=" + std::to_string(key.second) + ")",
                              {}});
      if (m->n != ref->n)
        violations.push_back({m->path, "alignment",
                              m->path + " has n=" + std::to_string(m->n) + " but " +
                                  ref->path + " has n=" + std::to_string(ref->n) + " (split " +
                                  std::string(to_string(key.first)) + ", T=" +
                                  std::to_string(key.second) + ")",
                              {}});
    }
  }

  ordered_json j;
  j["files_checked"] = files.size();
  j["valid"] = violations.empty();
  ordered_json vs = ordered_json::array();
  for (const auto &v : violations) {
    ordered_json e = {{"path", v.path}, {"kind", v.kind}, {"message", v.message}};
    if (v.row)
      e["row"] = *v.row;
    vs.push_back(std::move(e));
  }
  j["violations"] = std::move(vs);
  out << j.dump(2) << "\n";
  return violations.empty() ? kExitOk : kExitValidation;
}

// ---- synth -----------------------------------------------------------------

struct SynthOptions {
  std::string rule = "exact";
  std::uint64_t seed = 0;
  std::size_t n_train = 1000;
  std::size_t n_validation = 0;
  std::size_t n_test = 200;
  std::vector<std::size_t> dims = {4, 4};
  std::size_t target_dim = 0;
  double sigma = 0.0;
  double expected_r2 = 0.0;
  std::size_t latent_rank = 0;
  double mean_scale = 1.0;
  std::uint32_t seq_len = 16;
  std::string basis_prefix = "basis";
  std::string target_name = "target";
};

int cmd_synth(const GlobalOptions &g, const SynthOptions &o, std::ostream &out) {
  SynthSpec spec;
  spec.seed = o.seed;
  spec.dims = o.dims;
  spec.target_dim = o.target_dim;
  spec.mean_scale = o.mean_scale;
  spec.seq_len = o.seq_len;
  spec.basis_prefix = o.basis_prefix;
  spec.target_name = o.target_name;
  if (o.latent_rank > 0)
    spec.latent_rank = o.latent_rank;
  if (o.rule == "exact") {
    spec.rule = TargetRule::exact_combination;
  } else if (o.rule == "noisy") {
    spec.rule = TargetRule::noisy_combination;
  } else if (o.rule == "independent") {
    spec.rule = TargetRule::independent;
  } else if (o.rule == "zero") {
    spec.rule = TargetRule::zero;
  } else if (o.rule.rfind("duplicate:", 0) == 0) {
    spec.rule = TargetRule::duplicate_of;
    try {
      spec.duplicate_index = std::stoul(o.rule.substr(10));
    } catch (const std::exception &) {
      throw ConfigError("bad duplicate index in rule '" + o.rule + "'");
    }
  } else {
    throw ConfigError("unknown rule '" + o.rule + "'");
  }
  spec.noise_sigma = o.sigma;
  if (o.expected_r2 > 0.0) {
    if (spec.rule != TargetRule::noisy_combination)
      throw ConfigError("--expected-r2 requires --rule noisy");
    spec.noise_sigma = sigma_for_r2(spec, o.expected_r2);
  }

  const fs::path root(g.root);
  std::size_t offset = 0;
  const GroundTruth truth = make_truth(spec);
  const std::vector<std::pair<Split, std::size_t>> splits = {
      {Split::train, o.n_train}, {Split::validation, o.n_validation}, {Split::test, o.n_test}};
  ManifestInfo info;
  info.checkpoint = "synthetic";
  info.corpus = "synth:seed=" + std::to_string(o.seed);
  info.created["generator"] = "SplitMix64-CTR";
  info.created["rule"] = std::string(to_string(spec.rule));
  for (const auto &[split, count] : splits) {
    if (count == 0)
      continue;
    spec.split = split;
    spec.n = count;
    spec.row_offset = offset;
    offset += count;
    const auto result = generate(spec);
    for (const auto &b : result.bases)
      write_dataset(b, dataset_path(root, b.model_name, split, o.seq_len), info);
    write_dataset(result.target, dataset_path(root, result.target.model_name, split, o.seq_len),
                  info);
  }

  LmdSolution as_solution;
  as_solution.W = truth.W;
  as_solution.bias = truth.b;
  as_solution.block_widths = spec.dims;
  as_solution.mode = SolverMode::full_rank;
  SolutionMeta meta;
  meta.target = spec.target_name;
  for (std::size_t i = 0; i < spec.dims.size(); ++i)
    meta.basis.push_back(spec.basis_prefix + std::to_string(i));
  meta.seq_len = o.seq_len;
  meta.n_train = o.n_train;
  const auto truth_prefix = root / "_truth" / ("T" + std::to_string(o.seq_len));
  write_solution(as_solution, meta, truth_prefix);

  ordered_json j;
  j["root"] = root.string();
  j["seq_len"] = o.seq_len;
  j["rule"] = std::string(to_string(spec.rule));
  j["noise_sigma"] = spec.noise_sigma;
  j["signal_variance"] = truth.signal_variance;
  j["expected_r2"] = truth.expected_r2 ? ordered_json(*truth.expected_r2) : ordered_json(nullptr);
  j["truth"] = truth_prefix.string();
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---- fit -------------------------------------------------------------------

int cmd_fit(const GlobalOptions &g, const std::string &target,
            const std::vector<std::string> &bases, std::uint32_t seq_len, std::ostream &out) {
  const auto config = solver_config(g);
  const auto eval = eval_split(g);
  const auto fmt = formats(g);

  const auto train_target = load(g, target, Split::train, seq_len);
  std::vector<EmbeddingDataset> train_bases;
  for (const auto &b : bases)
    train_bases.push_back(load(g, b, Split::train, seq_len));
  std::vector<const EmbeddingDataset *> train_ptrs;
  for (const auto &b : train_bases)
    train_ptrs.push_back(&b);

  const auto solution = fit(train_target, train_ptrs, config);
  const auto train_report = evaluate_r2(solution, train_target, train_ptrs, true);

  std::optional<FitReport> eval_report;
  if (eval != Split::train) {
    const auto eval_target = load(g, target, eval, seq_len);
    std::vector<EmbeddingDataset> eval_bases;
    for (const auto &b : bases)
      eval_bases.push_back(load(g, b, eval, seq_len));
    std::vector<const EmbeddingDataset *> eval_ptrs;
    for (const auto &b : eval_bases)
      eval_ptrs.push_back(&b);
    eval_report = evaluate_r2(solution, eval_target, eval_ptrs, false);
  } else {
    eval_report = train_report;
  }

  const fs::path dir(g.out);
  SolutionMeta meta{target, bases, seq_len, train_target.n()};
  write_solution(solution, meta, dir / "solution");

  ordered_json j;
  j["train"] = ordered_json::parse(to_json(train_report));
  j["eval"] = ordered_json::parse(to_json(*eval_report));
  j["solver"] = {{"mode", std::string(to_string(solution.mode))},
                 {"lambda_used", solution.lambda_used},
                 {"eig_floor", solution.eig_floor},
                 {"rank_deficient", solution.rank_deficient},
                 {"effective_rank", solution.effective_rank}};
  if (fmt.json)
    write_text(dir / "fit_report.json", j.dump(2) + "\n");
  if (fmt.csv) {
    std::string csv = "split,n_eval,ssr,sst,r2\n";
    for (const FitReport *r : std::array<const FitReport *, 2>{&train_report, &*eval_report})
      csv += std::string(to_string(r->split)) + "," + std::to_string(r->n_eval) + "," +
             format_double(r->ssr) + "," + format_double(r->sst) + "," +
             format_double(r->r2) + "\n";
    write_text(dir / "fit_report.csv", csv);
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---- analyses --------------------------------------------------------------

std::size_t successful_cells(const CorrelationReport &report) {
  std::size_t cells = 0;
  if (report.pairwise)
    cells = report.models.size() * (report.models.size() - 1);
  else if (report.group)
    cells = report.models.size();
  return cells - std::min(cells, report.errors.size());
}

int cmd_correlation(const GlobalOptions &g, bool pairwise, const std::vector<std::string> &models,
                    std::uint32_t seq_len, std::ostream &out) {
  const auto config = solver_config(g);
  const auto eval = eval_split(g);
  const auto fmt = formats(g);
  const auto data = load_models(g, models, seq_len, eval);

  const fs::path dir(g.out);
  DirectoryCellStore store(dir / "cells", g.force);
  AnalysisOptions options{g.workers, &store};
  const auto report = pairwise ? pairwise_analysis(data, config, eval, options)
                               : group_analysis(data, config, eval, options);

  const std::string stem = pairwise ? "pairwise" : "group";
  if (fmt.json)
    write_text(dir / (stem + ".json"), to_json(report));
  if (fmt.csv) {
    if (pairwise) {
      write_text(dir / "pairwise_r2.csv", pairwise_r2_csv(report));
      write_text(dir / "pairwise_rho.csv", pairwise_rho_csv(report));
    } else {
      write_text(dir / "group.csv", group_csv(report));
    }
  }
  if (fmt.plotdata)
    write_text(dir / (stem + "_plot.json"), plot_data(report));

  ordered_json summary;
  summary["analysis"] = stem;
  summary["models"] = models;
  summary["cells_reused"] = store.reused();
  summary["errors"] = report.errors.size();
  if (report.group)
    summary["group_rho"] = std::isfinite(report.group->rho) ? ordered_json(report.group->rho)
                                                            : ordered_json(nullptr);
  out << summary.dump(2) << "\n";
  return successful_cells(report) > 0 ? kExitOk : kExitFailure;
}

int cmd_sweep(const GlobalOptions &g, const std::vector<std::string> &models,
              const std::vector<std::uint32_t> &seq_lens, std::ostream &out) {
  const auto config = solver_config(g);
  const auto eval = eval_split(g);
  const auto fmt = formats(g);
  std::map<std::uint32_t, std::vector<ModelEmbeddings>> groups;
  for (auto t : seq_lens)
    groups.emplace(t, load_models(g, models, t, eval));

  const fs::path dir(g.out);
  DirectoryCellStore store(dir / "cells", g.force);
  AnalysisOptions options{g.workers, &store};
  const auto report = length_sweep(groups, config, eval, options);

  if (fmt.json)
    write_text(dir / "sweep.json", to_json(report));
  if (fmt.csv)
    write_text(dir / "sweep.csv", sweep_csv(report));
  if (fmt.plotdata)
    write_text(dir / "sweep_plot.json", plot_data(report));

  std::size_t ok = 0;
  ordered_json summary;
  summary["analysis"] = "sweep";
  summary["seq_lens"] = report.seq_lens;
  ordered_json rho = ordered_json::array();
  for (auto t : report.seq_lens) {
    const double v = report.group_rho(t);
    rho.push_back(std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr));
  }
  summary["group_rho"] = std::move(rho);
  summary["cells_reused"] = store.reused();
  summary["failures"] = report.failures.size();
  for (const auto &[t, rep] : report.by_seq_len)
    ok += successful_cells(rep);
  out << summary.dump(2) << "\n";
  return ok > 0 ? kExitOk : kExitFailure;
}

unsigned default_workers() {
  if (const char *env = std::getenv("LMDKIT_WORKERS")) {
    try {
      const auto v = std::stoul(env);
      if (v > 0)
        return static_cast<unsigned>(v);
    } catch (const std::exception &) {
    }
  }
  return 1;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"lmdkit: linear dependency analysis of embedding models"};
  app.require_subcommand(1);

  GlobalOptions g;
  g.workers = default_workers();
  app.add_option("--root", g.root, "Dataset root (<root>/<model>/<split>/T<len>.lmdemb)");
  app.add_option("--solver", g.solver, "full-rank, min-norm, ridge or ridge-adaptive")
      ->capture_default_str();
  app.add_option("--lambda", g.lambda, "Fixed ridge strength")->capture_default_str();
  app.add_option("--eig-target", g.eig_target, "Adaptive ridge eigenvalue floor")
      ->capture_default_str();
  app.add_option("--pinv-cutoff", g.pinv_cutoff, "Relative pseudoinverse cutoff")
      ->capture_default_str();
  app.add_flag("--center,!--no-center", g.center, "Fit a bias term (default on)");
  app.add_option("--eval-split", g.eval_split, "train, validation or test")
      ->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--format", g.formats, "json,csv,plotdata")->delimiter(',');
  app.add_option("--workers", g.workers, "Worker threads (env LMDKIT_WORKERS)");
  app.add_flag("--force", g.force, "Recompute cached analysis cells");
  app.add_flag("--l2-normalize", g.l2_normalize, "Scale embeddings to unit norm on load");

  std::vector<std::string> validate_paths;
  auto *validate = app.add_subcommand("validate", "Check embedding files and alignment");
  validate->add_option("paths", validate_paths, "Files or dataset roots")->required();

  SynthOptions so;
  auto *synth = app.add_subcommand("synth", "Write a synthetic dataset family under --root");
  synth->add_option("--rule", so.rule, "exact, noisy, independent, zero or duplicate:<i>");
  synth->add_option("--seed", so.seed);
  synth->add_option("--n-train", so.n_train);
  synth->add_option("--n-validation", so.n_validation);
  synth->add_option("--n-test", so.n_test);
  synth->add_option("--dims", so.dims, "Basis dimensions")->delimiter(',');
  synth->add_option("--target-dim", so.target_dim);
  synth->add_option("--sigma", so.sigma, "Noise standard deviation");
  synth->add_option("--expected-r2", so.expected_r2, "Pick sigma for this expected R^2");
  synth->add_option("--latent-rank", so.latent_rank);
  synth->add_option("--mean-scale", so.mean_scale);
  synth->add_option("--seq-len", so.seq_len);
  synth->add_option("--basis-prefix", so.basis_prefix);
  synth->add_option("--target-name", so.target_name);

  std::string fit_target;
  std::vector<std::string> fit_bases;
  std::uint32_t seq_len = 16;
  auto *fit_cmd = app.add_subcommand("fit", "Fit one target on a list of bases");
  fit_cmd->add_option("--target", fit_target)->required();
  fit_cmd->add_option("--bases", fit_bases)->delimiter(',')->required();
  fit_cmd->add_option("--seq-len", seq_len);

  std::vector<std::string> models;
  auto *pairwise = app.add_subcommand("pairwise", "Pairwise R^2 and rho matrices");
  pairwise->add_option("--models", models)->delimiter(',')->required();
  pairwise->add_option("--seq-len", seq_len);
  auto *group = app.add_subcommand("group", "Leave-one-out R^2 and group rho");
  group->add_option("--models", models)->delimiter(',')->required();
  group->add_option("--seq-len", seq_len);
  std::vector<std::uint32_t> seq_lens;
  auto *sweep = app.add_subcommand("sweep", "Group analysis across sequence lengths");
  sweep->add_option("--models", models)->delimiter(',')->required();
  sweep->add_option("--seq-lens", seq_lens)->delimiter(',')->required();

  for (auto *sub : {validate, synth, fit_cmd, pairwise, group, sweep})
    sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError &e) {
    app.exit(e, out, err);
    err << error_json("usage", e.what()) << "\n";
    return kExitValidation;
  }

  try {
    if (*validate)
      return cmd_validate(validate_paths, out);
    if (*synth)
      return cmd_synth(g, so, out);
    if (*fit_cmd)
      return cmd_fit(g, fit_target, fit_bases, seq_len, out);
    if (*pairwise)
      return cmd_correlation(g, true, models, seq_len, out);
    if (*group)
      return cmd_correlation(g, false, models, seq_len, out);
    if (*sweep)
      return cmd_sweep(g, models, seq_lens, out);
  } catch (const Error &e) {
    err << error_json(e.kind(), e.what()) << "\n";
    return e.is_validation() ? kExitValidation : kExitFailure;
  } catch (const fs::filesystem_error &e) {
    err << error_json("io", e.what()) << "\n";
    return kExitValidation;
  } catch (const std::exception &e) {
    err << error_json("internal", e.what()) << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

} // namespace lmd::cli
