#include "lmd/reports.hpp"

#include "byte_io.hpp"
#include "lmd/error.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <limits>

namespace lmd {

using nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ordered_json number(double v) {
  if (std::isfinite(v))
    return v;
  return nullptr;
}

double number_from(const nlohmann::json &j) {
  return j.is_null() ? kNaN : j.get<double>();
}

ordered_json matrix_json(const Matrix &m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      row.push_back(number(m(i, j)));
    rows.push_back(std::move(row));
  }
  return rows;
}

ordered_json fit_json(const FitReport &r) {
  ordered_json j;
  j["target"] = r.target;
  j["basis"] = r.basis;
  j["split"] = std::string(to_string(r.split));
  j["ssr"] = number(r.ssr);
  j["sst"] = number(r.sst);
  j["r2"] = number(r.r2);
  j["n_eval"] = r.n_eval;
  j["in_sample"] = r.in_sample;
  return j;
}

FitReport fit_from(const nlohmann::json &j) {
  FitReport r;
  r.target = j.at("target").get<std::string>();
  r.basis = j.at("basis").get<std::vector<std::string>>();
  r.split = parse_split(j.at("split").get<std::string>()).value_or(Split::train);
  r.ssr = number_from(j.at("ssr"));
  r.sst = number_from(j.at("sst"));
  r.r2 = number_from(j.at("r2"));
  r.n_eval = j.at("n_eval").get<std::uint64_t>();
  r.in_sample = j.at("in_sample").get<bool>();
  return r;
}

nlohmann::json parse(const std::string &text, const char *what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"')
      out += '"';
    out += c;
  }
  return out + "\"";
}

std::string matrix_csv(const std::vector<std::string> &names, const Matrix &m) {
  std::string out;
  for (const auto &name : names)
    out += "," + csv_field(name);
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += csv_field(names[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

ordered_json errors_json(const CorrelationReport &report) {
  ordered_json errs = ordered_json::array();
  for (const auto &e : report.errors)
    errs.push_back({{"target", e.target}, {"basis", e.basis}, {"kind", e.kind},
                    {"message", e.message}});
  return errs;
}

ordered_json correlation_json(const CorrelationReport &report) {
  ordered_json j;
  j["models"] = report.models;
  j["seq_len"] = report.seq_len;
  j["eval_split"] = std::string(to_string(report.eval_split));
  j["in_sample"] = report.in_sample;
  if (report.pairwise) {
    j["pairwise_r2"] = matrix_json(report.pairwise->r2);
    j["pairwise_rho"] = matrix_json(report.pairwise->rho);
  }
  if (report.group) {
    ordered_json r2 = ordered_json::array();
    for (double v : report.group->r2)
      r2.push_back(number(v));
    j["group_r2"] = std::move(r2);
    j["group_rho"] = number(report.group->rho);
  }
  j["errors"] = errors_json(report);
  j["failed_rows"] = report.failed_rows;
  return j;
}

Matrix sweep_matrix(const SweepReport &report) {
  Matrix m(static_cast<Eigen::Index>(report.models.size()) + 1,
           static_cast<Eigen::Index>(report.seq_lens.size()));
  for (std::size_t t = 0; t < report.seq_lens.size(); ++t) {
    const auto col = static_cast<Eigen::Index>(t);
    for (std::size_t i = 0; i < report.models.size(); ++i)
      m(static_cast<Eigen::Index>(i), col) = report.r2(report.models[i], report.seq_lens[t]);
    m(m.rows() - 1, col) = report.group_rho(report.seq_lens[t]);
  }
  return m;
}

SweepReport single_length(const CorrelationReport &report) {
  SweepReport sweep;
  sweep.seq_lens = {report.seq_len};
  sweep.models = report.models;
  sweep.by_seq_len.emplace(report.seq_len, report);
  return sweep;
}

} // namespace

std::string format_double(double value) {
  if (std::isnan(value))
    return "NaN";
  if (std::isinf(value))
    return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

std::string to_json(const FitReport &report) { return fit_json(report).dump(2) + "\n"; }

FitReport fit_report_from_json(const std::string &text) {
  try {
    return fit_from(parse(text, "fit report"));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed fit report: ") + e.what());
  }
}

std::string to_json(const CellResult &result) {
  ordered_json j;
  if (result.report)
    j["report"] = fit_json(*result.report);
  else
    j["error"] = {{"kind", result.error_kind}, {"message", result.error}};
  return j.dump(2) + "\n";
}

CellResult cell_result_from_json(const std::string &text) {
  const auto j = parse(text, "cell result");
  CellResult r;
  try {
    if (j.contains("report")) {
      r.report = fit_from(j.at("report"));
    } else {
      r.error_kind = j.at("error").at("kind").get<std::string>();
      r.error = j.at("error").at("message").get<std::string>();
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed cell result: ") + e.what());
  }
  return r;
}

std::string to_json(const CorrelationReport &report) {
  return correlation_json(report).dump(2) + "\n";
}

std::string to_json(const SweepReport &report) {
  ordered_json j;
  j["models"] = report.models;
  j["seq_lens"] = report.seq_lens;
  ordered_json table = ordered_json::object();
  for (const auto &model : report.models) {
    ordered_json row = ordered_json::array();
    for (auto t : report.seq_lens)
      row.push_back(number(report.r2(model, t)));
    table[model] = std::move(row);
  }
  j["r2"] = std::move(table);
  ordered_json rho = ordered_json::array();
  for (auto t : report.seq_lens)
    rho.push_back(number(report.group_rho(t)));
  j["group_rho"] = std::move(rho);
  ordered_json per_t = ordered_json::object();
  for (const auto &[t, rep] : report.by_seq_len)
    per_t[std::to_string(t)] = correlation_json(rep);
  j["by_seq_len"] = std::move(per_t);
  ordered_json failures = ordered_json::object();
  for (const auto &[t, msg] : report.failures)
    failures[std::to_string(t)] = msg;
  j["failures"] = std::move(failures);
  return j.dump(2) + "\n";
}

std::string pairwise_r2_csv(const CorrelationReport &report) {
  if (!report.pairwise)
    throw ValidationError("report has no pairwise section");
  return matrix_csv(report.models, report.pairwise->r2);
}

std::string pairwise_rho_csv(const CorrelationReport &report) {
  if (!report.pairwise)
    throw ValidationError("report has no pairwise section");
  return matrix_csv(report.models, report.pairwise->rho);
}

std::string sweep_csv(const SweepReport &report) {
  const Matrix m = sweep_matrix(report);
  std::string out;
  for (auto t : report.seq_lens)
    out += ",T=" + std::to_string(t);
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const bool last = i == m.rows() - 1;
    out += last ? std::string("Group Corr") : csv_field(report.models[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

std::string group_csv(const CorrelationReport &report) {
  if (!report.group)
    throw ValidationError("report has no group section");
  return sweep_csv(single_length(report));
}

std::string plot_data(const CorrelationReport &report) {
  ordered_json j;
  j["labels"] = report.models;
  ordered_json panels = ordered_json::array();
  if (report.pairwise) {
    panels.push_back({{"name", "pairwise_r2"},
                      {"row_labels", report.models},
                      {"col_labels", report.models},
                      {"values", matrix_json(report.pairwise->r2)}});
    panels.push_back({{"name", "pairwise_rho"},
                      {"row_labels", report.models},
                      {"col_labels", report.models},
                      {"values", matrix_json(report.pairwise->rho)}});
  }
  if (report.group) {
    const auto sweep = single_length(report);
    auto rows = report.models;
    rows.push_back("Group Corr");
    panels.push_back({{"name", "group_r2"},
                      {"row_labels", rows},
                      {"col_labels", {"T=" + std::to_string(report.seq_len)}},
                      {"values", matrix_json(sweep_matrix(sweep))}});
  }
  j["panels"] = std::move(panels);
  return j.dump(2) + "\n";
}

std::string plot_data(const SweepReport &report) {
  ordered_json j;
  auto rows = report.models;
  rows.push_back("Group Corr");
  std::vector<std::string> cols;
  for (auto t : report.seq_lens)
    cols.push_back("T=" + std::to_string(t));
  j["labels"] = report.models;
  j["panels"] = ordered_json::array({{{"name", "group_r2"},
                                      {"row_labels", rows},
                                      {"col_labels", cols},
                                      {"values", matrix_json(sweep_matrix(report))}}});
  return j.dump(2) + "\n";
}

void write_solution(const LmdSolution &solution, const SolutionMeta &meta,
                    const std::filesystem::path &prefix) {
  auto bin = prefix;
  bin += ".lmdemb";
  auto json_path = prefix;
  json_path += ".json";
  write_matrix_file(bin, RowMatrix(solution.W), meta.seq_len);

  ordered_json j;
  j["target"] = meta.target;
  j["basis"] = meta.basis;
  j["block_widths"] = solution.block_widths;
  j["seq_len"] = meta.seq_len;
  j["n_train"] = meta.n_train;
  j["solver_mode"] = std::string(to_string(solution.mode));
  j["lambda_used"] = solution.lambda_used;
  j["eig_floor"] = number(solution.eig_floor);
  j["rank_deficient"] = solution.rank_deficient;
  j["effective_rank"] = solution.effective_rank;
  j["coefficients"] = bin.filename().string();
  if (solution.bias) {
    ordered_json b = ordered_json::array();
    for (Eigen::Index i = 0; i < solution.bias->size(); ++i)
      b.push_back((*solution.bias)(i));
    j["bias"] = std::move(b);
  } else {
    j["bias"] = nullptr;
  }
  detail::write_file_atomic(json_path, j.dump(2) + "\n");
}

StoredSolution read_solution(const std::filesystem::path &prefix) {
  auto json_path = prefix;
  json_path += ".json";
  const auto j = parse(detail::read_file(json_path), json_path.string().c_str());
  StoredSolution out;
  try {
    out.meta.target = j.at("target").get<std::string>();
    out.meta.basis = j.at("basis").get<std::vector<std::string>>();
    out.meta.seq_len = j.at("seq_len").get<std::uint32_t>();
    out.meta.n_train = j.at("n_train").get<std::uint64_t>();
    auto &s = out.solution;
    s.block_widths = j.at("block_widths").get<std::vector<std::size_t>>();
    s.mode = parse_solver_mode(j.at("solver_mode").get<std::string>())
                 .value_or(SolverMode::ridge_adaptive);
    s.lambda_used = j.at("lambda_used").get<double>();
    s.eig_floor = number_from(j.at("eig_floor"));
    s.rank_deficient = j.at("rank_deficient").get<bool>();
    s.effective_rank = j.at("effective_rank").get<std::size_t>();
    if (!j.at("bias").is_null()) {
      const auto b = j.at("bias").get<std::vector<double>>();
      s.bias = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    }
    const auto bin = json_path.parent_path() / j.at("coefficients").get<std::string>();
    EmbeddingReader reader(bin);
    s.W = reader.next_chunk(reader.header().n);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(json_path.string() + ": malformed solution metadata: " + e.what());
  }
  return out;
}

} // namespace lmd
