// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fail.

#include "lmd/metrics.hpp"
#include "lmd/moments.hpp"
#include "lmd/solver.hpp"
#include "lmd/synth.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>

using namespace lmd;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void check(const char *id, const char *name, const std::function<Outcome()> &body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception &e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (!o.pass)
    ++failures;
  std::printf("%s  %-3s %-34s %s  [%.2fs]\n", o.pass ? "PASS" : "FAIL", id, name,
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char *f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::vector<const EmbeddingDataset *> pointers(const std::vector<EmbeddingDataset> &v) {
  std::vector<const EmbeddingDataset *> out;
  for (const auto &d : v)
    out.push_back(&d);
  return out;
}

SolverConfig solver(SolverMode mode) {
  SolverConfig c;
  c.mode = mode;
  c.lambda = 0.0;
  return c;
}

double in_sample_r2(const EmbeddingDataset &target, const std::vector<const EmbeddingDataset *> &bases,
                    SolverMode mode = SolverMode::min_norm) {
  return evaluate_r2(fit(target, bases, solver(mode)), target, bases, true).r2;
}

SynthSpec noisy_spec(std::uint64_t seed, std::size_t n, std::vector<std::size_t> dims,
                     std::size_t du, double sigma) {
  SynthSpec s;
  s.seed = seed;
  s.n = n;
  s.dims = std::move(dims);
  s.target_dim = du;
  s.rule = TargetRule::noisy_combination;
  s.noise_sigma = sigma;
  return s;
}

MomentSummary centered_moments(const EmbeddingDataset &target,
                               const std::vector<const EmbeddingDataset *> &bases) {
  return accumulate(AlignedView(bases, &target)).finalize(true);
}

ModelEmbeddings as_model(const EmbeddingDataset &train, const EmbeddingDataset *test = nullptr) {
  ModelEmbeddings m;
  m.name = train.model_name;
  m.splits.emplace(Split::train, train);
  if (test)
    m.splits.emplace(Split::test, *test);
  return m;
}

// ---------------------------------------------------------------------------

Outcome exact_dependence() {
  constexpr double kR2Tol = 1e-9, kWTol = 1e-8, kSeconds = 5.0;
  const auto start = Clock::now();
  SynthSpec spec;
  spec.seed = 101;
  spec.n = 10000;
  spec.dims = {8, 8, 8};
  spec.target_dim = 8;
  spec.rule = TargetRule::exact_combination;
  const auto data = generate(spec);
  const auto bases = pointers(data.bases);
  const auto sol = fit(data.target, bases, solver(SolverMode::min_norm));
  const double r2 = evaluate_r2(sol, data.target, bases, true).r2;
  const double w_err = (sol.W - data.truth.W).norm() / data.truth.W.norm();
  const double secs = seconds_since(start);
  return {r2 >= 1.0 - kR2Tol && w_err <= kWTol && secs < kSeconds,
          fmt("1-R2=%.2e (<=1e-9) relW=%.2e (<=1e-8) t=%.2fs (<5s)", 1.0 - r2, w_err, secs)};
}

Outcome pearson_reduction() {
  constexpr double kTol = 1e-12;
  const auto data = generate(noisy_spec(102, 5000, {1}, 1, 0.8));
  const auto &u = data.target;
  const auto &v = data.bases[0];
  // Two-pass sample correlation.
  const auto x = u.values.col(0), y = v.values.col(0);
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum(), syy = (y.array() - my).square().sum();
  const double r_sq = sxy * sxy / (sxx * syy);

  const double uv = in_sample_r2(u, {&v});
  const double vu = in_sample_r2(v, {&u});
  const std::vector<ModelEmbeddings> models = {as_model(u), as_model(v)};
  const auto rep = pairwise_analysis(models, solver(SolverMode::min_norm), Split::train);
  const double rho = rep.pairwise->rho(0, 1);
  const double worst =
      std::max({std::abs(uv - r_sq), std::abs(vu - r_sq), std::abs(rho - r_sq)});
  return {worst <= kTol, fmt("r^2=%.6f max|diff|=%.2e (<=1e-12)", r_sq, worst)};
}

Outcome gradient_check() {
  constexpr double kTol = 1e-6, kStep = 1e-3;
  const auto data = generate(noisy_spec(103, 2000, {4, 6}, 3, 0.5));
  const auto moments = accumulate(AlignedView(pointers(data.bases), &data.target)).finalize(false);
  std::mt19937_64 gen(103);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int point = 0; point < 5; ++point) {
    Matrix W(3, 10);
    for (Eigen::Index i = 0; i < W.size(); ++i)
      W(i) = normal(gen);
    const auto g = loss_and_gradient(W, moments).gradient;
    for (Eigen::Index i = 0; i < W.size(); ++i) {
      Matrix plus = W, minus = W;
      plus(i) += kStep;
      minus(i) -= kStep;
      const double fd = (loss_and_gradient(plus, moments).loss -
                         loss_and_gradient(minus, moments).loss) /
                        (2 * kStep);
      worst = std::max(worst, std::abs(fd - g(i)) / std::max(std::abs(g(i)), std::abs(fd)));
    }
  }
  return {worst < kTol, fmt("max per-entry rel err=%.2e (<1e-6)", worst)};
}

Outcome min_norm_duplicate() {
  constexpr double kResidualTol = 1e-9, kNormalTol = 1e-8;
  constexpr int kAlternatives = 20;
  const auto data = generate(noisy_spec(104, 4000, {6}, 4, 0.7));
  const auto &base = data.bases[0];
  auto copy = base;
  copy.model_name = "copy";

  const std::vector<const EmbeddingDataset *> one_base = {&base};
  const auto single = fit(data.target, one_base, solver(SolverMode::min_norm));
  const std::vector<const EmbeddingDataset *> dup_bases = {&base, &copy};
  const auto moments = centered_moments(data.target, dup_bases);
  const auto dup = solve(moments, solver(SolverMode::min_norm));

  const double ssr_single = evaluate_r2(single, data.target, one_base, true).ssr;
  const double ssr_dup = evaluate_r2(dup, data.target, dup_bases, true).ssr;
  const double residual_gap = std::abs(ssr_single - ssr_dup);
  const double normal_eq = (dup.W * moments.zz - moments.uz).norm() / moments.uz.norm();

  std::mt19937_64 gen(104);
  std::normal_distribution<double> normal;
  int not_larger = 0;
  for (int t = 0; t < kAlternatives; ++t) {
    Matrix S(4, 6);
    for (Eigen::Index i = 0; i < S.size(); ++i)
      S(i) = normal(gen);
    Matrix alt(4, 12);
    alt << dup.block(0) + S, dup.block(1) - S;
    if (dup.W.norm() <= alt.norm())
      ++not_larger;
  }
  return {residual_gap <= kResidualTol && normal_eq <= kNormalTol && not_larger == kAlternatives,
          fmt("|dSSR|=%.2e (<=1e-9) normal-eq=%.2e (<=1e-8) minimal vs %.0f/20", residual_gap,
              normal_eq, not_larger)};
}

Outcome ridge_limit() {
  constexpr double kFinalTol = 1e-6;
  const auto data = generate(noisy_spec(105, 3000, {5, 5}, 4, 0.5));
  const auto moments = centered_moments(data.target, pointers(data.bases));
  const auto w0 = solve(moments, solver(SolverMode::full_rank)).W;
  double prev = INFINITY, last = 0.0;
  bool decreasing = true;
  for (double lambda : {1e-2, 1e-4, 1e-6, 1e-8, 1e-10}) {
    auto cfg = solver(SolverMode::ridge_fixed);
    cfg.lambda = lambda;
    last = (solve(moments, cfg).W - w0).norm();
    decreasing = decreasing && last < prev;
    prev = last;
  }
  const double rel = last / w0.norm();
  return {decreasing && rel < kFinalTol,
          fmt("strictly decreasing=%.0f final rel=%.2e (<1e-6)", decreasing, rel)};
}

Outcome adaptive_floor() {
  constexpr double kTarget = 1e-6, kRelTol = 1e-6;
  auto spec = noisy_spec(106, 3000, {6, 6}, 4, 0.3);
  spec.latent_rank = 5;
  const auto data = generate(spec);
  const auto moments = centered_moments(data.target, pointers(data.bases));
  auto cfg = solver(SolverMode::ridge_adaptive);
  cfg.eig_target = kTarget;
  const auto sol = solve(moments, cfg);
  Matrix system = moments.zz;
  system.diagonal().array() += sol.lambda_used;
  const double floor = Eigen::SelfAdjointEigenSolver<Matrix>(system).eigenvalues()(0);
  const double rel = std::abs(floor - kTarget) / kTarget;
  return {sol.rank_deficient && rel <= kRelTol,
          fmt("min eig=%.9e rel err=%.2e (<=1e-6) lambda=%.3e", floor, rel, sol.lambda_used)};
}

Outcome monotonicity() {
  constexpr double kTol = 1e-10;
  const auto data = generate(noisy_spec(107, 3000, {3, 3, 3, 3, 3, 3}, 4, 1.0));
  std::mt19937_64 gen(107);
  std::vector<std::size_t> order(data.bases.size());
  std::iota(order.begin(), order.end(), 0);
  double worst_drop = 0.0;
  for (int perm = 0; perm < 5; ++perm) {
    std::shuffle(order.begin(), order.end(), gen);
    std::vector<const EmbeddingDataset *> bases;
    double prev = -INFINITY;
    for (auto idx : order) {
      bases.push_back(&data.bases[idx]);
      const double r2 = in_sample_r2(data.target, bases);
      if (std::isfinite(prev))
        worst_drop = std::max(worst_drop, prev - r2);
      prev = r2;
    }
  }
  return {worst_drop <= kTol, fmt("largest decrease=%.2e (<=1e-10)", worst_drop)};
}

Outcome metric_structure() {
  SynthSpec spec = noisy_spec(108, 2000, {4, 5, 3}, 4, 0.8);
  const auto train = generate(spec);
  spec.row_offset = spec.n;
  spec.n = 800;
  spec.split = Split::test;
  const auto test = generate(spec);
  std::vector<ModelEmbeddings> models;
  for (std::size_t i = 0; i < train.bases.size(); ++i)
    models.push_back(as_model(train.bases[i], &test.bases[i]));
  models.push_back(as_model(train.target, &test.target));
  const auto cfg = solver(SolverMode::min_norm);

  const auto pw = pairwise_analysis(models, cfg, Split::test);
  const Matrix &rho = pw.pairwise->rho;
  const bool symmetric = rho == rho.transpose();
  const bool unit = rho.diagonal() == Vector::Ones(rho.rows());

  const auto gr = group_analysis(models, cfg, Split::test);
  double sum = 0.0;
  for (double v : gr.group->r2)
    sum += v;
  const bool mean_exact = gr.group->rho == sum / static_cast<double>(gr.group->r2.size());

  const std::vector<ModelEmbeddings> two(models.begin(), models.begin() + 2);
  const auto pw2 = pairwise_analysis(two, cfg, Split::test);
  const auto gr2 = group_analysis(two, cfg, Split::test);
  const bool reduces =
      gr2.group->r2[0] == pw2.pairwise->r2(0, 1) && gr2.group->r2[1] == pw2.pairwise->r2(1, 0);
  return {symmetric && unit && mean_exact && reduces,
          fmt("symmetric=%.0f unit-diag=%.0f mean-exact=%.0f", symmetric, unit, mean_exact) +
              (reduces ? " n2-reduction=1" : " n2-reduction=0")};
}

Outcome invariance_suite() {
  constexpr double kTransformTol = 1e-9, kPermTol = 1e-12;
  SynthSpec spec = noisy_spec(109, 3000, {4, 5}, 4, 0.6);
  const auto train = generate(spec);
  spec.row_offset = spec.n;
  spec.n = 1000;
  spec.split = Split::test;
  const auto test = generate(spec);
  const auto bases = pointers(train.bases);
  const double base_r2 = in_sample_r2(train.target, bases);

  double worst_transform = 0.0;
  for (double c : {1e-3, 7.0, -2.0}) {
    const auto scaled = perturb(train.target, Scale{c});
    worst_transform = std::max(worst_transform, std::abs(in_sample_r2(scaled, bases) - base_r2));
  }
  std::mt19937_64 gen(109);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < train.bases.size(); ++i) {
    const auto d = static_cast<Eigen::Index>(train.bases[i].d());
    Matrix A(d, d);
    for (Eigen::Index k = 0; k < A.size(); ++k)
      A(k) = normal(gen);
    Vector b(d);
    for (Eigen::Index k = 0; k < d; ++k)
      b(k) = normal(gen);
    auto moved = train.bases;
    moved[i] = perturb(train.bases[i], Affine{A, b});
    worst_transform = std::max(worst_transform,
                               std::abs(in_sample_r2(train.target, pointers(moved)) - base_r2));
  }

  // Same row permutation on every train dataset; reports on the test split.
  std::vector<std::size_t> order(train.target.n());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), gen);
  const PermuteRows perm{order};
  std::vector<ModelEmbeddings> plain, permuted;
  for (std::size_t i = 0; i < train.bases.size(); ++i) {
    plain.push_back(as_model(train.bases[i], &test.bases[i]));
    permuted.push_back(as_model(perturb(train.bases[i], perm), &test.bases[i]));
  }
  plain.push_back(as_model(train.target, &test.target));
  permuted.push_back(as_model(perturb(train.target, perm), &test.target));
  const auto cfg = solver(SolverMode::min_norm);
  const auto g0 = group_analysis(plain, cfg, Split::test);
  const auto g1 = group_analysis(permuted, cfg, Split::test);
  const auto p0 = pairwise_analysis(plain, cfg, Split::test);
  const auto p1 = pairwise_analysis(permuted, cfg, Split::test);
  double worst_perm = std::abs(g0.group->rho - g1.group->rho);
  for (std::size_t i = 0; i < g0.group->r2.size(); ++i)
    worst_perm = std::max(worst_perm, std::abs(g0.group->r2[i] - g1.group->r2[i]));
  worst_perm = std::max(worst_perm, (p0.pairwise->r2 - p1.pairwise->r2).cwiseAbs().maxCoeff());

  return {worst_transform < kTransformTol && worst_perm < kPermTol,
          fmt("scale/affine max dR2=%.2e (<1e-9) permutation max d=%.2e (<1e-12)",
              worst_transform, worst_perm)};
}

Outcome shard_merge() {
  constexpr double kTol = 1e-12;
  const auto data = generate(noisy_spec(110, 6001, {5, 4}, 3, 0.9));
  const auto bases = pointers(data.bases);
  const AlignedView view(bases, &data.target);
  const auto widths = view.block_widths();

  MomentAccumulator whole(data.target.d(), widths);
  whole.observe_rows(data.target.values, view.stacked());
  const auto half = static_cast<Eigen::Index>(data.target.n() / 2);
  const auto rest = static_cast<Eigen::Index>(data.target.n()) - half;
  MomentAccumulator first(data.target.d(), widths), second(data.target.d(), widths);
  first.observe_rows(data.target.values.topRows(half), view.stacked().topRows(half));
  second.observe_rows(data.target.values.bottomRows(rest), view.stacked().bottomRows(rest));
  const auto merged = merge(first, second);

  const auto cfg = solver(SolverMode::min_norm);
  const double r_whole =
      evaluate_r2(solve(whole.finalize(true), cfg), data.target, bases, true).r2;
  const double r_merged =
      evaluate_r2(solve(merged.finalize(true), cfg), data.target, bases, true).r2;
  const double gap = std::abs(r_whole - r_merged);
  return {gap <= kTol, fmt("R2=%.15f |diff|=%.2e (<=1e-12)", r_whole, gap)};
}

Outcome noisy_calibration() {
  constexpr double kExpected = 0.9, kBand = 0.01, kSeconds = 30.0;
  const auto start = Clock::now();
  auto spec = noisy_spec(111, 50000, {8, 8}, 8, 0.0);
  spec.noise_sigma = sigma_for_r2(spec, kExpected);
  const auto data = generate(spec);
  const double analytic = *data.truth.expected_r2;
  const double r2 = in_sample_r2(data.target, pointers(data.bases));
  const double secs = seconds_since(start);
  return {std::abs(r2 - analytic) <= kBand && secs < kSeconds,
          fmt("analytic=%.6f measured=%.6f (+-0.01) t=%.2fs (<30s)", analytic, r2, secs)};
}

} // namespace

int main() {
  check("1", "exact-dependence oracle", exact_dependence);
  check("2", "scalar Pearson reduction", pearson_reduction);
  check("3", "gradient check", gradient_check);
  check("4", "min-norm on duplicated basis", min_norm_duplicate);
  check("5", "ridge limit", ridge_limit);
  check("6", "adaptive ridge floor", adaptive_floor);
  check("7", "monotonicity in bases", monotonicity);
  check("8", "metric structure", metric_structure);
  check("9", "invariance suite", invariance_suite);
  check("10", "shard merge equivalence", shard_merge);
  check("11", "noisy R^2 calibration", noisy_calibration);
  std::printf("%s: %d failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
