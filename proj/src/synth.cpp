#include "lmd/synth.hpp"

#include "lmd/error.hpp"
#include "lmd/rng.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numeric>

namespace lmd {

namespace {

// Stream identifiers are part of the reproducibility contract.
constexpr std::uint64_t kStreamW = 1;
constexpr std::uint64_t kStreamBias = 2;
constexpr std::uint64_t kStreamMeans = 3;
constexpr std::uint64_t kStreamLatentMap = 4;
constexpr std::uint64_t kStreamNoise = 5;
constexpr std::uint64_t kStreamIndependent = 6;
constexpr std::uint64_t kStreamLatent = 7;
constexpr std::uint64_t kStreamBasis = 100;

Matrix normal_matrix(const CounterRng &rng, Eigen::Index rows, Eigen::Index cols,
                     double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = scale * rng.normal(static_cast<std::uint64_t>(i * cols + j));
  return m;
}

struct BasisModel {
  Vector means;
  std::optional<Matrix> latent_map;

  [[nodiscard]] Matrix covariance(Eigen::Index kd) const {
    if (latent_map)
      return *latent_map * latent_map->transpose();
    return Matrix::Identity(kd, kd);
  }
};

BasisModel make_basis_model(const SynthSpec &spec) {
  const auto kd = static_cast<Eigen::Index>(spec.basis_dim());
  BasisModel model;
  model.means = normal_matrix(CounterRng(spec.seed, kStreamMeans), kd, 1, spec.mean_scale);
  if (spec.latent_rank) {
    const auto r = static_cast<Eigen::Index>(*spec.latent_rank);
    model.latent_map = normal_matrix(CounterRng(spec.seed, kStreamLatentMap), kd, r,
                                     1.0 / std::sqrt(static_cast<double>(r)));
  }
  return model;
}

} // namespace

std::string_view to_string(TargetRule rule) noexcept {
  switch (rule) {
  case TargetRule::exact_combination:
    return "exact_combination";
  case TargetRule::noisy_combination:
    return "noisy_combination";
  case TargetRule::independent:
    return "independent";
  case TargetRule::duplicate_of:
    return "duplicate_of";
  case TargetRule::zero:
    return "zero";
  }
  return "exact_combination";
}

std::size_t SynthSpec::basis_dim() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{0});
}

std::size_t SynthSpec::resolved_target_dim() const {
  if (rule == TargetRule::duplicate_of && duplicate_index < dims.size())
    return dims[duplicate_index];
  if (target_dim != 0)
    return target_dim;
  return dims.empty() ? 0 : dims.front();
}

void SynthSpec::validate() const {
  if (n < 1)
    throw ConfigError("synth: n must be >= 1");
  if (dims.empty())
    throw ConfigError("synth: at least one basis dimension is required");
  for (auto d : dims)
    if (d < 1)
      throw ConfigError("synth: basis dimensions must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("synth: noise_sigma must be finite and >= 0");
  if (latent_rank && (*latent_rank < 1 || *latent_rank > basis_dim()))
    throw ConfigError("synth: latent_rank must lie in [1, sum of dims]");
  if (rule == TargetRule::duplicate_of) {
    if (duplicate_index >= dims.size())
      throw ConfigError("synth: duplicate_of index out of range");
    if (target_dim != 0 && target_dim != dims[duplicate_index])
      throw ConfigError("synth: duplicate_of target must match the basis dimension");
  }
  if (seq_len < 1)
    throw ConfigError("synth: seq_len must be positive");
  const auto du = static_cast<Eigen::Index>(resolved_target_dim());
  const auto kd = static_cast<Eigen::Index>(basis_dim());
  if (true_W && (true_W->rows() != du || true_W->cols() != kd))
    throw ConfigError("synth: true_W is " + std::to_string(true_W->rows()) + "x" +
                      std::to_string(true_W->cols()) + ", expected " + std::to_string(du) +
                      "x" + std::to_string(kd));
  if (true_b && true_b->size() != du)
    throw ConfigError("synth: true_b has length " + std::to_string(true_b->size()) +
                      ", expected " + std::to_string(du));
}

GroundTruth make_truth(const SynthSpec &spec) {
  spec.validate();
  const auto du = static_cast<Eigen::Index>(spec.resolved_target_dim());
  const auto kd = static_cast<Eigen::Index>(spec.basis_dim());

  GroundTruth truth;
  truth.sigma = spec.noise_sigma;
  switch (spec.rule) {
  case TargetRule::exact_combination:
  case TargetRule::noisy_combination:
    truth.W = spec.true_W.value_or(normal_matrix(CounterRng(spec.seed, kStreamW), du, kd,
                                                 1.0 / std::sqrt(static_cast<double>(kd))));
    truth.b = spec.true_b.value_or(normal_matrix(CounterRng(spec.seed, kStreamBias), du, 1, 1.0));
    break;
  case TargetRule::independent:
    truth.W = Matrix::Zero(du, kd);
    truth.b = spec.true_b.value_or(normal_matrix(CounterRng(spec.seed, kStreamBias), du, 1, 1.0));
    break;
  case TargetRule::duplicate_of: {
    truth.W = Matrix::Zero(du, kd);
    Eigen::Index offset = 0;
    for (std::size_t i = 0; i < spec.duplicate_index; ++i)
      offset += static_cast<Eigen::Index>(spec.dims[i]);
    truth.W.middleCols(offset, du).setIdentity();
    truth.b = Vector::Zero(du);
    break;
  }
  case TargetRule::zero:
    truth.W = Matrix::Zero(du, kd);
    truth.b = Vector::Zero(du);
    break;
  }

  const auto model = make_basis_model(spec);
  truth.signal_variance = (truth.W * model.covariance(kd) * truth.W.transpose()).trace();
  if (spec.rule == TargetRule::exact_combination || spec.rule == TargetRule::noisy_combination) {
    const double noise = static_cast<double>(du) * spec.noise_sigma * spec.noise_sigma;
    truth.expected_r2 = truth.signal_variance / (truth.signal_variance + noise);
  }
  return truth;
}

double sigma_for_r2(const SynthSpec &spec, double r2) {
  if (!(r2 > 0.0 && r2 <= 1.0))
    throw ConfigError("target R^2 must lie in (0, 1]");
  auto exact = spec;
  exact.rule = TargetRule::exact_combination;
  exact.noise_sigma = 0.0;
  const auto truth = make_truth(exact);
  const double du = static_cast<double>(exact.resolved_target_dim());
  return std::sqrt(truth.signal_variance * (1.0 / r2 - 1.0) / du);
}

SynthResult generate(const SynthSpec &spec) {
  SynthResult out;
  out.truth = make_truth(spec);
  const auto model = make_basis_model(spec);

  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto kd = static_cast<Eigen::Index>(spec.basis_dim());
  const auto du = static_cast<Eigen::Index>(spec.resolved_target_dim());
  const auto row0 = static_cast<std::uint64_t>(spec.row_offset);

  RowMatrix z(n, kd);
  if (model.latent_map) {
    const auto r = model.latent_map->cols();
    const CounterRng rng(spec.seed, kStreamLatent);
    RowMatrix h(n, r);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < r; ++c)
        h(i, c) = rng.normal((row0 + static_cast<std::uint64_t>(i)) *
                                 static_cast<std::uint64_t>(r) +
                             static_cast<std::uint64_t>(c));
    z.noalias() = h * model.latent_map->transpose();
  } else {
    Eigen::Index offset = 0;
    for (std::size_t b = 0; b < spec.dims.size(); ++b) {
      const CounterRng rng(spec.seed, kStreamBasis + b);
      const auto d = static_cast<std::uint64_t>(spec.dims[b]);
      for (Eigen::Index i = 0; i < n; ++i)
        for (std::uint64_t c = 0; c < d; ++c)
          z(i, offset + static_cast<Eigen::Index>(c)) =
              rng.normal((row0 + static_cast<std::uint64_t>(i)) * d + c);
      offset += static_cast<Eigen::Index>(d);
    }
  }
  z.rowwise() += model.means.transpose();

  RowMatrix u(n, du);
  switch (spec.rule) {
  case TargetRule::exact_combination:
  case TargetRule::noisy_combination:
    u.noalias() = z * out.truth.W.transpose();
    u.rowwise() += out.truth.b.transpose();
    if (spec.rule == TargetRule::noisy_combination && spec.noise_sigma > 0.0) {
      const CounterRng rng(spec.seed, kStreamNoise);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < du; ++c)
          u(i, c) += spec.noise_sigma *
                     rng.normal((row0 + static_cast<std::uint64_t>(i)) *
                                    static_cast<std::uint64_t>(du) +
                                static_cast<std::uint64_t>(c));
    }
    break;
  case TargetRule::independent: {
    const CounterRng rng(spec.seed, kStreamIndependent);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < du; ++c)
        u(i, c) = out.truth.b(c) + rng.normal((row0 + static_cast<std::uint64_t>(i)) *
                                                  static_cast<std::uint64_t>(du) +
                                              static_cast<std::uint64_t>(c));
    break;
  }
  case TargetRule::duplicate_of: {
    Eigen::Index offset = 0;
    for (std::size_t i = 0; i < spec.duplicate_index; ++i)
      offset += static_cast<Eigen::Index>(spec.dims[i]);
    u = z.middleCols(offset, du);
    break;
  }
  case TargetRule::zero:
    u.setZero();
    break;
  }

  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < spec.dims.size(); ++b) {
    EmbeddingDataset ds;
    ds.model_name = spec.basis_prefix + std::to_string(b);
    ds.split = spec.split;
    ds.seq_len = spec.seq_len;
    ds.values = z.middleCols(offset, static_cast<Eigen::Index>(spec.dims[b]));
    offset += static_cast<Eigen::Index>(spec.dims[b]);
    out.bases.push_back(std::move(ds));
  }
  out.target.model_name = spec.target_name;
  out.target.split = spec.split;
  out.target.seq_len = spec.seq_len;
  out.target.values = std::move(u);
  return out;
}

EmbeddingDataset perturb(const EmbeddingDataset &dataset, const Transform &transform) {
  EmbeddingDataset out = dataset;
  std::visit(
      [&](const auto &t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, Scale>) {
          if (!std::isfinite(t.c))
            throw ConfigError("scale factor must be finite");
          out.values *= t.c;
        } else if constexpr (std::is_same_v<T, Affine>) {
          const auto d = static_cast<Eigen::Index>(dataset.d());
          if (t.A.rows() != d || t.A.cols() != d || t.b.size() != d)
            throw DimensionError("affine transform must be " + std::to_string(d) + "x" +
                                 std::to_string(d) + " with a length-" + std::to_string(d) +
                                 " offset");
          const Eigen::JacobiSVD<Matrix> svd(t.A);
          const auto &sv = svd.singularValues();
          if (!(sv(sv.size() - 1) >= 1e-10 * sv(0)))
            throw ValidationError("affine transform is singular (condition beyond 1e10)");
          out.values = dataset.values * t.A.transpose();
          out.values.rowwise() += t.b.transpose();
        } else {
          const auto n = dataset.n();
          if (t.order.size() != n)
            throw ValidationError("row permutation has length " +
                                  std::to_string(t.order.size()) + ", expected " +
                                  std::to_string(n));
          std::vector<char> seen(n, 0);
          for (auto idx : t.order) {
            if (idx >= n || seen[idx])
              throw ValidationError("row order is not a permutation");
            seen[idx] = 1;
          }
          for (std::size_t i = 0; i < n; ++i)
            out.values.row(static_cast<Eigen::Index>(i)) =
                dataset.values.row(static_cast<Eigen::Index>(t.order[i]));
        }
      },
      transform);
  return out;
}

} // namespace lmd
