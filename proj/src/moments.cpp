#include "lmd/moments.hpp"

#include "byte_io.hpp"
#include "lmd/error.hpp"

#include <array>
#include <cmath>
#include <numeric>

namespace lmd {

namespace {

constexpr std::array<char, 8> kSnapshotMagic = {'L', 'M', 'D', 'M',
                                                'O', 'M', '\0', '\1'};
constexpr std::uint32_t kSnapshotVersion = 1;

void check_finite(std::span<const double> values, const char *what) {
  for (double v : values)
    if (!std::isfinite(v))
      throw ValidationError(std::string("non-finite value in ") + what +
                            " row");
}

std::vector<Eigen::Index> block_offsets(const std::vector<std::size_t> &widths) {
  std::vector<Eigen::Index> offsets(widths.size() + 1, 0);
  for (std::size_t i = 0; i < widths.size(); ++i)
    offsets[i + 1] = offsets[i] + static_cast<Eigen::Index>(widths[i]);
  return offsets;
}

} // namespace

MomentAccumulator::MomentAccumulator(std::size_t target_dim,
                                     std::vector<std::size_t> block_widths)
    : widths_(std::move(block_widths)) {
  const auto kd = std::accumulate(widths_.begin(), widths_.end(), std::size_t{0});
  if (kd == 0)
    throw DimensionError("moment accumulator needs a basis dimension >= 1");
  for (auto w : widths_)
    if (w == 0)
      throw DimensionError("basis block widths must be >= 1");
  const auto k = static_cast<Eigen::Index>(kd);
  const auto du = static_cast<Eigen::Index>(target_dim);
  sum_z_ = Vector::Zero(k);
  sum_u_ = Vector::Zero(du);
  sum_zz_ = Matrix::Zero(k, k);
  sum_uz_ = Matrix::Zero(du, k);
}

void MomentAccumulator::mirror_lower() {
  sum_zz_.triangularView<Eigen::StrictlyUpper>() = sum_zz_.transpose();
}

void MomentAccumulator::observe(std::span<const double> u_row,
                                std::span<const double> z_row) {
  if (u_row.size() != target_dim() || z_row.size() != basis_dim())
    throw DimensionError("observe: got u of width " +
                         std::to_string(u_row.size()) + " and z of width " +
                         std::to_string(z_row.size()) + ", expected " +
                         std::to_string(target_dim()) + " and " +
                         std::to_string(basis_dim()));
  check_finite(u_row, "u");
  check_finite(z_row, "z");

  const Eigen::Map<const Vector> z(z_row.data(), static_cast<Eigen::Index>(z_row.size()));
  const Eigen::Map<const Vector> u(u_row.data(), static_cast<Eigen::Index>(u_row.size()));
  sum_z_ += z;
  sum_u_ += u;
  sum_zz_.selfadjointView<Eigen::Lower>().rankUpdate(z);
  mirror_lower();
  sum_uz_.noalias() += u * z.transpose();
  sum_uu_ += u.squaredNorm();
  ++count_;
}

void MomentAccumulator::observe_rows(const RowMatrix &u_rows,
                                     const RowMatrix &z_rows) {
  if (u_rows.rows() != z_rows.rows() ||
      static_cast<std::size_t>(u_rows.cols()) != target_dim() ||
      static_cast<std::size_t>(z_rows.cols()) != basis_dim())
    throw DimensionError("observe_rows: shape mismatch, u is " +
                         std::to_string(u_rows.rows()) + "x" +
                         std::to_string(u_rows.cols()) + ", z is " +
                         std::to_string(z_rows.rows()) + "x" +
                         std::to_string(z_rows.cols()));
  if (!u_rows.allFinite() || !z_rows.allFinite())
    throw ValidationError("observe_rows: non-finite input");
  if (z_rows.rows() == 0)
    return;

  sum_z_ += z_rows.colwise().sum().transpose();
  sum_u_ += u_rows.colwise().sum().transpose();
  sum_zz_.selfadjointView<Eigen::Lower>().rankUpdate(z_rows.transpose());
  mirror_lower();
  sum_uz_.noalias() += u_rows.transpose() * z_rows;
  sum_uu_ += u_rows.squaredNorm();
  count_ += static_cast<std::uint64_t>(z_rows.rows());
}

void MomentAccumulator::check_same_shape(const MomentAccumulator &other) const {
  if (other.widths_ != widths_ || other.target_dim() != target_dim())
    throw DimensionError("cannot merge accumulators of different shapes");
}

void MomentAccumulator::merge(const MomentAccumulator &other) {
  check_same_shape(other);
  count_ += other.count_;
  sum_z_ += other.sum_z_;
  sum_u_ += other.sum_u_;
  sum_zz_ += other.sum_zz_;
  sum_uz_ += other.sum_uz_;
  sum_uu_ += other.sum_uu_;
}

MomentAccumulator merge(MomentAccumulator a, const MomentAccumulator &b) {
  a.merge(b);
  return a;
}

MomentSummary MomentAccumulator::finalize(bool center) const {
  if (count_ == 0)
    throw EmptyAccumulatorError("cannot finalize an empty accumulator");
  if (center && count_ < 2)
    throw EmptyAccumulatorError("centered moments need at least 2 samples, have " +
                                std::to_string(count_));

  const double inv = 1.0 / static_cast<double>(count_);
  MomentSummary s;
  s.count = count_;
  s.centered = center;
  s.block_widths = widths_;
  s.mean_z = sum_z_ * inv;
  s.mean_u = sum_u_ * inv;
  s.zz = sum_zz_ * inv;
  s.uz = sum_uz_ * inv;
  s.uu = sum_uu_ * inv;
  if (center) {
    s.zz.noalias() -= s.mean_z * s.mean_z.transpose();
    s.uz.noalias() -= s.mean_u * s.mean_z.transpose();
    s.uu -= s.mean_u.squaredNorm();
  }
  s.zz = (0.5 * (s.zz + s.zz.transpose())).eval();
  return s;
}

void MomentAccumulator::save(const std::filesystem::path &destination) const {
  std::string buf(kSnapshotMagic.begin(), kSnapshotMagic.end());
  detail::put<std::uint32_t>(buf, kSnapshotVersion);
  detail::put<std::uint64_t>(buf, count_);
  detail::put<std::uint64_t>(buf, target_dim());
  detail::put<std::uint64_t>(buf, widths_.size());
  for (auto w : widths_)
    detail::put<std::uint64_t>(buf, w);
  auto put_all = [&buf](const auto &m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        detail::put<double>(buf, m(i, j));
  };
  put_all(sum_z_);
  put_all(sum_u_);
  put_all(sum_zz_);
  put_all(sum_uz_);
  detail::put<double>(buf, sum_uu_);
  detail::write_file_atomic(destination, buf);
}

MomentAccumulator MomentAccumulator::load(const std::filesystem::path &source) {
  const auto bytes = detail::read_file(source);
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size())
      throw CorruptionError(source.string() + ": truncated moment snapshot");
  };
  auto take = [&]<typename T>(T) {
    need(sizeof(T));
    auto v = detail::get<T>(bytes.data() + pos);
    pos += sizeof(T);
    return v;
  };
  need(kSnapshotMagic.size());
  if (!std::equal(kSnapshotMagic.begin(), kSnapshotMagic.end(), bytes.data()))
    throw FormatError(source.string() + ": not a moment snapshot");
  pos = kSnapshotMagic.size();
  if (take(std::uint32_t{}) != kSnapshotVersion)
    throw FormatError(source.string() + ": unsupported snapshot version");
  const auto count = take(std::uint64_t{});
  const auto du = take(std::uint64_t{});
  const auto nblocks = take(std::uint64_t{});
  if (nblocks > bytes.size())
    throw CorruptionError(source.string() + ": implausible block count");
  std::vector<std::size_t> widths;
  for (std::uint64_t i = 0; i < nblocks; ++i)
    widths.push_back(take(std::uint64_t{}));

  MomentAccumulator acc(du, widths);
  acc.count_ = count;
  auto get_all = [&](auto &m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        m(i, j) = take(double{});
  };
  get_all(acc.sum_z_);
  get_all(acc.sum_u_);
  get_all(acc.sum_zz_);
  get_all(acc.sum_uz_);
  acc.sum_uu_ = take(double{});
  if (pos != bytes.size())
    throw CorruptionError(source.string() + ": trailing bytes in snapshot");
  return acc;
}

MomentSummary select_blocks(const MomentSummary &joint, std::size_t target_block,
                            std::span<const std::size_t> basis_blocks) {
  const auto &widths = joint.block_widths;
  if (joint.target_dim() != 0)
    throw DimensionError("select_blocks expects a joint summary without target");
  if (target_block >= widths.size())
    throw DimensionError("target block index out of range");
  if (basis_blocks.empty())
    throw DimensionError("select_blocks needs at least one basis block");
  const auto offsets = block_offsets(widths);

  std::vector<Eigen::Index> cols;
  MomentSummary s;
  s.count = joint.count;
  s.centered = joint.centered;
  for (auto b : basis_blocks) {
    if (b >= widths.size())
      throw DimensionError("basis block index out of range");
    s.block_widths.push_back(widths[b]);
    for (auto c = offsets[b]; c < offsets[b + 1]; ++c)
      cols.push_back(c);
  }
  const auto t0 = offsets[target_block];
  const auto tw = static_cast<Eigen::Index>(widths[target_block]);
  const auto kd = static_cast<Eigen::Index>(cols.size());

  s.zz.resize(kd, kd);
  s.uz.resize(tw, kd);
  s.mean_z.resize(kd);
  for (Eigen::Index j = 0; j < kd; ++j) {
    s.mean_z(j) = joint.mean_z(cols[j]);
    for (Eigen::Index i = 0; i < kd; ++i)
      s.zz(i, j) = joint.zz(cols[i], cols[j]);
    for (Eigen::Index i = 0; i < tw; ++i)
      s.uz(i, j) = joint.zz(t0 + i, cols[j]);
  }
  s.mean_u = joint.mean_z.segment(t0, tw);
  s.uu = joint.zz.block(t0, t0, tw, tw).trace();
  return s;
}

} // namespace lmd
