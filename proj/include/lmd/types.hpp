#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>

namespace lmd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Row-major storage, matching the on-disk payload layout.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Split { train, validation, test };

[[nodiscard]] std::string_view to_string(Split split) noexcept;
[[nodiscard]] std::optional<Split> parse_split(std::string_view text) noexcept;

} // namespace lmd
