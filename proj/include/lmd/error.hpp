#pragma once

#include <stdexcept>
#include <string>

namespace lmd {

/// Base class for every error raised by lmdkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;

  /// Errors caused by bad input (as opposed to internal failures). The CLI
  /// maps these to exit code 2.
  [[nodiscard]] virtual bool is_validation() const noexcept { return false; }
  [[nodiscard]] virtual const char *kind() const noexcept { return "internal"; }
};

#define LMD_DECLARE_ERROR(Name, Kind, Validation)                              \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
    [[nodiscard]] bool is_validation() const noexcept override {               \
      return Validation;                                                       \
    }                                                                          \
    [[nodiscard]] const char *kind() const noexcept override { return Kind; }  \
  }

LMD_DECLARE_ERROR(IoError, "io", true);
LMD_DECLARE_ERROR(FormatError, "format", true);
LMD_DECLARE_ERROR(CorruptionError, "corruption", true);
LMD_DECLARE_ERROR(ValidationError, "validation", true);
LMD_DECLARE_ERROR(AlignmentError, "alignment", true);
LMD_DECLARE_ERROR(DimensionError, "dimension", true);
LMD_DECLARE_ERROR(ConfigError, "config", true);
LMD_DECLARE_ERROR(EmptyAccumulatorError, "empty_accumulator", false);
LMD_DECLARE_ERROR(RankDeficiencyError, "rank_deficient", false);
LMD_DECLARE_ERROR(DegenerateTargetError, "degenerate_target", false);

#undef LMD_DECLARE_ERROR

/// Raised for a non-finite value; carries the offending row.
class NonFiniteError : public ValidationError {
public:
  NonFiniteError(const std::string &what, std::size_t row)
      : ValidationError(what), row_(row) {}
  [[nodiscard]] std::size_t row() const noexcept { return row_; }
  [[nodiscard]] const char *kind() const noexcept override {
    return "non_finite";
  }

private:
  std::size_t row_;
};

} // namespace lmd
