#pragma once

#include "lmd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace lmd {

/// One model's sequence embeddings on one corpus split. Row i of every
/// dataset joined in an analysis refers to the same text sequence.
struct EmbeddingDataset {
  std::string model_name;
  Split split = Split::train;
  std::uint32_t seq_len = 1;
  /// Corpus identifier from the manifest; empty when unknown. Datasets with
  /// different non-empty identifiers never align.
  std::string corpus;
  RowMatrix values;

  [[nodiscard]] std::size_t n() const noexcept {
    return static_cast<std::size_t>(values.rows());
  }
  [[nodiscard]] std::size_t d() const noexcept {
    return static_cast<std::size_t>(values.cols());
  }

  /// Throws ValidationError on empty shape or zero seq_len and
  /// NonFiniteError naming the first row holding NaN/Inf.
  void validate() const;
};

/// JSON sidecar written next to every embedding file.
struct DatasetManifest {
  std::string model_name;
  std::string checkpoint;
  std::string corpus;
  std::uint32_t seq_len = 1;
  std::map<std::string, std::uint64_t> split_sizes;
  std::string dtype = "f64";
  std::map<std::string, std::string> created;
};

/// Provenance fields a caller may attach when writing.
struct ManifestInfo {
  std::string checkpoint;
  std::string corpus;
  std::map<std::string, std::string> created;
};

// Binary layout (all little-endian):
//   magic "LMDEMB\0\1" | u32 version | u64 n | u64 d | u32 dtype | u32 seq_len
//   followed by n*d f64 values, row-major.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kDtypeF64 = 0;
inline constexpr std::size_t kHeaderBytes = 36;

struct EmbeddingHeader {
  std::uint32_t version = kFormatVersion;
  std::uint64_t n = 0;
  std::uint64_t d = 0;
  std::uint32_t dtype = kDtypeF64;
  std::uint32_t seq_len = 1;

  [[nodiscard]] std::uint64_t payload_bytes() const noexcept {
    return n * d * sizeof(double);
  }
};

[[nodiscard]] std::filesystem::path
manifest_path(const std::filesystem::path &data_file);

[[nodiscard]] std::string manifest_to_json(const DatasetManifest &manifest);
[[nodiscard]] DatasetManifest manifest_from_json(const std::string &text);
[[nodiscard]] DatasetManifest read_manifest(const std::filesystem::path &path);

/// Writes the header, payload and sidecar manifest. Both files are written to
/// a temporary name first and renamed into place.
void write_dataset(const EmbeddingDataset &dataset,
                   const std::filesystem::path &destination,
                   const ManifestInfo &info = {});

/// Writes only the binary file (no manifest) for an arbitrary matrix. Used for
/// solution coefficient payloads and tests.
void write_matrix_file(const std::filesystem::path &destination,
                       const RowMatrix &values, std::uint32_t seq_len = 1);

/// Streaming reader over one embedding file. Checks the header and the total
/// file size on open; rows are checked for finiteness as they are read.
class EmbeddingReader {
public:
  explicit EmbeddingReader(const std::filesystem::path &source);

  [[nodiscard]] const EmbeddingHeader &header() const noexcept {
    return header_;
  }
  [[nodiscard]] std::size_t rows_read() const noexcept { return next_row_; }
  [[nodiscard]] bool done() const noexcept { return next_row_ >= header_.n; }

  /// Reads up to max_rows rows. Returns an empty matrix once exhausted.
  RowMatrix next_chunk(std::size_t max_rows);

private:
  std::filesystem::path path_;
  std::ifstream in_;
  EmbeddingHeader header_;
  std::size_t next_row_ = 0;
};

[[nodiscard]] EmbeddingHeader read_header(const std::filesystem::path &source);

/// Loads a dataset. Name and split come from the sidecar manifest when
/// present, otherwise from the `<model>/<split>/T<len>.lmdemb` layout, falling
/// back to the file stem and the train split.
[[nodiscard]] EmbeddingDataset read_dataset(const std::filesystem::path &source);

/// Optional preprocessing: scales every row to unit L2 norm. Zero rows are
/// left untouched.
void l2_normalize_rows(EmbeddingDataset &dataset);

/// Row-aligned stacking of basis datasets (and optionally a target). The view
/// borrows the datasets; they must outlive it.
class AlignedView {
public:
  AlignedView(std::vector<const EmbeddingDataset *> bases,
              const EmbeddingDataset *target);

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  /// Total stacked width, the sum of basis dimensions.
  [[nodiscard]] std::size_t width() const noexcept { return width_; }
  [[nodiscard]] const std::vector<std::size_t> &block_widths() const noexcept {
    return widths_;
  }
  [[nodiscard]] std::size_t block_count() const noexcept {
    return bases_.size();
  }
  [[nodiscard]] const EmbeddingDataset &basis(std::size_t i) const {
    return *bases_.at(i);
  }
  [[nodiscard]] bool has_target() const noexcept { return target_ != nullptr; }
  [[nodiscard]] const EmbeddingDataset &target() const;
  [[nodiscard]] Split split() const noexcept { return split_; }
  [[nodiscard]] std::vector<std::string> basis_names() const;

  void z_row(std::size_t i, std::span<double> out) const;
  /// Stacked rows [begin, begin+count).
  [[nodiscard]] RowMatrix z_rows(std::size_t begin, std::size_t count) const;
  [[nodiscard]] RowMatrix stacked() const { return z_rows(0, rows_); }

private:
  std::vector<const EmbeddingDataset *> bases_;
  const EmbeddingDataset *target_;
  std::vector<std::size_t> widths_;
  std::size_t rows_ = 0;
  std::size_t width_ = 0;
  Split split_ = Split::train;
};

/// Checks that every dataset shares n and split (target included) and builds
/// the stacked view. Throws AlignmentError listing the offenders.
[[nodiscard]] AlignedView
align_datasets(std::span<const EmbeddingDataset> bases,
               const EmbeddingDataset *target = nullptr);
[[nodiscard]] AlignedView
align_datasets(std::vector<const EmbeddingDataset *> bases,
               const EmbeddingDataset *target = nullptr);

} // namespace lmd
