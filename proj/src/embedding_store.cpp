#include "lmd/embedding_store.hpp"

#include "byte_io.hpp"
#include "lmd/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace lmd {

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'M', 'D', 'E', 'M', 'B', '\0', '\1'};

std::string encode_header(const EmbeddingHeader &header) {
  std::string buffer(kMagic.begin(), kMagic.end());
  detail::put<std::uint32_t>(buffer, header.version);
  detail::put<std::uint64_t>(buffer, header.n);
  detail::put<std::uint64_t>(buffer, header.d);
  detail::put<std::uint32_t>(buffer, header.dtype);
  detail::put<std::uint32_t>(buffer, header.seq_len);
  return buffer;
}

EmbeddingHeader decode_header(const char *bytes, const std::filesystem::path &path) {
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes))
    throw FormatError(path.string() + ": bad magic bytes, not an embedding file");
  EmbeddingHeader header;
  header.version = detail::get<std::uint32_t>(bytes + 8);
  header.n = detail::get<std::uint64_t>(bytes + 12);
  header.d = detail::get<std::uint64_t>(bytes + 20);
  header.dtype = detail::get<std::uint32_t>(bytes + 28);
  header.seq_len = detail::get<std::uint32_t>(bytes + 32);
  if (header.version != kFormatVersion)
    throw FormatError(path.string() + ": unsupported format version " +
                      std::to_string(header.version));
  if (header.dtype != kDtypeF64)
    throw FormatError(path.string() + ": unsupported dtype code " +
                      std::to_string(header.dtype));
  if (header.n == 0 || header.d == 0)
    throw ValidationError(path.string() + ": degenerate shape n=" +
                          std::to_string(header.n) +
                          " d=" + std::to_string(header.d));
  if (header.seq_len == 0)
    throw ValidationError(path.string() + ": seq_len must be positive");
  return header;
}

std::string encode_payload(const RowMatrix &values) {
  std::string buffer;
  buffer.reserve(static_cast<std::size_t>(values.size()) * sizeof(double));
  const double *data = values.data();
  for (Eigen::Index i = 0; i < values.size(); ++i)
    detail::put<double>(buffer, data[i]);
  return buffer;
}

void check_finite_rows(const RowMatrix &values, std::size_t row_offset,
                       const std::string &context) {
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    if (!values.row(r).allFinite()) {
      const auto row = row_offset + static_cast<std::size_t>(r);
      throw NonFiniteError(context + ": non-finite value in row " +
                               std::to_string(row),
                           row);
    }
  }
}

} // namespace

std::string_view to_string(Split split) noexcept {
  switch (split) {
  case Split::train:
    return "train";
  case Split::validation:
    return "validation";
  case Split::test:
    return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view text) noexcept {
  if (text == "train")
    return Split::train;
  if (text == "validation")
    return Split::validation;
  if (text == "test")
    return Split::test;
  return std::nullopt;
}

namespace detail {

void write_file_atomic(const std::filesystem::path &destination,
                       const std::string &contents) {
  if (destination.has_parent_path())
    std::filesystem::create_directories(destination.parent_path());
  auto tmp = destination;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError(tmp.string() + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out)
      throw IoError(tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, destination, ec);
  if (ec)
    throw IoError(destination.string() + ": rename failed: " + ec.message());
}

std::string read_file(const std::filesystem::path &source) {
  std::ifstream in(source, std::ios::binary);
  if (!in)
    throw IoError(source.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace detail

void EmbeddingDataset::validate() const {
  if (values.rows() == 0 || values.cols() == 0)
    throw ValidationError(model_name + ": degenerate shape n=" +
                          std::to_string(values.rows()) +
                          " d=" + std::to_string(values.cols()));
  if (seq_len == 0)
    throw ValidationError(model_name + ": seq_len must be positive");
  check_finite_rows(values, 0, model_name);
}

std::filesystem::path manifest_path(const std::filesystem::path &data_file) {
  auto path = data_file;
  path += ".json";
  return path;
}

std::string manifest_to_json(const DatasetManifest &manifest) {
  nlohmann::ordered_json j;
  j["model_name"] = manifest.model_name;
  j["checkpoint"] = manifest.checkpoint;
  j["corpus"] = manifest.corpus;
  j["seq_len"] = manifest.seq_len;
  j["split_sizes"] = manifest.split_sizes;
  j["dtype"] = manifest.dtype;
  j["created"] = manifest.created;
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string &text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  try {
    m.model_name = j.at("model_name").get<std::string>();
    m.checkpoint = j.value("checkpoint", "");
    m.corpus = j.value("corpus", "");
    m.seq_len = j.at("seq_len").get<std::uint32_t>();
    m.split_sizes =
        j.at("split_sizes").get<std::map<std::string, std::uint64_t>>();
    m.dtype = j.value("dtype", "f64");
    if (j.contains("created"))
      m.created = j.at("created").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("manifest is missing fields: ") + e.what());
  }
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path &path) {
  try {
    return manifest_from_json(detail::read_file(path));
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_matrix_file(const std::filesystem::path &destination,
                       const RowMatrix &values, std::uint32_t seq_len) {
  EmbeddingHeader header;
  header.n = static_cast<std::uint64_t>(values.rows());
  header.d = static_cast<std::uint64_t>(values.cols());
  header.seq_len = seq_len;
  detail::write_file_atomic(destination,
                            encode_header(header) + encode_payload(values));
}

void write_dataset(const EmbeddingDataset &dataset,
                   const std::filesystem::path &destination,
                   const ManifestInfo &info) {
  dataset.validate();
  write_matrix_file(destination, dataset.values, dataset.seq_len);

  DatasetManifest manifest;
  manifest.model_name = dataset.model_name;
  manifest.checkpoint = info.checkpoint;
  manifest.corpus = info.corpus.empty() ? dataset.corpus : info.corpus;
  manifest.seq_len = dataset.seq_len;
  manifest.split_sizes[std::string(to_string(dataset.split))] = dataset.n();
  manifest.created = info.created;
  manifest.created.try_emplace("tool", "lmdkit");
  detail::write_file_atomic(manifest_path(destination),
                            manifest_to_json(manifest));
}

EmbeddingReader::EmbeddingReader(const std::filesystem::path &source)
    : path_(source), in_(source, std::ios::binary) {
  if (!in_)
    throw IoError(source.string() + ": cannot open for reading");
  std::array<char, kHeaderBytes> bytes{};
  in_.read(bytes.data(), bytes.size());
  if (in_.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError(source.string() + ": file shorter than the " +
                      std::to_string(kHeaderBytes) + "-byte header");
  header_ = decode_header(bytes.data(), source);

  const auto file_bytes = std::filesystem::file_size(source);
  const auto actual = file_bytes - kHeaderBytes;
  const auto expected = header_.payload_bytes();
  if (actual != expected)
    throw CorruptionError(source.string() + ": payload size mismatch, expected " +
                          std::to_string(expected) + " bytes, found " +
                          std::to_string(actual));
}

RowMatrix EmbeddingReader::next_chunk(std::size_t max_rows) {
  const auto rows = std::min<std::size_t>(max_rows, header_.n - next_row_);
  const auto cols = static_cast<std::size_t>(header_.d);
  RowMatrix chunk(static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
  if (rows == 0)
    return chunk;
  std::string buffer(rows * cols * sizeof(double), '\0');
  in_.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (in_.gcount() != static_cast<std::streamsize>(buffer.size()))
    throw CorruptionError(path_.string() + ": unexpected end of payload");
  double *out = chunk.data();
  for (std::size_t i = 0; i < rows * cols; ++i)
    out[i] = detail::get<double>(buffer.data() + i * sizeof(double));
  check_finite_rows(chunk, next_row_, path_.string());
  next_row_ += rows;
  return chunk;
}

EmbeddingHeader read_header(const std::filesystem::path &source) {
  return EmbeddingReader(source).header();
}

EmbeddingDataset read_dataset(const std::filesystem::path &source) {
  EmbeddingReader reader(source);
  const auto &header = reader.header();

  EmbeddingDataset dataset;
  dataset.seq_len = header.seq_len;
  dataset.values = reader.next_chunk(header.n);

  const auto sidecar = manifest_path(source);
  if (std::filesystem::exists(sidecar)) {
    const auto manifest = read_manifest(sidecar);
    dataset.model_name = manifest.model_name;
    dataset.corpus = manifest.corpus;
    if (manifest.split_sizes.size() != 1)
      throw ValidationError(sidecar.string() +
                            ": expected exactly one split entry");
    const auto &[split_name, size] = *manifest.split_sizes.begin();
    const auto split = parse_split(split_name);
    if (!split)
      throw ValidationError(sidecar.string() + ": unknown split '" +
                            split_name + "'");
    dataset.split = *split;
    if (size != header.n)
      throw ValidationError(sidecar.string() + ": manifest split size " +
                            std::to_string(size) + " != file row count " +
                            std::to_string(header.n));
    if (manifest.seq_len != header.seq_len)
      throw ValidationError(sidecar.string() + ": manifest seq_len " +
                            std::to_string(manifest.seq_len) +
                            " != header seq_len " +
                            std::to_string(header.seq_len));
  } else {
    const auto parent = source.parent_path();
    const auto split = parse_split(parent.filename().string());
    if (split && parent.has_parent_path()) {
      dataset.split = *split;
      dataset.model_name = parent.parent_path().filename().string();
    } else {
      dataset.model_name = source.stem().string();
    }
  }
  return dataset;
}

void l2_normalize_rows(EmbeddingDataset &dataset) {
  for (Eigen::Index r = 0; r < dataset.values.rows(); ++r) {
    const double norm = dataset.values.row(r).norm();
    if (norm > 0.0)
      dataset.values.row(r) /= norm;
  }
}

AlignedView::AlignedView(std::vector<const EmbeddingDataset *> bases,
                         const EmbeddingDataset *target)
    : bases_(std::move(bases)), target_(target) {
  if (bases_.empty())
    throw AlignmentError("alignment requires at least one basis dataset");
  rows_ = bases_.front()->n();
  split_ = bases_.front()->split;
  for (const auto *b : bases_) {
    widths_.push_back(b->d());
    width_ += b->d();
  }
}

const EmbeddingDataset &AlignedView::target() const {
  if (!target_)
    throw AlignmentError("aligned view has no target");
  return *target_;
}

std::vector<std::string> AlignedView::basis_names() const {
  std::vector<std::string> names;
  names.reserve(bases_.size());
  for (const auto *b : bases_)
    names.push_back(b->model_name);
  return names;
}

void AlignedView::z_row(std::size_t i, std::span<double> out) const {
  if (out.size() != width_)
    throw AlignmentError("z_row output has width " + std::to_string(out.size()) +
                         ", expected " + std::to_string(width_));
  std::size_t offset = 0;
  for (const auto *b : bases_) {
    const auto row = b->values.row(static_cast<Eigen::Index>(i));
    std::copy(row.data(), row.data() + row.size(), out.data() + offset);
    offset += b->d();
  }
}

RowMatrix AlignedView::z_rows(std::size_t begin, std::size_t count) const {
  RowMatrix z(static_cast<Eigen::Index>(count),
              static_cast<Eigen::Index>(width_));
  Eigen::Index offset = 0;
  for (const auto *b : bases_) {
    const auto w = static_cast<Eigen::Index>(b->d());
    z.middleCols(offset, w) = b->values.middleRows(
        static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
    offset += w;
  }
  return z;
}

AlignedView align_datasets(std::vector<const EmbeddingDataset *> bases,
                           const EmbeddingDataset *target) {
  if (bases.empty())
    throw AlignmentError("alignment requires at least one basis dataset");

  std::vector<const EmbeddingDataset *> all = bases;
  if (target)
    all.insert(all.begin(), target);
  const auto *ref = all.front();

  std::string corpus;
  for (const auto *ds : all)
    if (corpus.empty())
      corpus = ds->corpus;

  std::vector<std::string> offenders;
  for (const auto *ds : all) {
    const bool other_corpus = !ds->corpus.empty() && ds->corpus != corpus;
    if (ds->n() != ref->n() || ds->split != ref->split || other_corpus)
      offenders.push_back(ds->model_name + " (n=" + std::to_string(ds->n()) +
                          ", split=" + std::string(to_string(ds->split)) +
                          (other_corpus ? ", corpus=" + ds->corpus : "") + ")");
  }
  if (!offenders.empty()) {
    std::string msg = "datasets are not aligned with " + ref->model_name +
                      " (n=" + std::to_string(ref->n()) +
                      ", split=" + std::string(to_string(ref->split)) +
                      (corpus.empty() ? "" : ", corpus=" + corpus) + "): ";
    for (std::size_t i = 0; i < offenders.size(); ++i)
      msg += (i ? ", " : "") + offenders[i];
    throw AlignmentError(msg);
  }
  return AlignedView(std::move(bases), target);
}

AlignedView align_datasets(std::span<const EmbeddingDataset> bases,
                           const EmbeddingDataset *target) {
  std::vector<const EmbeddingDataset *> ptrs;
  ptrs.reserve(bases.size());
  for (const auto &b : bases)
    ptrs.push_back(&b);
  return align_datasets(std::move(ptrs), target);
}

} // namespace lmd
