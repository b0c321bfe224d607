#include "lmd/embedding_store.hpp"
#include "lmd/error.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>

namespace fs = std::filesystem;
using namespace lmd;

namespace {

fs::path scratch(const std::string &name) {
  auto dir = fs::temp_directory_path() / "lmdkit_store_tests";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingDataset make(const std::string &name, RowMatrix values, Split split = Split::train) {
  EmbeddingDataset ds;
  ds.model_name = name;
  ds.split = split;
  ds.seq_len = 16;
  ds.values = std::move(values);
  return ds;
}

bool bitwise_equal(const RowMatrix &a, const RowMatrix &b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

void write_raw(const fs::path &path, const std::string &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_raw(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("zero matrix round-trips with a 48-byte payload") {
  const auto path = scratch("zeros.lmdemb");
  const auto ds = make("zeros", RowMatrix::Zero(2, 3));
  write_dataset(ds, path);
  CHECK(fs::file_size(path) == kHeaderBytes + 48);
  const auto back = read_dataset(path);
  CHECK(bitwise_equal(back.values, ds.values));
  CHECK(back.model_name == "zeros");
  CHECK(back.seq_len == 16);
}

TEST_CASE("single value round-trips exactly") {
  const auto path = scratch("one.lmdemb");
  RowMatrix v(1, 1);
  v(0, 0) = 1.5;
  write_dataset(make("one", v), path);
  CHECK(read_dataset(path).values(0, 0) == 1.5);
}

TEST_CASE("random 100x8 matrix round-trips bitwise") {
  std::mt19937_64 gen(7);
  const auto path = scratch("rand.lmdemb");
  const auto ds = make("rand", oracle::random_rows(gen, 100, 8), Split::test);
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  CHECK(bitwise_equal(back.values, ds.values));
  CHECK(back.split == Split::test);
}

TEST_CASE("header layout is fixed little-endian") {
  const auto path = scratch("layout.lmdemb");
  RowMatrix v(2, 3);
  v << 1, 2, 3, 4, 5, 6;
  write_dataset(make("layout", v), path);
  const auto bytes = read_raw(path);
  REQUIRE(bytes.size() == 36 + 48);
  CHECK(std::memcmp(bytes.data(), "LMDEMB\0\1", 8) == 0);
  const unsigned char expected[28] = {1, 0, 0, 0,             // version
                                      2, 0, 0, 0, 0, 0, 0, 0, // n
                                      3, 0, 0, 0, 0, 0, 0, 0, // d
                                      0, 0, 0, 0,             // dtype f64
                                      16, 0, 0, 0};           // seq_len
  CHECK(std::memcmp(bytes.data() + 8, expected, 28) == 0);
  // 1.0 as little-endian IEEE-754 double
  const unsigned char one[8] = {0, 0, 0, 0, 0, 0, 0xF0, 0x3F};
  CHECK(std::memcmp(bytes.data() + 36, one, 8) == 0);
}

TEST_CASE("truncated payload is a corruption error naming byte counts") {
  std::mt19937_64 gen(1);
  const auto path = scratch("trunc.lmdemb");
  write_dataset(make("trunc", oracle::random_rows(gen, 4, 3)), path);
  const auto bytes = read_raw(path);
  write_raw(path, bytes.substr(0, bytes.size() - 3 * sizeof(double)));
  try {
    (void)read_dataset(path);
    FAIL("expected corruption error");
  } catch (const CorruptionError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 96") != std::string::npos);
    CHECK(msg.find("found 72") != std::string::npos);
  }
}

TEST_CASE("header errors") {
  std::mt19937_64 gen(2);
  const auto path = scratch("hdr.lmdemb");
  write_dataset(make("hdr", oracle::random_rows(gen, 2, 2)), path);
  const auto good = read_raw(path);
  fs::remove(manifest_path(path));

  SUBCASE("d = 0") {
    auto bytes = good.substr(0, kHeaderBytes);
    std::memset(bytes.data() + 20, 0, 8);
    write_raw(path, bytes);
    CHECK_THROWS_AS((void)read_dataset(path), ValidationError);
  }
  SUBCASE("bad magic") {
    auto bytes = good;
    bytes[0] = 'X';
    write_raw(path, bytes);
    CHECK_THROWS_AS((void)read_dataset(path), FormatError);
  }
  SUBCASE("unknown version") {
    auto bytes = good;
    bytes[8] = 9;
    write_raw(path, bytes);
    CHECK_THROWS_AS((void)read_dataset(path), FormatError);
  }
  SUBCASE("short header") {
    write_raw(path, good.substr(0, 10));
    CHECK_THROWS_AS((void)read_dataset(path), FormatError);
  }
}

TEST_CASE("non-finite rows are rejected with their index") {
  RowMatrix v = RowMatrix::Ones(5, 2);
  v(3, 1) = std::numeric_limits<double>::quiet_NaN();

  SUBCASE("on write") {
    try {
      write_dataset(make("nan", v), scratch("nan_w.lmdemb"));
      FAIL("expected rejection");
    } catch (const NonFiniteError &e) {
      CHECK(e.row() == 3);
    }
  }
  SUBCASE("on read") {
    const auto path = scratch("nan_r.lmdemb");
    write_matrix_file(path, v);
    try {
      (void)read_dataset(path);
      FAIL("expected rejection");
    } catch (const NonFiniteError &e) {
      CHECK(e.row() == 3);
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }
}

TEST_CASE("manifest sidecar") {
  std::mt19937_64 gen(3);
  const auto path = scratch("man.lmdemb");
  ManifestInfo info{"bert-base-uncased", "wiki", {{"by", "test"}}};
  write_dataset(make("BERT", oracle::random_rows(gen, 6, 2), Split::validation), path, info);
  const auto m = read_manifest(manifest_path(path));
  CHECK(m.model_name == "BERT");
  CHECK(m.checkpoint == "bert-base-uncased");
  CHECK(m.corpus == "wiki");
  CHECK(m.seq_len == 16);
  CHECK(m.split_sizes.at("validation") == 6);
  CHECK(m.dtype == "f64");
  CHECK(m.created.at("by") == "test");
  CHECK(read_dataset(path).corpus == "wiki");

  SUBCASE("split size must match rows") {
    auto bad = m;
    bad.split_sizes["validation"] = 7;
    std::ofstream(manifest_path(path)) << manifest_to_json(bad);
    CHECK_THROWS_AS((void)read_dataset(path), ValidationError);
  }
}

TEST_CASE("name and split are inferred from the directory layout") {
  const auto root = scratch("layout_root");
  const auto path = root / "XLNet" / "test" / "T32.lmdemb";
  fs::create_directories(path.parent_path());
  write_matrix_file(path, RowMatrix::Ones(3, 2), 32);
  const auto ds = read_dataset(path);
  CHECK(ds.model_name == "XLNet");
  CHECK(ds.split == Split::test);
  CHECK(ds.seq_len == 32);
}

TEST_CASE("streamed chunks concatenate to the full matrix") {
  std::mt19937_64 gen(4);
  const auto path = scratch("stream.lmdemb");
  const auto ds = make("stream", oracle::random_rows(gen, 23, 5));
  write_dataset(ds, path);
  EmbeddingReader reader(path);
  RowMatrix all(0, 5);
  while (!reader.done()) {
    const auto chunk = reader.next_chunk(7);
    RowMatrix grown(all.rows() + chunk.rows(), 5);
    grown << all, chunk;
    all = grown;
  }
  CHECK(reader.rows_read() == 23);
  CHECK(bitwise_equal(all, ds.values));
  CHECK(reader.next_chunk(7).rows() == 0);
}

TEST_CASE("align_datasets") {
  std::mt19937_64 gen(5);
  const auto a = make("A", oracle::random_rows(gen, 4, 2));
  const auto b = make("B", oracle::random_rows(gen, 4, 3));

  SUBCASE("concatenates heterogeneous widths") {
    const auto view = align_datasets(std::vector<const EmbeddingDataset *>{&a, &b});
    CHECK(view.width() == 5);
    CHECK(view.block_widths() == std::vector<std::size_t>{2, 3});
    const auto z = view.stacked();
    CHECK(z.leftCols(2) == a.values);
    CHECK(z.rightCols(3) == b.values);
    std::vector<double> row(5);
    view.z_row(2, row);
    CHECK(row[0] == a.values(2, 0));
    CHECK(row[4] == b.values(2, 2));
  }
  SUBCASE("single dataset is the identity") {
    const auto view = align_datasets(std::vector<const EmbeddingDataset *>{&a});
    CHECK(view.stacked() == a.values);
  }
  SUBCASE("mismatched n names the offenders") {
    const auto c = make("C", oracle::random_rows(gen, 5, 2));
    try {
      (void)align_datasets(std::vector<const EmbeddingDataset *>{&a, &c});
      FAIL("expected alignment error");
    } catch (const AlignmentError &e) {
      const std::string msg = e.what();
      CHECK(msg.find("A (n=4") != std::string::npos);
      CHECK(msg.find("C (n=5") != std::string::npos);
    }
  }
  SUBCASE("mismatched split") {
    const auto c = make("C", oracle::random_rows(gen, 4, 2), Split::test);
    CHECK_THROWS_AS((void)align_datasets(std::vector<const EmbeddingDataset *>{&a, &c}),
                    AlignmentError);
  }
  SUBCASE("different corpora never align") {
    auto wiki = a, books = b, unknown = b;
    wiki.corpus = "wiki";
    books.corpus = "books";
    CHECK_NOTHROW((void)align_datasets(std::vector<const EmbeddingDataset *>{&wiki, &unknown}));
    try {
      (void)align_datasets(std::vector<const EmbeddingDataset *>{&wiki, &unknown, &books});
      FAIL("expected alignment error");
    } catch (const AlignmentError &e) {
      CHECK(std::string(e.what()).find("B (n=4, split=train, corpus=books)") != std::string::npos);
    }
  }
  SUBCASE("target participates in the check") {
    const auto t = make("T", oracle::random_rows(gen, 3, 1));
    CHECK_THROWS_AS((void)align_datasets(std::vector<const EmbeddingDataset *>{&a}, &t),
                    AlignmentError);
  }
  SUBCASE("row i depends only on row i of each input") {
    const std::vector<Eigen::Index> perm = {2, 0, 3, 1};
    auto pa = a, pb = b;
    for (Eigen::Index i = 0; i < 4; ++i) {
      pa.values.row(i) = a.values.row(perm[static_cast<std::size_t>(i)]);
      pb.values.row(i) = b.values.row(perm[static_cast<std::size_t>(i)]);
    }
    const auto z = align_datasets(std::vector<const EmbeddingDataset *>{&a, &b}).stacked();
    const auto pz = align_datasets(std::vector<const EmbeddingDataset *>{&pa, &pb}).stacked();
    for (Eigen::Index i = 0; i < 4; ++i)
      CHECK(pz.row(i) == z.row(perm[static_cast<std::size_t>(i)]));
  }
}

TEST_CASE("l2 normalization leaves zero rows alone") {
  RowMatrix v(2, 2);
  v << 3, 4, 0, 0;
  auto ds = make("n", v);
  l2_normalize_rows(ds);
  CHECK(ds.values(0, 0) == doctest::Approx(0.6));
  CHECK(ds.values(0, 1) == doctest::Approx(0.8));
  CHECK(ds.values(1, 0) == 0.0);
}
