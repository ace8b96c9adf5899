#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "neuraxis/error.hpp"
#include "neuraxis/table.hpp"
#include "neuraxis/tensor_archive.hpp"
#include "test_support.hpp"

using namespace neuraxis;

TEST_SUITE_BEGIN("io");

TEST_CASE("tensor archive round-trips float-exact matrices, vectors, and metadata") {
  testsup::TempDir dir("archive");
  TensorArchive ar;

  Eigen::MatrixXd m(2, 3);
  m << 1.5, -3.25, 0.0, 42.0, -0.5, 1024.125;  // exactly representable in f32
  Eigen::VectorXd v(4);
  v << 0.25, -1.0, 8.5, 3.0;
  const std::vector<double> plain = {1.0, 2.5, -4.75};

  ar.add("weights", m);
  ar.add("bias", v);
  ar.add("history", plain);
  ar.meta()["layer"] = "2";
  ar.meta()["note"] = "quoted \"text\" with, commas";
  ar.save(dir.file("model.naxt"));

  const auto back = TensorArchive::load(dir.file("model.naxt"));
  CHECK(back.names() == std::vector<std::string>{"weights", "bias", "history"});
  CHECK(back.matrix("weights") == m);
  CHECK(back.vector("bias") == v);
  CHECK(back.vector("history").size() == 3);
  CHECK(back.vector("history")(2) == -4.75);
  CHECK(back.shape("weights") == std::vector<std::int64_t>{2, 3});
  CHECK(back.shape("bias") == std::vector<std::int64_t>{4});
  CHECK(back.meta().at("layer") == "2");
  CHECK(back.meta().at("note") == "quoted \"text\" with, commas");
  CHECK(back.has("weights"));
  CHECK_FALSE(back.has("missing"));
  CHECK_THROWS_AS((void)back.matrix("missing"), Error);
}

TEST_CASE("tensor archive quantizes through float32 deterministically") {
  testsup::TempDir dir("archive_f32");
  TensorArchive ar;
  Eigen::MatrixXd m(1, 2);
  m << 3.141592653589793, 1e-40;  // both lose bits in f32
  ar.add("x", m);
  ar.save(dir.file("a.naxt"));
  const auto once = TensorArchive::load(dir.file("a.naxt"));
  CHECK(once.matrix("x")(0, 0) ==
        static_cast<double>(static_cast<float>(3.141592653589793)));
  // Re-saving the loaded archive is a fixed point.
  TensorArchive ar2;
  ar2.add("x", once.matrix("x"));
  ar2.save(dir.file("b.naxt"));
  const auto twice = TensorArchive::load(dir.file("b.naxt"));
  CHECK(twice.matrix("x") == once.matrix("x"));
}

TEST_CASE("tensor archive load rejects a missing file") {
  CHECK_THROWS_AS((void)TensorArchive::load("/nonexistent/nowhere.naxt"), Error);
}

TEST_CASE("format_g17 round-trips doubles exactly") {
  const std::vector<double> values = {0.0,     1.0 / 3.0,      3.141592653589793,
                                      -2.5e-8, 1.7976931348623157e308, 123456.789};
  for (double v : values) {
    const std::string s = format_g17(v);
    CHECK(std::stod(s) == v);
  }
}

TEST_CASE("csv writer enforces the declared column count and quotes as needed") {
  CsvWriter w({"name", "value", "count"});
  w.begin_row();
  w.cell(std::string("plain"));
  w.cell(0.5);
  w.cell(std::int64_t{7});
  w.end_row();
  w.begin_row();
  w.cell(std::string("needs,quoting"));
  w.cell(1.0 / 3.0);
  w.cell(std::int64_t{-1});
  w.end_row();

  testsup::TempDir dir("csv");
  w.save(dir.file("t.csv"));
  const auto table = read_csv(dir.file("t.csv"));
  CHECK(table.columns == std::vector<std::string>{"name", "value", "count"});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0][0] == "plain");
  CHECK(table.rows[1][0] == "needs,quoting");
  CHECK(table.number(0, table.column_index("value")) == 0.5);
  CHECK(table.number(1, table.column_index("value")) == 1.0 / 3.0);
  CHECK(table.number(1, table.column_index("count")) == -1.0);

  CsvWriter bad({"a", "b"});
  bad.begin_row();
  bad.cell(1.0);
  CHECK_THROWS_AS(bad.end_row(), Error);
}

TEST_CASE("read_csv reports unknown columns and missing files") {
  testsup::TempDir dir("csv2");
  {
    std::ofstream out(dir.file("x.csv"));
    out << "a,b\n1,2\n";
  }
  const auto t = read_csv(dir.file("x.csv"));
  CHECK(t.column_index("a") == 0);
  CHECK_THROWS_AS((void)t.column_index("zz"), Error);
  CHECK_THROWS_AS((void)read_csv(dir.file("absent.csv")), Error);
}

TEST_SUITE_END();
