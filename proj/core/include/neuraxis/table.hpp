#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neuraxis {

// Shortest-exact float formatting: 17 significant digits round-trip doubles.
std::string format_g17(double x);

// CSV with fixed column order, '.' decimal separator, '\n' line endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns);

  void begin_row();
  void cell(const std::string& s);
  void cell(double x);
  void cell(std::int64_t x);
  void end_row();

  const std::string& str() const { return buf_; }
  void save(const std::string& path) const;

 private:
  std::vector<std::string> columns_;
  std::string buf_;
  std::size_t row_cells_ = 0;
  bool in_row_ = false;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const;
  double number(std::size_t row, int col) const;
};

CsvTable read_csv(const std::string& path);

}  // namespace neuraxis
