#include "neuraxis/table.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "neuraxis/error.hpp"

namespace neuraxis {

std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += columns_[i];
  }
  buf_ += '\n';
}

void CsvWriter::begin_row() {
  if (in_row_) throw_invalid("csv: begin_row inside an open row");
  in_row_ = true;
  row_cells_ = 0;
}

void CsvWriter::cell(const std::string& s) {
  if (!in_row_) throw_invalid("csv: cell outside a row");
  if (row_cells_) buf_ += ',';
  if (s.find_first_of(",\"\n") != std::string::npos) {
    buf_ += '"';
    for (char c : s) {
      if (c == '"') buf_ += '"';
      buf_ += c;
    }
    buf_ += '"';
  } else {
    buf_ += s;
  }
  ++row_cells_;
}

void CsvWriter::cell(double x) { cell(format_g17(x)); }
void CsvWriter::cell(std::int64_t x) { cell(std::to_string(x)); }

void CsvWriter::end_row() {
  if (!in_row_) throw_invalid("csv: end_row outside a row");
  if (row_cells_ != columns_.size())
    throw_invalid("csv: row has " + std::to_string(row_cells_) + " cells, expected " +
                  std::to_string(columns_.size()));
  buf_ += '\n';
  in_row_ = false;
}

void CsvWriter::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("cannot open for writing: " + path);
  f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!f) throw_io("write failed: " + path);
}

int CsvTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  throw_io("csv: no column named '" + name + "'");
}

double CsvTable::number(std::size_t row, int col) const {
  return std::stod(rows.at(row).at(static_cast<std::size_t>(col)));
}

namespace {
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"' && cur.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_io("cannot open: " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(f, line)) throw_io("empty csv: " + path);
  t.columns = split_line(line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.columns.size())
      throw_io("csv row width mismatch in " + path);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace neuraxis
