#include "hemsim/csv.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hemsim::csv {

std::vector<std::string> split(const std::string & line)
{
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) { cell.pop_back(); }
    while (!cell.empty() && cell.front() == ' ') { cell.erase(cell.begin()); }
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') { out.emplace_back(); }
  return out;
}

double parse_number(const std::string & cell, std::size_t line_no, const std::string & column)
{
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used == 0 || used != cell.size()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": cannot parse '" + cell + "' in column " + column);
  }
  return v;
}

std::size_t Table::column(const std::string & name) const
{
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) { throw std::runtime_error(source + ": schema violation, missing column '" + name + "'"); }
  return static_cast<std::size_t>(it - header.begin());
}

bool Table::has_column(const std::string & name) const
{
  return std::find(header.begin(), header.end(), name) != header.end();
}

double Table::number(std::size_t row, std::size_t col) const
{
  return parse_number(rows.at(row).at(col), line_numbers.at(row), header.at(col));
}

Table read(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open " + path.string()); }
  Table t;
  t.source = path.string();
  std::string line;
  if (!std::getline(in, line)) { throw std::runtime_error(t.source + ": empty file, header required"); }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) { line.erase(0, 3); }
  t.header = split(line);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") { continue; }
    auto cells = split(line);
    if (cells.size() != t.header.size()) {
      throw std::runtime_error(t.source + " line " + std::to_string(line_no) + ": expected " +
                               std::to_string(t.header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  return t;
}

}  // namespace hemsim::csv
