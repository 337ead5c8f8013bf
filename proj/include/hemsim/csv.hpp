#pragma once

/**
 * @file
 * @brief Minimal CSV reading for the numeric files the tools exchange
 * (no quoting; every cell is a number or a bare label).
 */

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace hemsim::csv {

/// Splits on commas and trims spaces and a trailing carriage return.
std::vector<std::string> split(const std::string & line);

/// Whole-cell number parse; errors name the line and column.
double parse_number(const std::string & cell, std::size_t line_no, const std::string & column);

struct Table
{
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  ///< 1-based file line of each row

  /// Index of a column; throws a schema error naming it when absent.
  std::size_t column(const std::string & name) const;
  bool has_column(const std::string & name) const;
  double number(std::size_t row, std::size_t col) const;
};

/// Reads header and rows; blank lines are skipped, ragged rows rejected.
Table read(const std::filesystem::path & path);

}  // namespace hemsim::csv
