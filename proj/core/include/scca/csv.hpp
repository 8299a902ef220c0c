#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace scca {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& cells);
  void row(const std::vector<double>& values);

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::filesystem::path path_;
};

// Header plus rows of a simple comma-separated file (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace scca
