#pragma once

// Minimal SVG line charts for training curves.

#include <filesystem>
#include <string>
#include <vector>

namespace mmi::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

void write_line_chart(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series);

/// Parses a CSV with a header row into named numeric columns.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  const std::vector<double> column(const std::string& name) const;
};
Table read_csv(const std::filesystem::path& path);

}  // namespace mmi::plot
