#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace csm {

using Cell = std::variant<std::string, double>;

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add_row(std::vector<Cell> row);
  /// Column index by name; throws kInvalidArgument when absent.
  std::size_t column(const std::string& name) const;
};

struct Curve {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct EvalReport {
  std::vector<Table> tables;
  std::vector<Curve> curves;

  const Table& table(const std::string& name) const;
  void merge(const EvalReport& other);
};

/// Numbers are written with 17 significant digits so reports round-trip.
std::string format_cell(const Cell& c);
std::string table_csv(const Table& t);
std::string report_json(const EvalReport& r);

/// Writes <name>.csv per table, curves.csv and report.json into dir.
void write_report(const EvalReport& r, const std::filesystem::path& dir);

/// Minimal SVG charts.
std::string svg_line_chart(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                           const std::string& y_label);
std::string svg_bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                          const std::string& title, const std::string& y_label);
std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& colour,
                        const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace csm
