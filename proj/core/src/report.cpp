#include "csm/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "csm/error.hpp"

namespace csm {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double kW = 640, kH = 420, kL = 70, kR = 20, kT = 40, kB = 60;
  double px(double x) const { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
  double py(double y) const { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }
};

Frame make_frame(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  return {x0, x1, y0, y1};
}

std::string svg_open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Frame::kW << "\" height=\"" << Frame::kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << Frame::kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
    << "</text>\n";
  return s.str();
}

std::string axes(const Frame& f, const std::string& xl, const std::string& yl) {
  std::ostringstream s;
  s << "<line x1=\"" << Frame::kL << "\" y1=\"" << Frame::kH - Frame::kB << "\" x2=\"" << Frame::kW - Frame::kR
    << "\" y2=\"" << Frame::kH - Frame::kB << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << Frame::kL << "\" y1=\"" << Frame::kT << "\" x2=\"" << Frame::kL << "\" y2=\""
    << Frame::kH - Frame::kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.3g", xv);
    std::snprintf(by, sizeof(by), "%.3g", yv);
    s << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << Frame::kH - Frame::kB + 16 << "\" text-anchor=\"middle\">" << bx
      << "</text>\n";
    s << "<text x=\"" << Frame::kL - 6 << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\">" << by
      << "</text>\n";
  }
  s << "<text x=\"" << (Frame::kL + Frame::kW - Frame::kR) / 2 << "\" y=\"" << Frame::kH - 18
    << "\" text-anchor=\"middle\">" << escape_xml(xl) << "</text>\n";
  s << "<text transform=\"translate(16," << (Frame::kT + Frame::kH - Frame::kB) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(yl) << "</text>\n";
  return s.str();
}

}  // namespace

void Table::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size())
    fail(ErrorCode::kDimensionMismatch, "table '" + name + "' expects " + std::to_string(columns.size()) + " cells");
  rows.push_back(std::move(row));
}

std::size_t Table::column(const std::string& col) const {
  auto it = std::find(columns.begin(), columns.end(), col);
  if (it == columns.end()) fail(ErrorCode::kInvalidArgument, "table '" + name + "' has no column '" + col + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

const Table& EvalReport::table(const std::string& name) const {
  for (const auto& t : tables)
    if (t.name == name) return t;
  fail(ErrorCode::kInvalidArgument, "report has no table '" + name + "'");
}

void EvalReport::merge(const EvalReport& other) {
  tables.insert(tables.end(), other.tables.begin(), other.tables.end());
  curves.insert(curves.end(), other.curves.begin(), other.curves.end());
}

std::string format_cell(const Cell& c) {
  if (const auto* s = std::get_if<std::string>(&c)) return *s;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", std::get<double>(c));
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

}  // namespace

std::string table_csv(const Table& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << csv_field(t.columns[i]);
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << csv_field(format_cell(row[i]));
    out << '\n';
  }
  return out.str();
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["tables"] = nlohmann::ordered_json::array();
  for (const auto& t : r.tables) {
    nlohmann::ordered_json jt;
    jt["name"] = t.name;
    jt["columns"] = t.columns;
    jt["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : t.rows) {
      nlohmann::ordered_json jr = nlohmann::ordered_json::array();
      for (const auto& c : row) {
        if (const auto* s = std::get_if<std::string>(&c))
          jr.push_back(*s);
        else
          jr.push_back(std::get<double>(c));
      }
      jt["rows"].push_back(jr);
    }
    j["tables"].push_back(jt);
  }
  j["curves"] = nlohmann::ordered_json::array();
  for (const auto& c : r.curves) j["curves"].push_back({{"name", c.name}, {"x", c.x}, {"y", c.y}});
  return j.dump(2) + "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& t : r.tables) write_text(dir / (t.name + ".csv"), table_csv(t));
  if (!r.curves.empty()) {
    std::ostringstream out;
    out << "curve,x,y\n";
    char buf[96];
    for (const auto& c : r.curves)
      for (std::size_t i = 0; i < c.x.size(); ++i) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", c.x[i], c.y[i]);
        out << csv_field(c.name) << buf;
      }
    write_text(dir / "curves.csv", out.str());
  }
  write_text(dir / "report.json", report_json(r));
}

std::string svg_line_chart(const std::vector<Curve>& curves, const std::string& title, const std::string& x_label,
                           const std::string& y_label) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      x0 = std::min(x0, c.x[i]);
      x1 = std::max(x1, c.x[i]);
      y0 = std::min(y0, c.y[i]);
      y1 = std::max(y1, c.y[i]);
    }
  if (curves.empty() || !std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  Frame f = make_frame(x0, x1, std::min(0.0, y0), y1);
  std::ostringstream s;
  s << svg_open(title) << axes(f, x_label, y_label);
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* colour = kPalette[k % 8];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < curves[k].x.size(); ++i)
      s << num(f.px(curves[k].x[i])) << ',' << num(f.py(curves[k].y[i])) << ' ';
    s << "\"/>\n";
    s << "<text x=\"" << Frame::kW - Frame::kR - 4 << "\" y=\"" << Frame::kT + 14 * (k + 1)
      << "\" text-anchor=\"end\" fill=\"" << colour << "\">" << escape_xml(curves[k].name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                          const std::string& title, const std::string& y_label) {
  double top = 0.0;
  for (double v : values)
    if (std::isfinite(v)) top = std::max(top, v);
  Frame f = make_frame(0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)), 0.0, top > 0 ? top * 1.1 : 1.0);
  std::ostringstream s;
  s << svg_open(title);
  s << "<line x1=\"" << Frame::kL << "\" y1=\"" << Frame::kH - Frame::kB << "\" x2=\"" << Frame::kW - Frame::kR
    << "\" y2=\"" << Frame::kH - Frame::kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    double yv = f.y1 * i / 4.0;
    char by[32];
    std::snprintf(by, sizeof(by), "%.3g", yv);
    s << "<text x=\"" << Frame::kL - 6 << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\">" << by
      << "</text>\n";
  }
  s << "<text transform=\"translate(16," << (Frame::kT + Frame::kH - Frame::kB) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = std::isfinite(values[i]) ? values[i] : 0.0;
    double xl = f.px(i + 0.15), xr = f.px(i + 0.85);
    s << "<rect x=\"" << num(xl) << "\" y=\"" << num(f.py(v)) << "\" width=\"" << num(xr - xl) << "\" height=\""
      << num(f.py(0) - f.py(v)) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    s << "<text transform=\"translate(" << num((xl + xr) / 2) << "," << Frame::kH - Frame::kB + 12
      << ") rotate(40)\" font-size=\"10\">" << escape_xml(i < labels.size() ? labels[i] : "") << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string svg_scatter(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& colour,
                        const std::string& title) {
  auto [xmin, xmax] = x.empty() ? std::pair{0.0, 1.0} : std::pair{*std::min_element(x.begin(), x.end()), *std::max_element(x.begin(), x.end())};
  auto [ymin, ymax] = y.empty() ? std::pair{0.0, 1.0} : std::pair{*std::min_element(y.begin(), y.end()), *std::max_element(y.begin(), y.end())};
  double cmin = colour.empty() ? 0.0 : *std::min_element(colour.begin(), colour.end());
  double cmax = colour.empty() ? 1.0 : *std::max_element(colour.begin(), colour.end());
  Frame f = make_frame(xmin, xmax, ymin, ymax);
  std::ostringstream s;
  s << svg_open(title) << axes(f, "embedding 1", "embedding 2");
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i) {
    double t = i < colour.size() && cmax > cmin ? (colour[i] - cmin) / (cmax - cmin) : 0.5;
    int r = static_cast<int>(40 + 200 * t), b = static_cast<int>(240 - 200 * t);
    s << "<circle cx=\"" << num(f.px(x[i])) << "\" cy=\"" << num(f.py(y[i])) << "\" r=\"2\" fill=\"rgb(" << r
      << ",80," << b << ")\" fill-opacity=\"0.6\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace csm
