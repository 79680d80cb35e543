#include "sortrl/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sortrl {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::string& path) : os_(path, std::ios::trunc) {
  if (!os_) throw std::runtime_error("cannot open csv for writing: " + path);
}

void CsvWriter::sep() {
  if (row_started_) os_ << ',';
  row_started_ = true;
}

void CsvWriter::header(const std::vector<std::string>& names) {
  for (const auto& n : names) field(n);
  end_row();
}

void CsvWriter::field(const std::string& s) {
  sep();
  os_ << s;
}

void CsvWriter::field(double v) {
  sep();
  os_ << format_double(v);
}

void CsvWriter::field(int64_t v) {
  sep();
  os_ << v;
}

void CsvWriter::end_row() {
  os_ << '\n';
  row_started_ = false;
  if (!os_) throw std::runtime_error("csv write failed");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open csv: " + path);
  CsvTable table;
  std::string line;
  if (std::getline(is, line)) table.columns = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    table.rows.push_back(split_csv_line(line));
  }
  return table;
}

int CsvTable::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

double CsvTable::number(size_t row, const std::string& column) const {
  const std::string& s = text(row, column);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw std::runtime_error("csv: bad number '" + s + "'");
  return v;
}

const std::string& CsvTable::text(size_t row, const std::string& column) const {
  int c = column_index(column);
  if (c < 0) throw std::runtime_error("csv: missing column '" + column + "'");
  return rows.at(row).at(static_cast<size_t>(c));
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;

std::string fmt_tick(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

void write_reward_curve_svg(const std::string& path,
                            const std::vector<PlotSeries>& series,
                            const std::string& title) {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.eps.size(); ++i) {
      double lo = s.mean[i] - s.std_err[i];
      double hi = s.mean[i] + s.std_err[i];
      if (first) {
        xmin = xmax = s.eps[i];
        ymin = lo;
        ymax = hi;
        first = false;
      } else {
        xmin = std::min(xmin, s.eps[i]);
        xmax = std::max(xmax, s.eps[i]);
        ymin = std::min(ymin, lo);
        ymax = std::max(ymax, hi);
      }
    }
  }
  if (first) throw std::invalid_argument("svg plot: no data");
  if (xmax == xmin) xmax = xmin + 1.0;
  double pad = 0.05 * (ymax - ymin + 1e-12);
  ymin -= pad;
  ymax += pad;

  auto X = [&](double v) {
    return kLeft + (v - xmin) / (xmax - xmin) * (kWidth - kLeft - kRight);
  };
  auto Y = [&](double v) {
    return kHeight - kBottom -
           (v - ymin) / (ymax - ymin) * (kHeight - kTop - kBottom);
  };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open svg for writing: " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
     << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
     << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"28\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"18\">" << title << "</text>\n";

  // axes
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
     << kWidth - kRight << "\" y2=\"" << kHeight - kBottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft
     << "\" y2=\"" << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    double fx = xmin + (xmax - xmin) * t / 5.0;
    double fy = ymin + (ymax - ymin) * t / 5.0;
    os << "<line x1=\"" << X(fx) << "\" y1=\"" << kHeight - kBottom
       << "\" x2=\"" << X(fx) << "\" y2=\"" << kHeight - kBottom + 5
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << X(fx) << "\" y=\"" << kHeight - kBottom + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"12\">" << fmt_tick(fx) << "</text>\n";
    os << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << Y(fy) << "\" x2=\""
       << kLeft << "\" y2=\"" << Y(fy) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kLeft - 10 << "\" y=\"" << Y(fy) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"12\">" << fmt_tick(fy) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\""
     << kHeight - 18
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"14\">perturbation budget</text>\n";
  os << "<text x=\"20\" y=\"" << (kTop + kHeight - kBottom) / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" "
        "transform=\"rotate(-90 20 " << (kTop + kHeight - kBottom) / 2
     << ")\">episode reward</text>\n";

  double legend_y = kTop + 8;
  for (const auto& s : series) {
    // +-1 SE band
    os << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.15\" "
          "stroke=\"none\" points=\"";
    for (size_t i = 0; i < s.eps.size(); ++i) {
      os << X(s.eps[i]) << "," << Y(s.mean[i] + s.std_err[i]) << " ";
    }
    for (size_t i = s.eps.size(); i-- > 0;) {
      os << X(s.eps[i]) << "," << Y(s.mean[i] - s.std_err[i]) << " ";
    }
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"" << s.color
       << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < s.eps.size(); ++i) {
      os << X(s.eps[i]) << "," << Y(s.mean[i]) << " ";
    }
    os << "\"/>\n";
    os << "<line x1=\"" << kWidth - kRight - 150 << "\" y1=\"" << legend_y
       << "\" x2=\"" << kWidth - kRight - 120 << "\" y2=\"" << legend_y
       << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 112 << "\" y=\"" << legend_y + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
       << "</text>\n";
    legend_y += 18;
  }
  os << "</svg>\n";
  if (!os) throw std::runtime_error("svg write failed: " + path);
}

}  // namespace sortrl
