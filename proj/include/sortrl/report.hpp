#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace sortrl {

// CSV writer that prints doubles with shortest round-trip formatting, so
// re-parsing a report reproduces every value bit-exactly.
class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path);
  void header(const std::vector<std::string>& names);
  void field(const std::string& s);
  void field(double v);
  void field(int64_t v);
  void field(int v) { field(static_cast<int64_t>(v)); }
  void end_row();

 private:
  std::ofstream os_;
  bool row_started_ = false;
  void sep();
};

std::string format_double(double v);  // shortest round-trip decimal

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column_index(const std::string& name) const;  // -1 when absent
  double number(size_t row, const std::string& column) const;
  const std::string& text(size_t row, const std::string& column) const;
};

CsvTable read_csv(const std::string& path);

// One robustness curve: mean episode reward vs perturbation budget with
// a +-1 standard error band.
struct PlotSeries {
  std::string label;
  std::string color;
  std::vector<double> eps;
  std::vector<double> mean;
  std::vector<double> std_err;
};

void write_reward_curve_svg(const std::string& path,
                            const std::vector<PlotSeries>& series,
                            const std::string& title);

}  // namespace sortrl
