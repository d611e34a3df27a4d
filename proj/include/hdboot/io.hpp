#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hdboot/mestim.hpp"

namespace hdboot {

// Headerless numeric CSV, one observation per line, response in the last column.
Dataset read_dataset_csv(std::istream& is);
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(const Dataset& ds, std::ostream& os);
void write_dataset_csv(const Dataset& ds, const std::string& path);

// One line of report.csv.
struct ReportRow {
  double kappa = 0.0;
  std::string scheme;
  std::string loss;
  std::string metric;
  double value = 0.0;
  double se = 0.0;
  int n_sims = 0;
};

inline constexpr const char* kReportHeader = "kappa,scheme,loss,metric,value,se,n_sims";

void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& os);
std::vector<ReportRow> read_report_csv(std::istream& is);

// Compact text form used for every number the tools print: shortest of %.10g.
std::string format_number(double x);

struct SvgSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional half-widths of error bars
};

// Minimal line chart with axes, ticks and a legend.
void write_line_chart_svg(const std::vector<SvgSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label, std::ostream& os);

// One chart per metric found in `rows`: x = kappa, one line per (scheme, loss).
// Returns the written file names.
std::vector<std::string> write_report_plots(const std::vector<ReportRow>& rows,
                                            const std::string& directory);

}  // namespace hdboot
