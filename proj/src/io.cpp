#include "hdboot/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "hdboot/error.hpp"

namespace hdboot {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text, std::size_t line_no) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) {
    throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": '" + t + "' is not a number");
  }
  return v;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double x, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// About five round tick values covering [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= 6.0) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + 1e-9 * step; t += step) {
    out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

}  // namespace

Dataset read_dataset_csv(std::istream& is) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    for (const std::string& f : split(line, ',')) row.push_back(parse_double(f, line_no));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + " has " +
                                     std::to_string(row.size()) + " fields, expected " +
                                     std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().size() < 2) {
    throw Error(ErrorCode::Io, "data needs at least one predictor column and a response column");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(rows.front().size()) - 1;
  Dataset ds;
  ds.X.resize(n, p);
  ds.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) ds.X(i, j) = rows[i][j];
    ds.y[i] = rows[i][p];
  }
  return ds;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return read_dataset_csv(in);
}

void write_dataset_csv(const Dataset& ds, std::ostream& os) {
  char buf[32];
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.p(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.X(i, j));
      os << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", ds.y[i]);
    os << buf << '\n';
  }
}

void write_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_dataset_csv(ds, out);
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x == 0.0 ? 0.0 : x);
  return buf;
}

void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& os) {
  os << kReportHeader << '\n';
  for (const ReportRow& r : rows) {
    os << format_number(r.kappa) << ',' << r.scheme << ',' << r.loss << ',' << r.metric << ','
       << format_number(r.value) << ',' << format_number(r.se) << ',' << r.n_sims << '\n';
  }
}

std::vector<ReportRow> read_report_csv(std::istream& is) {
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != kReportHeader) throw Error(ErrorCode::Io, "report header must be '" + std::string(kReportHeader) + "'");
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 7) throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": expected 7 fields");
    ReportRow r;
    r.kappa = parse_double(f[0], line_no);
    r.scheme = f[1];
    r.loss = f[2];
    r.metric = f[3];
    r.value = parse_double(f[4], line_no);
    r.se = parse_double(f[5], line_no);
    r.n_sims = static_cast<int>(parse_double(f[6], line_no));
    rows.push_back(r);
  }
  return rows;
}

void write_line_chart_svg(const std::vector<SvgSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label, std::ostream& os) {
  const double W = 640, H = 420, left = 70, right = 180, top = 40, bottom = 55;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const SvgSeries& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i] - e);
      ymax = std::max(ymax, s.y[i] + e);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + (ymax - y) / (ymax - ymin) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << escape_xml(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(xmin, xmax)) {
    os << "<line x1=\"" << fixed(sx(t)) << "\" y1=\"" << top + ph << "\" x2=\"" << fixed(sx(t))
       << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fixed(sx(t)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << format_number(t) << "</text>\n";
  }
  for (double t : ticks(ymin, ymax)) {
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << fixed(sy(t)) << "\" x2=\"" << left + pw
       << "\" y2=\"" << fixed(sy(t)) << "\" stroke=\"#dddddd\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << fixed(sy(t) + 4) << "\" text-anchor=\"end\">"
       << format_number(t) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << escape_xml(x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape_xml(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const SvgSeries& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      points += fixed(sx(s.x[i])) + "," + fixed(sy(s.y[i])) + " ";
    }
    if (!points.empty()) points.pop_back();
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"" << points
       << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << "<circle cx=\"" << fixed(sx(s.x[i])) << "\" cy=\"" << fixed(sy(s.y[i]))
         << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
      if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0.0) {
        os << "<line x1=\"" << fixed(sx(s.x[i])) << "\" y1=\"" << fixed(sy(s.y[i] - s.err[i]))
           << "\" x2=\"" << fixed(sx(s.x[i])) << "\" y2=\"" << fixed(sy(s.y[i] + s.err[i]))
           << "\" stroke=\"" << colour << "\"/>\n";
      }
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32
       << "\" y2=\"" << ly << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
}

std::vector<std::string> write_report_plots(const std::vector<ReportRow>& rows,
                                            const std::string& directory) {
  // metric -> series name -> (kappa -> (value, se))
  std::map<std::string, std::map<std::string, std::map<double, std::pair<double, double>>>> by_metric;
  for (const ReportRow& r : rows) {
    by_metric[r.metric][r.scheme + " / " + r.loss][r.kappa] = {r.value, r.se};
  }
  std::filesystem::create_directories(directory);
  std::vector<std::string> written;
  for (const auto& [metric, lines] : by_metric) {
    std::vector<SvgSeries> series;
    for (const auto& [name, points] : lines) {
      SvgSeries s;
      s.name = name;
      for (const auto& [k, vs] : points) {
        s.x.push_back(k);
        s.y.push_back(vs.first);
        s.err.push_back(vs.second);
      }
      series.push_back(std::move(s));
    }
    const std::string file = "plot_" + metric + ".svg";
    std::ofstream out(std::filesystem::path(directory) / file);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + file + "' in '" + directory + "'");
    write_line_chart_svg(series, metric, "p/n", metric, out);
    written.push_back(file);
  }
  return written;
}

}  // namespace hdboot
