#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "jinfer/errors.hpp"
#include "jinfer/harness.hpp"

namespace jinfer {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

const char* kPalette[] = {"#3366cc", "#dc3912", "#109618", "#ff9900",
                          "#990099", "#0099c6", "#dd4477", "#66aa00"};

}  // namespace

void write_svg_line_chart(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series) {
  const double W = 760, H = 480;
  const double ml = 70, mr = 170, mt = 44, mb = 54;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double xmin = kNan, xmax = kNan, ymin = kNan, ymax = kNan;
  for (const Series& s : series)
    for (const SeriesPoint& p : s.points) {
      if (std::isnan(p.x) || std::isnan(p.y)) continue;
      if (std::isnan(xmin) || p.x < xmin) xmin = p.x;
      if (std::isnan(xmax) || p.x > xmax) xmax = p.x;
      if (std::isnan(ymin) || p.y < ymin) ymin = p.y;
      if (std::isnan(ymax) || p.y > ymax) ymax = p.y;
    }
  const bool empty = std::isnan(xmin);
  if (!empty) {
    if (xmax == xmin) {
      xmin -= 1.0;
      xmax += 1.0;
    }
    if (ymax == ymin) {
      ymin -= 1.0;
      ymax += 1.0;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
  }
  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"16\" font-weight=\"bold\">" << xml_escape(title) << "</text>\n";

  // axes
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
      << " transform=\"rotate(-90 18 " << mt + ph / 2 << ")\">" << xml_escape(y_label)
      << "</text>\n";

  if (empty) {
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\""
        << " fill=\"#888\">no data</text>\n";
  } else {
    const int kTicks = 5;
    for (int t = 0; t <= kTicks; ++t) {
      const double fx = xmin + (xmax - xmin) * t / kTicks;
      const double fy = ymin + (ymax - ymin) * t / kTicks;
      svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(fx)
          << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n";
      svg << "<text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
          << tick_label(fx) << "</text>\n";
      svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml << "\" y2=\""
          << sy(fy) << "\" stroke=\"black\"/>\n";
      svg << "<line x1=\"" << ml << "\" y1=\"" << sy(fy) << "\" x2=\"" << ml + pw << "\" y2=\""
          << sy(fy) << "\" stroke=\"#e0e0e0\"/>\n";
      svg << "<text x=\"" << ml - 9 << "\" y=\"" << sy(fy) + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
          << tick_label(fy) << "</text>\n";
    }

    for (std::size_t si = 0; si < series.size(); ++si) {
      const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
      std::ostringstream pts;
      int drawn = 0;
      for (const SeriesPoint& p : series[si].points) {
        if (std::isnan(p.x) || std::isnan(p.y)) continue;
        pts << sx(p.x) << ',' << sy(p.y) << ' ';
        ++drawn;
      }
      if (drawn >= 2)
        svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
      for (const SeriesPoint& p : series[si].points) {
        if (std::isnan(p.x) || std::isnan(p.y)) continue;
        svg << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\""
            << color << "\"/>\n";
      }
      // legend
      const double ly = mt + 10 + 20 * static_cast<double>(si);
      svg << "<line x1=\"" << ml + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 38
          << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      svg << "<text x=\"" << ml + pw + 44 << "\" y=\"" << ly + 4
          << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(series[si].name)
          << "</text>\n";
    }
  }
  svg << "</svg>\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("write_svg_line_chart: cannot write " + path);
  out << svg.str();
}

// ---------------------------------------------------------------------------
// write_report: rebuild standard charts from an experiment directory's CSVs.

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

double field_num(const std::string& s) {
  if (s.empty()) return kNan;
  return std::strtod(s.c_str(), nullptr);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("read_csv: cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (first) {
      t.header = std::move(fields);
      first = false;
    } else {
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

// "trace_uicl_N8_s3.csv" -> (8, 3); false when the name does not fit.
bool parse_trace_name(const std::string& stem, const std::string& prefix, int& n,
                      std::uint64_t& seed) {
  if (stem.rfind(prefix, 0) != 0) return false;
  const std::string rest = stem.substr(prefix.size());  // "8_s3"
  const std::size_t us = rest.find("_s");
  if (us == std::string::npos) return false;
  try {
    n = std::stoi(rest.substr(0, us));
    seed = std::stoull(rest.substr(us + 2));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

// Mean of column `value_col` grouped by the x column, one series per N.
std::vector<Series> mean_trace_series(const std::filesystem::path& dir,
                                      const std::string& prefix, const std::string& x_col,
                                      const std::string& value_col) {
  // N -> x -> (sum, count)
  std::map<int, std::map<double, std::pair<double, int>>> acc;
  std::vector<std::filesystem::path> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    int n = 0;
    std::uint64_t seed = 0;
    if (!parse_trace_name(p.stem().string(), prefix, n, seed)) continue;
    const CsvTable t = read_csv(p);
    const int xc = t.col(x_col), vc = t.col(value_col);
    if (xc < 0 || vc < 0) continue;
    for (const auto& row : t.rows) {
      const double x = field_num(row[static_cast<std::size_t>(xc)]);
      const double v = field_num(row[static_cast<std::size_t>(vc)]);
      if (std::isnan(x) || std::isnan(v)) continue;
      auto& cell = acc[n][x];
      cell.first += v;
      ++cell.second;
    }
  }
  std::vector<Series> series;
  for (const auto& [n, by_x] : acc) {
    Series s;
    s.name = "N=" + std::to_string(n);
    for (const auto& [x, sum_count] : by_x)
      s.points.push_back({x, sum_count.first / sum_count.second});
    series.push_back(std::move(s));
  }
  return series;
}

}  // namespace

std::vector<std::string> write_report(const std::string& experiment_dir) {
  const std::filesystem::path dir(experiment_dir);
  if (!std::filesystem::is_directory(dir))
    throw Error("write_report: not a directory: " + experiment_dir);
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& title, const std::string& xl,
                  const std::string& yl, const std::vector<Series>& series) {
    bool any = false;
    for (const Series& s : series)
      if (!s.points.empty()) any = true;
    if (!any) return;
    write_svg_line_chart((dir / name).string(), title, xl, yl, series);
    written.push_back(name);
  };

  if (std::filesystem::exists(dir / "metrics.csv")) {
    const CsvTable t = read_csv(dir / "metrics.csv");
    const int mc = t.col("method"), nc = t.col("N"), sc = t.col("status"),
              ac = t.col("accuracy"), oc = t.col("objective");
    if (mc >= 0 && nc >= 0 && sc >= 0) {
      // method -> N -> (sum, count) for each metric
      std::map<std::string, std::map<double, std::pair<double, int>>> acc_acc, acc_obj;
      for (const auto& row : t.rows) {
        if (row[static_cast<std::size_t>(sc)] != "OK") continue;
        const std::string& method = row[static_cast<std::size_t>(mc)];
        const double n = field_num(row[static_cast<std::size_t>(nc)]);
        if (ac >= 0) {
          const double a = field_num(row[static_cast<std::size_t>(ac)]);
          if (!std::isnan(a)) {
            acc_acc[method][n].first += a;
            ++acc_acc[method][n].second;
          }
        }
        if (oc >= 0) {
          const double o = field_num(row[static_cast<std::size_t>(oc)]);
          if (!std::isnan(o)) {
            acc_obj[method][n].first += o;
            ++acc_obj[method][n].second;
          }
        }
      }
      auto to_series = [](const std::map<std::string, std::map<double, std::pair<double, int>>>&
                              by_method) {
        std::vector<Series> series;
        for (const auto& [method, by_n] : by_method) {
          Series s;
          s.name = method;
          for (const auto& [n, sum_count] : by_n)
            s.points.push_back({n, sum_count.first / sum_count.second});
          series.push_back(std::move(s));
        }
        return series;
      };
      emit("report_accuracy_vs_n.svg", "Accuracy vs support size", "N", "accuracy",
           to_series(acc_acc));
      emit("report_objective_vs_n.svg", "Joint objective vs support size", "N", "objective",
           to_series(acc_obj));
    }
  }

  emit("report_uicl_accuracy.svg", "Relabeling rounds: accuracy by turn", "turn", "accuracy",
       mean_trace_series(dir, "trace_uicl_N", "turn", "accuracy"));
  emit("report_uicl_objective.svg", "Relabeling rounds: objective by turn", "turn", "objective",
       mean_trace_series(dir, "trace_uicl_N", "turn", "objective"));
  emit("report_uft_objective.svg", "Training objective by iteration", "iteration", "objective",
       mean_trace_series(dir, "trace_uft_N", "iteration", "objective"));
  emit("report_uft_entropy.svg", "Prior entropy by iteration", "iteration", "entropy",
       mean_trace_series(dir, "trace_uft_N", "iteration", "entropy"));

  if (std::filesystem::exists(dir / "estimator_curves.csv")) {
    const CsvTable t = read_csv(dir / "estimator_curves.csv");
    const int ic = t.col("iteration"), na = t.col("naive_mean"), lv = t.col("low_variance_mean");
    if (ic >= 0 && na >= 0 && lv >= 0) {
      Series s_na{"naive", {}}, s_lv{"low-variance", {}};
      for (const auto& row : t.rows) {
        const double x = field_num(row[static_cast<std::size_t>(ic)]);
        s_na.points.push_back({x, field_num(row[static_cast<std::size_t>(na)])});
        s_lv.points.push_back({x, field_num(row[static_cast<std::size_t>(lv)])});
      }
      emit("report_estimators.svg", "Gradient estimators: mean objective", "iteration",
           "objective", {s_na, s_lv});
    }
  }

  return written;
}

}  // namespace jinfer
