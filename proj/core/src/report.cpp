#include "tkvseg/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "tkvseg/errors.hpp"

namespace tkvseg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                    "#8c564b"};

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string opt(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
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

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Axis {
  double lo, hi;
  double map(double v, double p0, double p1) const {
    return hi == lo ? (p0 + p1) / 2 : p0 + (v - lo) / (hi - lo) * (p1 - p0);
  }
};

Axis padded(double lo, double hi) {
  if (hi <= lo) {
    const double m = std::max(1.0, std::abs(lo) * 0.1);
    return {lo - m, hi + m};
  }
  const double m = (hi - lo) * 0.08;
  return {lo - m, hi + m};
}

constexpr double kW = 640, kH = 440, kL = 70, kR = 20, kT = 30, kB = 60;

void frame(std::ostringstream& o, const std::string& title, const std::string& xlabel,
           const std::string& ylabel, const Axis& ax, const Axis& ay) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << ' ' << kH << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
    << kH - kT - kB << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double vx = ax.lo + (ax.hi - ax.lo) * i / 4.0;
    const double px = ax.map(vx, kL, kW - kR);
    o << "<text x=\"" << fixed(px) << "\" y=\"" << kH - kB + 16
      << "\" text-anchor=\"middle\" font-size=\"10\">" << fixed(vx, 1) << "</text>\n";
    const double vy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double py = ay.map(vy, kH - kB, kT);
    o << "<text x=\"" << kL - 6 << "\" y=\"" << fixed(py + 3)
      << "\" text-anchor=\"end\" font-size=\"10\">" << fixed(vy, 2) << "</text>\n";
  }
  o << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 20
    << "\" text-anchor=\"middle\" font-size=\"12\">" << xml_escape(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" text-anchor=\"middle\" font-size=\"12\""
    << " transform=\"rotate(-90 16 " << (kT + kH - kB) / 2 << ")\">" << xml_escape(ylabel)
    << "</text>\n";
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw ContractError("format_double failed");
  return std::string(buf, end);
}

std::vector<SummaryRow> summarize(const std::vector<CaseMetrics>& cases) {
  std::map<std::optional<std::size_t>, std::vector<const CaseMetrics*>> by_fold;
  for (const auto& c : cases) by_fold[c.fold].push_back(&c);
  std::vector<SummaryRow> rows;
  auto mean_row = [](const std::vector<const CaseMetrics*>& cs) {
    SummaryRow r;
    double abs_err = 0;
    std::size_t n_err = 0;
    for (const auto* c : cs) {
      r.dice_left += c->dice_left;
      r.dice_right += c->dice_right;
      r.dice_mean += c->dice_mean;
      r.tkv_pred_mm3 += c->tkv_pred_mm3;
      r.tkv_gt_mm3 += c->tkv_gt_mm3;
      if (c->tkv_pct_err) {
        abs_err += std::abs(*c->tkv_pct_err);
        ++n_err;
      }
    }
    const double n = static_cast<double>(cs.size());
    r.dice_left /= n;
    r.dice_right /= n;
    r.dice_mean /= n;
    r.tkv_pred_mm3 /= n;
    r.tkv_gt_mm3 /= n;
    if (n_err) r.tkv_pct_err = abs_err / static_cast<double>(n_err);
    return r;
  };
  if (cases.empty()) return rows;
  SummaryRow overall;
  for (const auto& [fold, cs] : by_fold) {
    SummaryRow r = mean_row(cs);
    r.label = "fold_mean";
    r.fold = fold;
    rows.push_back(r);
    overall.dice_left += r.dice_left;
    overall.dice_right += r.dice_right;
    overall.dice_mean += r.dice_mean;
  }
  const double k = static_cast<double>(by_fold.size());
  overall.label = "overall";
  overall.dice_left /= k;
  overall.dice_right /= k;
  overall.dice_mean /= k;
  std::vector<TkvResult> tkv;
  for (const auto& c : cases) {
    overall.tkv_pred_mm3 += c.tkv_pred_mm3;
    overall.tkv_gt_mm3 += c.tkv_gt_mm3;
    tkv.push_back({c.case_id, c.tkv_pred_mm3, c.tkv_gt_mm3, c.tkv_pct_err});
  }
  overall.tkv_pred_mm3 /= static_cast<double>(cases.size());
  overall.tkv_gt_mm3 /= static_cast<double>(cases.size());
  const MapeSummary m = mape(tkv);
  if (m.included) overall.tkv_pct_err = m.mape;
  rows.push_back(overall);
  return rows;
}

std::string format_metrics_csv(const std::vector<CaseMetrics>& cases) {
  std::ostringstream o;
  o << kMetricsCsvHeader << '\n';
  for (const auto& c : cases) {
    o << csv_field(c.case_id) << ',' << opt(c.fold) << ',' << format_double(c.dice_left) << ','
      << format_double(c.dice_right) << ',' << format_double(c.dice_mean) << ','
      << format_double(c.tkv_pred_mm3) << ',' << format_double(c.tkv_gt_mm3) << ','
      << opt(c.tkv_pct_err) << '\n';
  }
  for (const auto& r : summarize(cases)) {
    o << r.label << ',' << opt(r.fold) << ',' << format_double(r.dice_left) << ','
      << format_double(r.dice_right) << ',' << format_double(r.dice_mean) << ','
      << format_double(r.tkv_pred_mm3) << ',' << format_double(r.tkv_gt_mm3) << ','
      << opt(r.tkv_pct_err) << '\n';
  }
  return o.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_metrics_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path) {
  write_text_file(path, format_metrics_csv(cases));
}

std::string tkv_scatter_csv(const std::vector<CaseMetrics>& cases) {
  std::ostringstream o;
  o << "case_id,fold,tkv_gt_mm3,tkv_pct_err\n";
  for (const auto& c : cases) {
    if (!c.tkv_pct_err) continue;
    o << csv_field(c.case_id) << ',' << opt(c.fold) << ',' << format_double(c.tkv_gt_mm3) << ','
      << format_double(*c.tkv_pct_err) << '\n';
  }
  return o.str();
}

std::string tkv_scatter_svg(const std::vector<CaseMetrics>& cases) {
  double xlo = 0, xhi = 1, ylo = -5, yhi = 5;
  bool first = true;
  for (const auto& c : cases) {
    if (!c.tkv_pct_err) continue;
    if (first) {
      xlo = xhi = c.tkv_gt_mm3;
      first = false;
    }
    xlo = std::min(xlo, c.tkv_gt_mm3);
    xhi = std::max(xhi, c.tkv_gt_mm3);
    ylo = std::min(ylo, *c.tkv_pct_err);
    yhi = std::max(yhi, *c.tkv_pct_err);
  }
  const Axis ax = padded(xlo, xhi), ay = padded(ylo, yhi);
  std::ostringstream o;
  frame(o, "TKV percent error", "ground-truth TKV (mm^3)", "TKV error (%)", ax, ay);
  for (double band : {-5.0, 0.0, 5.0}) {
    const double py = ay.map(band, kH - kB, kT);
    o << "<line x1=\"" << kL << "\" y1=\"" << fixed(py) << "\" x2=\"" << kW - kR << "\" y2=\""
      << fixed(py) << "\" stroke=\"" << (band == 0 ? "#888888" : "#cc4444") << "\""
      << (band == 0 ? "" : " stroke-dasharray=\"5,4\"") << "/>\n";
  }
  for (const auto& c : cases) {
    if (!c.tkv_pct_err) continue;
    const std::size_t colour = c.fold ? *c.fold % std::size(kPalette) : 0;
    o << "<circle cx=\"" << fixed(ax.map(c.tkv_gt_mm3, kL, kW - kR)) << "\" cy=\""
      << fixed(ay.map(*c.tkv_pct_err, kH - kB, kT)) << "\" r=\"4\" fill=\"" << kPalette[colour]
      << "\"><title>" << xml_escape(c.case_id) << "</title></circle>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string convergence_csv(const std::vector<ConvergenceSeries>& series) {
  std::ostringstream o;
  o << "series,epoch,mean_kidney_dice\n";
  for (const auto& [name, log] : series) {
    for (const auto& p : log.points()) {
      o << csv_field(name) << ',' << p.epoch << ',' << format_double(p.value) << '\n';
    }
  }
  return o.str();
}

std::string convergence_svg(const std::vector<ConvergenceSeries>& series) {
  double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  for (const auto& [name, log] : series) {
    for (const auto& p : log.points()) {
      xhi = std::max(xhi, static_cast<double>(p.epoch));
      ylo = std::min(ylo, p.value);
      yhi = std::max(yhi, p.value);
    }
  }
  const Axis ax{xlo, xhi}, ay{ylo, yhi};
  std::ostringstream o;
  frame(o, "Validation mean kidney dice", "epoch", "dice", ax, ay);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& [name, log] = series[s];
    const char* colour = kPalette[s % std::size(kPalette)];
    if (!log.empty()) {
      o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
      for (const auto& p : log.points()) {
        o << fixed(ax.map(static_cast<double>(p.epoch), kL, kW - kR)) << ','
          << fixed(ay.map(p.value, kH - kB, kT)) << ' ';
      }
      o << "\"/>\n";
    }
    o << "<text x=\"" << kL + 10 << "\" y=\"" << kT + 16 + 14 * s << "\" font-size=\"11\" fill=\""
      << colour << "\">" << xml_escape(name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace tkvseg
