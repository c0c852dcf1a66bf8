#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mpcl/ablation.hpp"
#include "mpcl/error.hpp"
#include "mpcl/metrics.hpp"
#include "mpcl/trainer.hpp"

namespace mpcl::cli {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};

std::string fixed(double v, int p) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(p) << v;
  return s.str();
}

std::string tick_label(double v) {
  std::ostringstream s;
  s << std::setprecision(3) << v;
  return s.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

/// Round tick positions covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) t.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return t;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << text;
}

std::string opt(const std::optional<double>& x, int p) { return x ? fixed(*x, p) : "n/a"; }

std::string metrics_markdown(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "| volume | class | Dice (%) | Jaccard (%) | 95HD (voxels) | ASD (voxels) |\n|---|---|---|---|---|---|\n";
  auto row = [&](const std::string& id, const std::string& cls, const ClassMetrics& m) {
    os << "| " << id << " | " << cls << " | " << fixed(100 * m.dice, 2) << " | " << fixed(100 * m.jaccard, 2) << " | "
       << opt(m.hd95, 2) << " | " << opt(m.asd, 2) << " |\n";
  };
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.classes.size(); ++k) row(r.id, std::to_string(r.classes[k]), r.per_class[k]);
    if (r.classes.size() > 1) row(r.id, "mean", r.mean);
  }
  if (!reports.empty()) {
    const auto agg = aggregate_reports(reports);
    for (std::size_t k = 0; k < agg.classes.size(); ++k) row("**all**", std::to_string(agg.classes[k]), agg.per_class[k]);
    row("**all**", "mean", agg.mean);
  }
  return os.str();
}

/// Column arrays of a simple numeric CSV with one `#` version line and a header row.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& p, std::vector<std::string>& header) {
  std::istringstream is(read_file(p));
  std::string line;
  std::vector<std::vector<double>> cols;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (header.empty()) {
      header = cells;
      cols.resize(cells.size());
      continue;
    }
    for (std::size_t i = 0; i < cols.size(); ++i)
      cols[i].push_back(i < cells.size() && !cells[i].empty() ? std::stod(cells[i])
                                                              : std::numeric_limits<double>::quiet_NaN());
  }
  return cols;
}

}  // namespace

std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

std::string line_chart_svg(const std::vector<Series>& series, const ChartOptions& o) {
  const double left = 70, right = 160, top = 40, bottom = 55;
  const double pw = o.width - left - right, ph = o.height - top - bottom;
  auto usable = [&](double y) { return std::isfinite(y) && (!o.log_y || y > 0); };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.y[i])) continue;
      const double y = o.log_y ? std::log10(s.y[i]) : s.y[i];
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (o.log_y) {
    y0 = std::floor(y0);
    y1 = std::ceil(y1);
  }
  if (y1 == y0) y1 = y0 + 1;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << o.width << "\" height=\"" << o.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(o.title)
     << "</text>\n";
  os << "<g stroke=\"#ddd\">\n";
  std::vector<std::pair<double, std::string>> yt;
  if (o.log_y)
    for (double e = y0; e <= y1 + 1e-9; e += 1) yt.emplace_back(e, "1e" + std::to_string(static_cast<int>(e)));
  else
    for (double v : nice_ticks(y0, y1)) yt.emplace_back(v, tick_label(v));
  const auto xt = nice_ticks(x0, x1);
  for (const auto& [v, _] : yt) os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << sy(v) << "\" y2=\"" << sy(v) << "\"/>\n";
  for (double v : xt) os << "<line x1=\"" << sx(v) << "\" x2=\"" << sx(v) << "\" y1=\"" << top << "\" y2=\"" << top + ph << "\"/>\n";
  os << "</g>\n<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (const auto& [v, label] : yt)
    os << "<text x=\"" << left - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">" << label << "</text>\n";
  for (double v : xt)
    os << "<text x=\"" << sx(v) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << tick_label(v) << "</text>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << o.height - 12 << "\" text-anchor=\"middle\">" << escape(o.x_label)
     << "</text>\n<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(o.y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (usable(s.y[i])) os << fixed(sx(s.x[i]), 1) << ',' << fixed(sy(o.log_y ? std::log10(s.y[i]) : s.y[i]), 1) << ' ';
    os << "\"/>\n";
    const double ly = top + 10 + 18 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4
       << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<ReportFile> render_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<ReportFile> files;
  std::ostringstream index;
  index << "# Run report\n\nSource: `" << run_dir.string() << "`\n\n";

  if (const auto lp = run_dir / "losses.csv"; std::filesystem::exists(lp)) {
    std::ifstream in(lp);
    const auto rows = read_loss_log(in);
    const std::size_t window = std::max<std::size_t>(1, rows.size() / 100);
    const std::vector<std::pair<std::string, double LossBundle::*>> picks{
        {"total", &LossBundle::total}, {"L_seg (labeled)", &LossBundle::l_seg_l}, {"L_seg (mixed)", &LossBundle::l_seg_m},
        {"L_lc", &LossBundle::l_lc},   {"L_uc", &LossBundle::l_uc}};
    std::vector<Series> series;
    for (const auto& [name, field] : picks) {
      Series s{name, {}, {}};
      std::vector<double> raw;
      for (const auto& [step, b] : rows) {
        s.x.push_back(static_cast<double>(step));
        raw.push_back(b.*field);
      }
      if (std::all_of(raw.begin(), raw.end(), [](double v) { return v == 0.0; })) continue;
      s.y = moving_average(raw, window);
      series.push_back(std::move(s));
    }
    ChartOptions o{window > 1 ? "Training losses (moving average over " + std::to_string(window) + " steps)" : "Training losses", "step", "loss", true};
    const auto path = out_dir / "loss_curves.svg";
    write_file(path, line_chart_svg(series, o));
    files.push_back({"loss_curves", path, "image"});
    index << "## Loss curves\n\n![loss curves](loss_curves.svg)\n\n";
  }

  if (const auto ep = run_dir / "eval.csv"; std::filesystem::exists(ep)) {
    std::vector<std::string> header;
    const auto cols = read_numeric_csv(ep, header);
    if (cols.size() >= 2 && !cols[0].empty()) {
      const auto path = out_dir / "validation_dice.svg";
      write_file(path, line_chart_svg({{"mean Dice", cols[0], cols[1]}},
                                      {"Validation Dice", "step", "Dice", false}));
      files.push_back({"loss_curves", path, "image"});
      index << "## Validation Dice\n\n![validation dice](validation_dice.svg)\n\n";
    }
  }

  if (const auto mp = run_dir / "metrics.csv"; std::filesystem::exists(mp)) {
    std::ifstream in(mp);
    const auto reports = read_metrics_csv(in);
    const auto path = out_dir / "metrics.md";
    const auto table = metrics_markdown(reports);
    write_file(path, table);
    files.push_back({"metric_table", path, "markdown"});
    index << "## Final validation metrics\n\n" << table << "\n";
  }

  if (const auto ap = run_dir / "ablation.md"; std::filesystem::exists(ap)) {
    const auto table = read_file(ap);
    index << "## Ablation\n\n" << table << "\n";
  }

  const auto rp = out_dir / "report.md";
  write_file(rp, index.str());
  files.push_back({"metric_table", rp, "markdown"});
  return files;
}

}  // namespace mpcl::cli
