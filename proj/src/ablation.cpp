#include "mpcl/ablation.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mpcl/error.hpp"

namespace mpcl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string num(double x, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << x;
  return s.str();
}

std::string csv_num(double x) {
  std::ostringstream s;
  s.precision(10);
  s << x;
  return s.str();
}

}  // namespace

std::vector<AblationRow> parse_ablation_matrix(const std::string& text) {
  std::vector<AblationRow> rows;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    AblationRow row;
    std::string body = line;
    if (const auto colon = line.find(':'); colon != std::string::npos) {
      row.name = trim(line.substr(0, colon));
      body = line.substr(colon + 1);
    }
    std::istringstream words(body);
    std::string w;
    while (words >> w) {
      if (w.find('=') == std::string::npos)
        throw Error(ErrorCode::Config,
                    "matrix line " + std::to_string(lineno) + ": '" + w + "' is not key=value");
      row.overrides.push_back(w);
    }
    if (row.name.empty()) {
      for (const auto& o : row.overrides) row.name += (row.name.empty() ? "" : " ") + o;
      if (row.name.empty()) row.name = "base";
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::Config, "ablation matrix has no rows");
  return rows;
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  m.count = static_cast<int>(values.size());
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::vector<AblationSummary> run_ablation(const RunConfig& base, const std::vector<AblationRow>& rows,
                                          const AblationOptions& options, std::vector<AblationRun>* runs) {
  if (options.seeds < 1) throw Error(ErrorCode::InvalidParam, "ablation needs at least one seed");
  std::vector<AblationSummary> out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    AblationSummary summary;
    summary.row = rows[r].name;
    std::vector<double> dice, jaccard, hd95, asd, spe;
    for (int s = 0; s < options.seeds; ++s) {
      RunConfig cfg = base;
      apply_overrides(cfg, rows[r].overrides);
      cfg.seed = options.first_seed + static_cast<std::uint64_t>(s);
      auto data = load_data(cfg);
      cfg.validate();
      if (s == 0) summary.config = cfg;
      if (options.progress)
        options.progress("row " + std::to_string(r + 1) + "/" + std::to_string(rows.size()) + " '" + rows[r].name +
                         "' seed " + std::to_string(cfg.seed));
      Trainer trainer(cfg, data.samples, data.split);
      RunOptions ro;
      if (options.run_root)
        ro.out_dir = *options.run_root / (std::to_string(r) + "_s" + std::to_string(cfg.seed));
      const auto res = run_training(trainer, ro);
      const auto& m = res.final_aggregate.mean;
      dice.push_back(m.dice);
      jaccard.push_back(m.jaccard);
      if (m.hd95) hd95.push_back(*m.hd95);
      if (m.asd) asd.push_back(*m.asd);
      spe.push_back(res.seconds_per_epoch);
      if (runs) runs->push_back({rows[r].name, cfg.seed, res.final_aggregate, res.seconds_per_epoch});
    }
    summary.dice = mean_std(dice);
    summary.jaccard = mean_std(jaccard);
    summary.hd95 = mean_std(hd95);
    summary.asd = mean_std(asd);
    summary.seconds_per_epoch = mean_std(spe);
    out.push_back(std::move(summary));
  }
  return out;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationSummary>& rows) {
  os << kAblationCsvVersion << '\n'
     << "row,method,variant,gamma1,gamma2,k,consistency,augment,seeds,dice_mean,dice_std,jaccard_mean,jaccard_std,"
        "hd95_mean,hd95_std,asd_mean,asd_std,seconds_per_epoch_mean,seconds_per_epoch_std\n";
  for (const auto& r : rows) {
    const auto& c = r.config;
    os << '"' << r.row << '"' << ',' << to_string(c.method) << ',' << to_string(c.fusion_variant) << ','
       << csv_num(c.fusion.gamma1()) << ',' << csv_num(c.fusion.gamma2()) << ',' << c.model.feature_tap_k << ','
       << to_string(c.consistency_kind) << ',' << to_string(c.augment_kind) << ',' << r.dice.count;
    for (const auto* m : {&r.dice, &r.jaccard, &r.hd95, &r.asd, &r.seconds_per_epoch}) {
      if (m->count == 0)
        os << ",,";
      else
        os << ',' << csv_num(m->mean) << ',' << csv_num(m->std);
    }
    os << '\n';
  }
}

void write_ablation_runs_csv(std::ostream& os, const std::vector<AblationRun>& runs) {
  os << "# mpcl-ablation-runs v1\nrow,seed,dice,jaccard,hd95,asd,seconds_per_epoch\n";
  auto opt = [](const std::optional<double>& x) { return x ? csv_num(*x) : std::string(); };
  for (const auto& r : runs)
    os << '"' << r.row << '"' << ',' << r.seed << ',' << csv_num(r.aggregate.mean.dice) << ','
       << csv_num(r.aggregate.mean.jaccard) << ',' << opt(r.aggregate.mean.hd95) << ',' << opt(r.aggregate.mean.asd)
       << ',' << csv_num(r.seconds_per_epoch) << '\n';
}

std::string ablation_markdown(const std::vector<AblationSummary>& rows) {
  std::ostringstream os;
  os << "| row | method | variant | γ1 | γ2 | k | consistency | augment | Dice (%) | Jaccard (%) | 95HD | ASD | s/epoch |\n"
     << "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  auto pm = [](const MeanStd& m, double scale, int precision) {
    if (m.count == 0) return std::string("n/a");
    return num(m.mean * scale, precision) + " ± " + num(m.std * scale, precision);
  };
  for (const auto& r : rows) {
    const auto& c = r.config;
    os << "| " << r.row << " | " << to_string(c.method) << " | " << to_string(c.fusion_variant) << " | "
       << num(c.fusion.gamma1(), 2) << " | " << num(c.fusion.gamma2(), 2) << " | " << c.model.feature_tap_k << " | "
       << to_string(c.consistency_kind) << " | " << to_string(c.augment_kind) << " | " << pm(r.dice, 100, 2) << " | "
       << pm(r.jaccard, 100, 2) << " | " << pm(r.hd95, 1, 2) << " | " << pm(r.asd, 1, 2) << " | "
       << pm(r.seconds_per_epoch, 1, 3) << " |\n";
  }
  return os.str();
}

}  // namespace mpcl
