#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "mpcl/ablation.hpp"
#include "mpcl/error.hpp"
#include "mpcl/synthdata.hpp"
#include "mpcl/trainer.hpp"
#include "mpcl/volume_io.hpp"
#include "report.hpp"

namespace mpcl::cli {

namespace fs = std::filesystem;

namespace {

struct Artifact {
  std::string kind;
  fs::path path;
  std::string format;
};

std::string format_of(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".csv") return "csv";
  if (ext == ".json") return "json";
  if (ext == ".svg") return "image";
  if (ext == ".md") return "markdown";
  if (ext == ".bin") return "binary";
  return "text";
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

/// `<dir>/run_manifest.json` listing every artifact relative to `dir`; the manifest lists itself last.
void write_run_manifest(const fs::path& dir, const std::string& command, const std::vector<Artifact>& artifacts,
                        const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["tool"] = "mpcl";
  j["command"] = command;
  j["created"] = utc_now();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  j["artifacts"] = nlohmann::json::array();
  auto add = [&](const Artifact& a) {
    j["artifacts"].push_back({{"kind", a.kind}, {"path", fs::relative(a.path, dir).generic_string()}, {"format", a.format}});
  };
  for (const auto& a : artifacts) add(a);
  add({"manifest", dir / "run_manifest.json", "json"});
  std::ofstream out(dir / "run_manifest.json");
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "run_manifest.json").string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
  out << s;
}

std::string kind_of_training_file(const fs::path& p) {
  const auto name = p.filename().string();
  if (name == "losses.csv" || name == "eval.csv") return "log";
  if (name == "checkpoint.bin") return "checkpoint";
  return "metric_table";
}

/// Base config: defaults, then --config, then --data, then --set overrides in order.
RunConfig build_config(const std::string& config_path, const std::string& data_root,
                       const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (!data_root.empty()) cfg.data_root = data_root;
  apply_overrides(cfg, overrides);
  return cfg;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  bool quiet = false;
  void say(const std::string& s) const {
    if (!quiet) out << s << std::endl;
  }
};

// ---------------------------------------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string task = "ellipsoid";
  int count = 50;
  std::uint64_t seed = 0;
  std::string shape = "32x32x32";
  double noise = 0.5;
  double labeled_fraction = 0.2;
  int val_count = 10;
  std::string out;
};

void add_gen_data(CLI::App& app, GenDataArgs& a) {
  auto* c = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset on disk");
  c->add_option("--task", a.task, "ellipsoid | nested_tubes")->capture_default_str();
  c->add_option("--count", a.count, "number of volumes")->capture_default_str();
  c->add_option("--seed", a.seed, "generator and split seed")->capture_default_str();
  c->add_option("--shape", a.shape, "volume shape HxWxD")->capture_default_str();
  c->add_option("--noise", a.noise, "Gaussian noise standard deviation")->capture_default_str();
  c->add_option("--labeled-fraction", a.labeled_fraction, "labeled share of the training volumes")->capture_default_str();
  c->add_option("--val-count", a.val_count, "validation volumes")->capture_default_str();
  c->add_option("--out", a.out, "output directory")->required();
}

int gen_data(const GenDataArgs& a, const Context& ctx) {
  RunConfig probe;
  probe.set("data.shape", a.shape);
  PhantomSpec spec;
  spec.task = parse_phantom_task(a.task);
  spec.volume_shape = probe.phantom.volume_shape;
  spec.count = a.count;
  spec.seed = a.seed;
  spec.noise_std = a.noise;
  spec.labeled_fraction = a.labeled_fraction;
  spec.val_count = a.val_count;
  spec.validate();
  const auto ds = generate(spec);
  const fs::path root(a.out);
  const fs::path vols = root / "volumes";
  fs::create_directories(vols);
  const int classes = task_classes(spec.task);
  std::vector<Artifact> artifacts;
  for (const auto& s : ds.samples) {
    write_volume(vols, s, classes);
    artifacts.push_back({"dataset", vols / (s.id + ".raw"), "binary"});
    artifacts.push_back({"dataset", vols / (s.id + ".json"), "json"});
    if (s.has_label()) {
      artifacts.push_back({"dataset", vols / (s.id + "_label.raw"), "binary"});
      artifacts.push_back({"dataset", vols / (s.id + "_label.json"), "json"});
    }
  }
  write_manifest(root, {to_string(spec.task), classes, spec.volume_shape, ds.split});
  artifacts.push_back({"dataset", root / "manifest.json", "json"});
  write_run_manifest(root, "gen-data", artifacts,
                     {{"task", a.task}, {"count", a.count}, {"seed", a.seed}, {"noise_std", a.noise}});
  ctx.say("wrote " + std::to_string(ds.samples.size()) + " volumes (" + std::to_string(ds.split.labeled.size()) +
          " labeled, " + std::to_string(ds.split.unlabeled.size()) + " unlabeled, " +
          std::to_string(ds.split.validation.size()) + " validation) to " + root.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> overrides;
  bool resume = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train a model and write logs, checkpoint and final metrics");
  c->add_option("--config", a.config, "config file of `key = value` lines")->check(CLI::ExistingFile);
  c->add_option("--data", a.data, "dataset directory from gen-data (default: generate in memory)");
  c->add_option("--out", a.out, "run directory")->required();
  c->add_option("--set", a.overrides, "config override key=value (repeatable)");
  c->add_flag("--resume", a.resume, "continue from <out>/checkpoint.bin and append to its logs");
}

int train(const TrainArgs& a, const Context& ctx) {
  auto cfg = build_config(a.config, a.data, a.overrides);
  auto data = load_data(cfg);
  cfg.validate();
  const fs::path out(a.out);
  fs::create_directories(out);
  Trainer trainer(cfg, data.samples, data.split);
  if (a.resume) {
    trainer.load_checkpoint(out / "checkpoint.bin");
    ctx.say("resuming at step " + std::to_string(trainer.state().step));
  }
  write_text(out / "config.txt", cfg.to_text());
  RunOptions ro;
  ro.out_dir = out;
  ro.append_logs = a.resume;
  ro.progress = [&](const std::string& m) { ctx.say(m); };
  const auto summary = run_training(trainer, ro);
  write_text(out / "metrics.json", metrics_json(summary.final_reports) + "\n");
  std::vector<Artifact> artifacts{{"config", out / "config.txt", "text"}};
  for (const auto& p : summary.artifacts) artifacts.push_back({kind_of_training_file(p), p, format_of(p)});
  artifacts.push_back({"metric_table", out / "metrics.json", "json"});
  write_run_manifest(out, "train", artifacts,
                     {{"config_hash", hex(cfg.hash())},
                      {"steps", trainer.state().step},
                      {"train_seconds", summary.train_seconds},
                      {"seconds_per_epoch", summary.seconds_per_epoch},
                      {"validation_dice", summary.final_aggregate.mean.dice}});
  std::ostringstream m;
  m << "final validation dice " << summary.final_aggregate.mean.dice << " after " << trainer.state().step
    << " steps (" << std::fixed << std::setprecision(1) << summary.train_seconds << " s training)";
  ctx.say(m.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string split = "validation";
  std::string data;
  std::string out;
  std::string json;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* c = app.add_subcommand("eval", "Evaluate a checkpoint on one split of its dataset");
  c->add_option("--checkpoint", a.checkpoint, "checkpoint.bin written by train")->required()->check(CLI::ExistingFile);
  c->add_option("--split", a.split, "validation | labeled | unlabeled | all")
      ->check(CLI::IsMember({"validation", "labeled", "unlabeled", "all"}))
      ->capture_default_str();
  c->add_option("--data", a.data, "dataset directory (default: the one recorded in the checkpoint)");
  c->add_option("--out", a.out, "metrics CSV path (default: standard output)");
  c->add_option("--json", a.json, "also write a JSON summary here");
}

int eval(const EvalArgs& a, const Context& ctx) {
  auto cfg = read_checkpoint_config(a.checkpoint);
  if (!a.data.empty()) cfg.data_root = a.data;
  auto data = load_data(cfg);
  Trainer trainer(cfg, data.samples, data.split);
  trainer.load_checkpoint(a.checkpoint, false);
  std::vector<std::string> ids;
  const auto& s = trainer.split();
  if (a.split == "validation" || a.split == "all") ids.insert(ids.end(), s.validation.begin(), s.validation.end());
  if (a.split == "labeled" || a.split == "all") ids.insert(ids.end(), s.labeled.begin(), s.labeled.end());
  if (a.split == "unlabeled") {
    for (const auto& id : s.unlabeled)
      if (trainer.sample(id).has_label()) ids.push_back(id);
    if (ids.empty()) throw Error(ErrorCode::InvalidLabel, "the unlabeled split carries no reference labels");
  }
  if (ids.empty()) throw Error(ErrorCode::EmptySplit, "split '" + a.split + "' is empty");
  const auto reports = trainer.evaluate(ids);
  std::vector<Artifact> artifacts;
  if (a.out.empty()) {
    write_metrics_csv(ctx.out, reports);
  } else {
    const fs::path p(a.out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    if (!f) throw Error(ErrorCode::Io, "cannot write " + p.string());
    write_metrics_csv(f, reports);
    artifacts.push_back({"metric_table", fs::absolute(p), "csv"});
  }
  if (!a.json.empty()) {
    write_text(a.json, metrics_json(reports) + "\n");
    artifacts.push_back({"metric_table", fs::absolute(a.json), "json"});
  }
  if (!a.out.empty()) {
    const auto dir = fs::absolute(a.out).parent_path();
    write_run_manifest(dir, "eval", artifacts, {{"checkpoint", a.checkpoint}, {"split", a.split}});
    std::ostringstream m;
    m << "mean dice " << aggregate_reports(reports).mean.dice << " over " << reports.size() << " volumes";
    ctx.say(m.str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string matrix;
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> overrides;
  int seeds = 3;
  std::uint64_t first_seed = 0;
  bool keep_runs = false;
};

void add_ablate(CLI::App& app, AblateArgs& a) {
  auto* c = app.add_subcommand("ablate", "Train every row of an ablation matrix over several seeds");
  c->add_option("--matrix", a.matrix, "matrix file: `name : key=value ...` per line")->required()->check(CLI::ExistingFile);
  c->add_option("--config", a.config, "base config file")->check(CLI::ExistingFile);
  c->add_option("--data", a.data, "dataset directory (default: generate in memory)");
  c->add_option("--out", a.out, "output directory")->required();
  c->add_option("--set", a.overrides, "base config override key=value (repeatable)");
  c->add_option("--seeds", a.seeds, "seeds per row")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--first-seed", a.first_seed, "train.seed of the first run of each row")->capture_default_str();
  c->add_flag("--keep-runs", a.keep_runs, "keep each run's logs and checkpoint under <out>/runs");
}

int ablate(const AblateArgs& a, const Context& ctx) {
  std::ifstream in(a.matrix);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto rows = parse_ablation_matrix(ss.str());
  const auto base = build_config(a.config, a.data, a.overrides);
  // fail on bad rows before spending time on training
  for (const auto& r : rows) {
    auto c = base;
    apply_overrides(c, r.overrides);
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  AblationOptions o;
  o.seeds = a.seeds;
  o.first_seed = a.first_seed;
  if (a.keep_runs) o.run_root = out / "runs";
  o.progress = [&](const std::string& m) { ctx.say(m); };
  std::vector<AblationRun> runs;
  const auto summary = run_ablation(base, rows, o, &runs);
  {
    std::ofstream f(out / "ablation.csv");
    write_ablation_csv(f, summary);
    std::ofstream g(out / "ablation_runs.csv");
    write_ablation_runs_csv(g, runs);
  }
  const auto md = ablation_markdown(summary);
  write_text(out / "ablation.md", md);
  std::vector<Artifact> artifacts{{"ablation_table", out / "ablation.csv", "csv"},
                                  {"ablation_table", out / "ablation_runs.csv", "csv"},
                                  {"ablation_table", out / "ablation.md", "markdown"}};
  if (a.keep_runs)
    for (const auto& e : fs::recursive_directory_iterator(out / "runs"))
      if (e.is_regular_file()) artifacts.push_back({kind_of_training_file(e.path()), e.path(), format_of(e.path())});
  write_run_manifest(out, "ablate", artifacts, {{"rows", rows.size()}, {"seeds", a.seeds}});
  ctx.out << md;
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------------------
// report

struct ReportArgs {
  std::string run;
  std::string out;
};

void add_report(CLI::App& app, ReportArgs& a) {
  auto* c = app.add_subcommand("report", "Render loss curves and metric tables from a run or ablation directory");
  c->add_option("--run", a.run, "directory written by train or ablate")->required()->check(CLI::ExistingDirectory);
  c->add_option("--out", a.out, "output directory (default: <run>/report)");
}

int report(const ReportArgs& a, const Context& ctx) {
  const fs::path out = a.out.empty() ? fs::path(a.run) / "report" : fs::path(a.out);
  const auto files = render_report(a.run, out);
  std::vector<Artifact> artifacts;
  for (const auto& f : files) artifacts.push_back({f.kind, f.path, f.format});
  write_run_manifest(out, "report", artifacts, {{"run", a.run}});
  ctx.say("wrote " + std::to_string(files.size()) + " files to " + out.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------------------------------------

struct ReferenceArgs {
  std::string out;
};

struct AllArgs {
  GenDataArgs gen;
  TrainArgs train;
  EvalArgs eval;
  AblateArgs ablate;
  ReportArgs report;
  ReferenceArgs reference;
  bool quiet = false;
};

void build_app(CLI::App& app, AllArgs& a) {
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", a.quiet, "suppress progress output");
  add_gen_data(app, a.gen);
  add_train(app, a.train);
  add_eval(app, a.eval);
  add_ablate(app, a.ablate);
  add_report(app, a.report);
  auto* r = app.add_subcommand("reference", "Print (or write) the flag and config-key reference page");
  r->add_option("--out", a.reference.out, "write the page here instead of standard output");
}

}  // namespace

std::string reference_page() {
  CLI::App app{"Mixed-prototype consistency learning for semi-supervised volumetric segmentation", "mpcl"};
  AllArgs args;
  build_app(app, args);
  std::ostringstream os;
  os << "# mpcl command reference\n\n"
     << "Generated by `mpcl reference`. Exit codes: 0 success, 1 usage error, 2 runtime failure.\n\n";
  for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    os << "## `mpcl " << sub->get_name() << "`\n\n" << sub->get_description() << "\n\n";
    os << "| flag | default | description |\n|---|---|---|\n";
    for (const auto* opt : sub->get_options()) {
      if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
      os << "| `" << opt->get_name() << "` | " << (opt->get_default_str().empty() ? (opt->get_required() ? "required" : "") : "`" + opt->get_default_str() + "`")
         << " | " << opt->get_description() << " |\n";
    }
    os << '\n';
  }
  os << "## Config keys\n\n"
     << "Config files hold `key = value` lines; `#` starts a comment. The same keys are accepted by `--set`.\n"
     << "`proto.gamma1` and `proto.gamma2` are write-only: they set a fusion weight pair from its ratio.\n\n"
     << "| key | default | description |\n|---|---|---|\n";
  for (const auto& k : config_reference()) os << "| `" << k.key << "` | `" << k.default_value << "` | " << k.description << " |\n";
  os << "\n## File formats\n\n"
     << "Every CSV starts with a version line (`" << kLossCsvVersion << "`, `" << kEvalCsvVersion << "`, `"
     << kMetricsCsvVersion << "`, `" << kAblationCsvVersion << "`). Every command that writes into a directory lists "
     << "its outputs in `run_manifest.json` with a kind, a relative path and a format.\n";
  return os.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mixed-prototype consistency learning for semi-supervised volumetric segmentation", "mpcl"};
  AllArgs a;
  build_app(app, a);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  Context ctx{out, err, a.quiet};
  try {
    const auto* sub = app.get_subcommands().front();
    const auto& name = sub->get_name();
    if (name == "gen-data") return gen_data(a.gen, ctx);
    if (name == "train") return train(a.train, ctx);
    if (name == "eval") return eval(a.eval, ctx);
    if (name == "ablate") return ablate(a.ablate, ctx);
    if (name == "report") return report(a.report, ctx);
    if (name == "reference") {
      if (a.reference.out.empty())
        out << reference_page();
      else
        write_text(a.reference.out, reference_page());
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::Config ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mpcl::cli
