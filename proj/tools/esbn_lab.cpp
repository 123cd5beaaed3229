// esbn_lab: dataset generation, training, evaluation and reporting.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "esbn/analysis.hpp"
#include "esbn/taskgen.hpp"
#include "esbn/training.hpp"

namespace fs = std::filesystem;
using namespace esbn;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----- shared option blocks -----

struct SpecOptions {
  std::string model = "esbn";
  std::string encoder = "conv";
  std::string tcn = "on";
  std::string task = "same_diff";
  int m = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  int epochs = 0;
  std::size_t batch_size = 32;
  std::uint64_t glyph_seed = 0;
  bool capture_keys = false;
  std::size_t capture_problems = 500;
};

struct Paths {
  std::string data;  // root for runs and datasets
  std::string glyphs;
};

void add_spec_options(CLI::App& app, SpecOptions& o, bool with_model_and_m) {
  if (with_model_and_m) {
    app.add_option("--model", o.model, "esbn, esbn_noconf, esbn_default_mem, lstm, ntm, rn, trn, transformer, predinet")
        ->capture_default_str();
    app.add_option("--m", o.m, "glyphs withheld from training: 0, 50, 85, 95 (98 for same_diff)")
        ->capture_default_str();
    app.add_option("--seed", o.seed, "run seed (dataset, init, shuffling)")->capture_default_str();
  }
  app.add_option("--encoder", o.encoder, "conv, mlp or random")->capture_default_str();
  app.add_option("--tcn", o.tcn, "temporal context normalization")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  app.add_option("--task", o.task, "same_diff, rmts, dist3 or identity_rules")->capture_default_str();
  app.add_option("--lr", o.learning_rate, "learning rate (0: schedule default)")->capture_default_str();
  app.add_option("--epochs", o.epochs, "epochs (0: schedule default)")->capture_default_str();
  app.add_option("--batch-size", o.batch_size)->capture_default_str();
  app.add_option("--glyph-seed", o.glyph_seed, "seed of the rendered glyph set")->capture_default_str();
  app.add_flag("--capture-keys", o.capture_keys, "record ESBN keys for analysis");
  app.add_option("--capture-problems", o.capture_problems, "problems per split to capture")->capture_default_str();
}

void add_paths(CLI::App& app, Paths& p) {
  app.add_option("--data", p.data, "data root (runs/, datasets/)")->envname("ESBN_LAB_DATA");
  app.add_option("--glyphs", p.glyphs, "directory with 000.png..099.png (default: rendered from --glyph-seed)");
}

/// Fills options not given on the command line from a `key = value` file.
/// Keys are long option names without dashes; `_` and `-` are interchangeable.
void apply_config(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  if (!fs::is_regular_file(path)) throw UsageError("config file " + path + " not found");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& err) {
    throw UsageError(path + ": " + err.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty()) throw UsageError(path + ": sections are not supported ([" + item.parents.front() + "])");
    std::string name = item.name;
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::Option* opt = name == "config" ? nullptr : sub.get_option_no_throw("--" + name);
    if (opt == nullptr) throw UsageError(path + ": unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;  // command line wins
    try {
      if (opt->get_items_expected_max() == 1 && item.inputs.size() > 1) {
        // The INI reader splits `a,b` into items; list options here take one string.
        std::string joined;
        for (const auto& v : item.inputs) joined += (joined.empty() ? "" : ",") + v;
        opt->add_result(joined);
      } else {
        opt->add_result(item.inputs);
      }
      opt->run_callback();
    } catch (const CLI::Error& err) {
      throw UsageError(path + ": " + item.name + ": " + err.what());
    }
  }
}

fs::path data_root(const Paths& p) { return p.data.empty() ? fs::path("esbn-data") : fs::path(p.data); }

TrainSpec to_spec(const SpecOptions& o) {
  try {
    TrainSpec s;
    s.model = parse_model(o.model);
    s.encoder = parse_encoder(o.encoder);
    s.tcn = o.tcn == "on";
    s.task = taskgen::parse_task(o.task);
    s.m = o.m;
    s.seed = o.seed;
    s.learning_rate = o.learning_rate;
    s.epochs = o.epochs;
    s.batch_size = o.batch_size;
    s.glyph_seed = o.glyph_seed;
    s.capture_keys = o.capture_keys;
    s.capture_problems = o.capture_problems;
    return resolve(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

taskgen::GlyphSet glyphs_for(const Paths& p, std::uint64_t glyph_seed) {
  if (!p.glyphs.empty()) return taskgen::load_glyphs(p.glyphs);
  return taskgen::render_glyphs(glyph_seed);
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse(item));
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

int parse_int(const std::string& s) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError("not an integer: '" + s + "'");
}

ModelKind parse_model_arg(const std::string& s) {
  try {
    return parse_model(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void print_progress(const UpdateRecord& u, std::size_t per_epoch, int epochs) {
  if (u.update % per_epoch != 0) return;
  std::fprintf(stderr, "epoch %d/%d  update %llu  loss %.4f  batch acc %.3f\n", u.epoch, epochs,
               static_cast<unsigned long long>(u.update), u.loss, u.accuracy);
}

// ----- commands -----

struct GenerateArgs {
  std::string task = "same_diff";
  int m = 0;
  std::uint64_t seed = 0;
  std::uint64_t glyph_seed = 0;
  std::string out;
  bool no_clobber = false;
  Paths paths;
};

int cmd_generate(const GenerateArgs& a) {
  taskgen::Task task;
  try {
    task = taskgen::parse_task(a.task);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!taskgen::valid_m(task, a.m)) {
    throw UsageError("m=" + std::to_string(a.m) + " is not a holdout size for " + a.task);
  }
  const fs::path out = a.out.empty() ? data_root(a.paths) / "datasets" /
                                           (a.task + "-m" + std::to_string(a.m) + "-s" + std::to_string(a.seed))
                                     : fs::path(a.out);
  if (a.no_clobber && fs::exists(out / "manifest.json")) {
    throw std::runtime_error(out.string() + " exists (--no-clobber)");
  }
  const auto data = taskgen::generate(task, a.m, a.seed);
  const auto glyphs = glyphs_for(a.paths, a.glyph_seed);
  taskgen::save_dataset(data, out, &glyphs);
  std::printf("%s: train %zu, test %zu, checksum %s\n", out.string().c_str(), data.train.size(), data.test.size(),
              taskgen::dataset_checksum(data).c_str());
  return 0;
}

struct TrainArgs {
  std::string config;
  SpecOptions spec;
  Paths paths;
  std::string out;
  bool dry_run = false;
  bool no_clobber = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  const auto spec = to_spec(a.spec);
  const fs::path dir = a.out.empty() ? run_directory(data_root(a.paths) / "runs", spec) : fs::path(a.out);
  if (a.dry_run) {
    std::printf("%s\n", spec_to_json(spec).c_str());
    std::printf("run directory: %s\n", dir.string().c_str());
    return 0;
  }
  if (a.no_clobber && fs::exists(dir / "summary.json")) throw std::runtime_error(dir.string() + " exists (--no-clobber)");
  const auto glyphs = glyphs_for(a.paths, spec.glyph_seed);
  const auto data = taskgen::generate(spec.task, spec.m, spec.seed);
  const auto per_epoch = updates_per_epoch(data.train.size(), spec.batch_size);
  UpdateCallback cb;
  if (!a.quiet) cb = [&](const UpdateRecord& u) { print_progress(u, per_epoch, spec.epochs); };
  const auto result = train_on(spec, data, glyphs, cb);
  write_run(dir, result);
  std::printf("%s\ntest accuracy %.4f  train accuracy %.4f  updates %zu  %.1fs\n", dir.string().c_str(),
              result.record.test_accuracy, result.record.final_train_accuracy, result.record.updates.size(),
              result.record.wall_seconds);
  return 0;
}

struct EvalArgs {
  std::string run;
  std::string dataset;
  std::string split = "test";
  Paths paths;
};

int cmd_eval(const EvalArgs& a) {
  const fs::path run(a.run);
  const fs::path ckpt = fs::is_directory(run) ? run / "checkpoint.bin" : run;
  TrainSpec spec;
  const auto net = load_network(ckpt, &spec);
  const auto data = a.dataset.empty() ? taskgen::generate(spec.task, spec.m, spec.seed) : taskgen::load_dataset(a.dataset);
  if (data.task != spec.task) {
    throw UsageError("checkpoint is for " + std::string(taskgen::task_name(spec.task)) + ", dataset is " +
                     std::string(taskgen::task_name(data.task)));
  }
  const auto glyphs = glyphs_for(a.paths, spec.glyph_seed);
  const auto& problems = a.split == "train" ? data.train : data.test;
  std::printf("%s accuracy %.4f over %zu problems\n", a.split.c_str(), evaluate(*net, glyphs, problems),
              problems.size());
  return 0;
}

struct MatrixArgs {
  std::string config;
  SpecOptions spec;
  Paths paths;
  std::string models = "esbn";
  std::string ms;
  std::size_t seeds = 3;
  std::uint64_t first_seed = 0;
  std::size_t jobs = 1;
  std::string out;
  bool dry_run = false;
  bool no_clobber = false;
};

int cmd_matrix(const MatrixArgs& a) {
  const auto models = parse_list<ModelKind>(a.models, parse_model_arg);
  auto base = a.spec;
  const auto task = to_spec(base).task;
  std::vector<int> ms;
  if (a.ms.empty()) {
    ms = taskgen::allowed_m(task);
  } else {
    ms = parse_list<int>(a.ms, parse_int);
  }
  std::vector<TrainSpec> cells;
  for (auto model : models) {
    for (int m : ms) {
      auto o = base;
      o.model = std::string(model_name(model));
      o.m = m;
      o.seed = a.first_seed;
      cells.push_back(to_spec(o));
    }
  }
  const fs::path root = data_root(a.paths);
  const fs::path out = a.out.empty() ? root / "reports" : fs::path(a.out);
  if (a.dry_run) {
    for (const auto& c : cells) {
      std::printf("%s %s m=%d tcn=%s lr=%g epochs=%d x %zu seeds\n", std::string(model_name(c.model)).c_str(),
                  std::string(taskgen::task_name(c.task)).c_str(), c.m, c.tcn ? "on" : "off", c.learning_rate,
                  c.epochs, a.seeds);
    }
    return 0;
  }
  MatrixOptions opts;
  opts.seeds = a.seeds;
  opts.first_seed = a.first_seed;
  opts.jobs = a.jobs;
  opts.run_root = root / "runs";
  opts.no_clobber = a.no_clobber;
  const auto glyphs = glyphs_for(a.paths, base.glyph_seed);
  const auto results = run_matrix(cells, glyphs, opts);

  std::vector<ResultRow> rows;
  for (const auto& r : results) {
    rows.push_back({std::string(taskgen::task_name(r.spec.task)), std::string(model_name(r.spec.model)), r.spec.tcn,
                    std::string(encoder_name(r.spec.encoder)), r.spec.m, r.accuracies.size(), r.mean, r.sem});
    std::printf("%-16s m=%-3d mean %.4f  sem %s\n", std::string(model_name(r.spec.model)).c_str(), r.spec.m, r.mean,
                r.sem ? std::to_string(*r.sem).c_str() : "-");
  }
  const std::string task_str(taskgen::task_name(task));
  write_results_csv(out / "results.csv", rows);
  write_results_table(out / ("table_" + task_str + ".csv"), task_str, rows);
  std::printf("wrote %s\n", (out / ("table_" + task_str + ".csv")).string().c_str());
  return 0;
}

struct AnalyzeArgs {
  std::string run;
  std::string out;
  std::size_t first = 1;
  std::size_t last = 3;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const fs::path run(a.run);
  if (!fs::exists(run / "summary.json")) throw UsageError(run.string() + " is not a run directory");
  if (!fs::exists(run / "keys.csv")) {
    throw UsageError(run.string() + " has no captured keys; retrain with --capture-keys");
  }
  const auto corpus = read_keys_csv(run / "keys.csv");
  const fs::path out = a.out.empty() ? run / "analysis" : fs::path(a.out);
  for (const auto kind : {KeyKind::Written, KeyKind::Retrieved}) {
    const auto keys = corpus.filter(std::nullopt, kind);
    const auto name = std::string(kind == KeyKind::Written ? "written" : "retrieved");
    write_pca_csv(out / ("pca_" + name + ".csv"), keys, pca2(keys));
  }
  const auto written = corpus.filter(std::nullopt, KeyKind::Written);
  const auto report = overlap_report(written.filter(Split::Train, std::nullopt), written.filter(Split::Test, std::nullopt),
                                     a.first, a.last);
  write_overlap_csv(out / "overlap.csv", report);
  for (const auto& s : report) {
    std::printf("step %zu: centroid distance %.4g  dispersion %.4g  ratio %.4g\n", s.step, s.centroid_distance,
                s.dispersion, s.ratio);
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

struct ReportArgs {
  Paths paths;
  std::string runs;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  const fs::path runs = a.runs.empty() ? data_root(a.paths) / "runs" : fs::path(a.runs);
  const fs::path out = a.out.empty() ? data_root(a.paths) / "reports" : fs::path(a.out);
  if (!fs::is_directory(runs)) throw UsageError(runs.string() + " is not a directory");

  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs)) {
    if (e.is_directory() && fs::exists(e.path() / "summary.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  using Cell = std::tuple<std::string, std::string, bool, std::string, int>;
  std::map<Cell, std::vector<double>> cells;
  std::vector<TimecoursePoint> points;
  std::set<std::string> tasks;
  for (const auto& dir : dirs) {
    const auto rec = read_summary(dir);
    const auto task = std::string(taskgen::task_name(rec.spec.task));
    tasks.insert(task);
    cells[{task, std::string(model_name(rec.spec.model)), rec.spec.tcn, std::string(encoder_name(rec.spec.encoder)),
           rec.spec.m}]
        .push_back(rec.test_accuracy);
    for (const auto& u : rec.updates) {
      points.push_back({dir.filename().string(), u.update, u.epoch, u.loss, u.accuracy});
    }
  }
  std::vector<ResultRow> rows;
  for (const auto& [k, acc] : cells) {
    double mean = 0.0;
    for (double v : acc) mean += v;
    mean /= static_cast<double>(acc.size());
    rows.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k), std::get<4>(k), acc.size(), mean,
                    standard_error(acc)});
  }
  write_results_csv(out / "results.csv", rows);
  for (const auto task : taskgen::kAllTasks) {
    const std::string name(taskgen::task_name(task));
    write_results_table(out / ("table_" + name + ".csv"), name, rows);
  }
  write_timecourse_csv(out / "timecourse.csv", points);
  std::printf("%zu runs, %zu cells -> %s\n", dirs.size(), rows.size(), out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ESBN workbench: rule-learning tasks, models and analysis"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a dataset archive");
  g->add_option("--task", gen.task)->capture_default_str();
  g->add_option("--m", gen.m)->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--glyph-seed", gen.glyph_seed)->capture_default_str();
  g->add_option("--out", gen.out, "archive directory (default: <data>/datasets/<task>-m<m>-s<seed>)");
  g->add_flag("--no-clobber", gen.no_clobber, "refuse to overwrite an existing archive");
  add_paths(*g, gen.paths);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one network and write its run directory");
  t->add_option("--config", tr.config, "key = value file; flags override it");
  add_spec_options(*t, tr.spec, true);
  add_paths(*t, tr.paths);
  t->add_option("--out", tr.out, "run directory (default: <data>/runs/<name>-<spec hash>)");
  t->add_flag("--dry-run", tr.dry_run, "print the resolved spec and exit");
  t->add_flag("--no-clobber", tr.no_clobber, "refuse to overwrite a finished run");
  t->add_flag("--quiet", tr.quiet, "no per-epoch progress");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("run", ev.run, "run directory or checkpoint file")->required();
  e->add_option("--dataset", ev.dataset, "dataset archive (default: regenerate from the run's spec)");
  e->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  add_paths(*e, ev.paths);

  MatrixArgs mx;
  auto* x = app.add_subcommand("matrix", "train models x m values x seeds and tabulate mean and SEM");
  x->add_option("--config", mx.config, "key = value file; flags override it");
  add_spec_options(*x, mx.spec, false);
  add_paths(*x, mx.paths);
  x->add_option("--models", mx.models, "comma-separated model list")->capture_default_str();
  x->add_option("--ms", mx.ms, "comma-separated m values (default: all for the task)");
  x->add_option("--seeds", mx.seeds, "seeds per cell")->check(CLI::PositiveNumber)->capture_default_str();
  x->add_option("--first-seed", mx.first_seed)->capture_default_str();
  x->add_option("--jobs", mx.jobs, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
  x->add_option("--out", mx.out, "report directory (default: <data>/reports)");
  x->add_flag("--dry-run", mx.dry_run, "list the resolved cells and exit");
  x->add_flag("--no-clobber", mx.no_clobber, "refuse to overwrite finished runs");

  AnalyzeArgs an;
  auto* y = app.add_subcommand("analyze", "PCA and train/test overlap of captured ESBN keys");
  y->add_option("run", an.run, "run directory trained with --capture-keys")->required();
  y->add_option("--out", an.out, "output directory (default: <run>/analysis)");
  y->add_option("--first-step", an.first)->capture_default_str();
  y->add_option("--last-step", an.last)->capture_default_str();

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "aggregate run directories into result tables and time courses");
  add_paths(*r, rp.paths);
  r->add_option("--runs", rp.runs, "directory of runs (default: <data>/runs)");
  r->add_option("--out", rp.out, "report directory (default: <data>/reports)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (t->parsed()) {
      apply_config(*t, tr.config);
      return cmd_train(tr);
    }
    if (e->parsed()) return cmd_eval(ev);
    if (x->parsed()) {
      apply_config(*x, mx.config);
      return cmd_matrix(mx);
    }
    if (y->parsed()) return cmd_analyze(an);
    if (r->parsed()) return cmd_report(rp);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 2;
}
