#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "edufed/dataset_io.hpp"
#include "edufed/errors.hpp"
#include "edufed/experiment.hpp"
#include "edufed/synthgen.hpp"

namespace edufed::cli {

namespace fs = std::filesystem;

namespace {

int cmd_generate(const std::string& spec_path, std::uint64_t seed, const std::string& out_dir,
                 std::ostream& out) {
  if (!fs::exists(spec_path)) throw ConfigError("cohort spec not found: " + spec_path);
  CohortSpec spec;
  try {
    spec = load_cohort_spec(spec_path);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  const Cohort cohort = generate_cohort(spec, seed);
  write_cohort(out_dir, cohort);
  out << "wrote " << cohort.records.size() << " students and " << cohort.events.size()
      << " events to " << out_dir << "\n";
  return kExitOk;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, unsigned jobs,
            const std::string& out_dir, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_experiment_config(config_path);
  if (seed) cfg.seeds = {*seed};
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  const Dataset data = load_dataset(cfg);
  err << "loaded " << data.records.size() << " students, " << data.n_videos << " videos; "
      << cfg.folds << " fold(s) x " << cfg.seeds.size() << " seed(s) x "
      << cfg.strategies.size() << " strategies\n";
  const ExperimentResult result = cross_validate(cfg, data, jobs);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  write_outputs(cfg, result);
  std::ostringstream csv;
  write_report_csv(csv, result.report);
  std::istringstream in(csv.str());
  out << format_report_table(read_report_csv(in));
  err << "outputs in " << cfg.output_dir.string() << "\n";
  return kExitOk;
}

int cmd_dump(const std::string& model_path, const std::string& events_path,
             const std::string& students_path, const std::string& variable,
             const std::string& out_path, std::ostream& out) {
  const DemographicVariable var = [&] {
    try {
      return parse_variable(variable);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
  }();
  const ModelParams model = load_params(model_path);
  const ModelShape shape = shape_of(model);
  const int n_videos = static_cast<int>(shape.input_dim) - kNumActivityKinds;
  if (n_videos < 1) throw ShapeError("model input width is too small for any video");
  const auto records = assemble_records(read_events_csv(fs::path(events_path)),
                                        read_students_csv(fs::path(students_path)), n_videos);
  if (out_path.empty() || out_path == "-") {
    export_embeddings(out, model, records, var);
  } else {
    std::ofstream file(out_path, std::ios::binary);
    if (!file) throw FormatError("cannot write " + out_path);
    export_embeddings(file, model, records, var);
  }
  return kExitOk;
}

int cmd_report(const std::string& path, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  out << format_report_table(read_report_csv(in));
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated personalization simulator for student outcome prediction", "edufed"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 0;
  std::string out_dir;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic cohort from a spec");
  gen->add_option("--config,--spec", config, "Cohort spec (JSON)")->required();
  gen->add_option("--seed", seed, "Generation seed (default 0)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* run = app.add_subcommand("run", "Run the configured experiment");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Run with this single seed instead of the config's list");
  run->add_option("--jobs", jobs, "Concurrent (fold, seed) jobs; 0 = hardware threads");
  run->add_option("--out", out_dir, "Override the output directory");

  std::string model;
  std::string events;
  std::string students;
  std::string variable = "G";
  auto* dump = app.add_subcommand("dump-embeddings", "Export pooled student representations");
  dump->add_option("--model", model, "Model file")->required();
  dump->add_option("--events", events, "events.csv")->required();
  dump->add_option("--students", students, "students.csv")->required();
  dump->add_option("--variable", variable, "Demographic variable for the subgroup column (G, C, Y)");
  dump->add_option("--out", out_dir, "Output CSV ('-' for stdout)");

  std::string report_path;
  auto* report = app.add_subcommand("report", "Pretty-print a report.csv");
  report->add_option("report", report_path, "Path to report.csv")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(config, seed.value_or(0), out_dir, out);
    if (run->parsed()) return cmd_run(config, seed, jobs, out_dir, out, err);
    if (dump->parsed()) return cmd_dump(model, events, students, variable, out_dir, out);
    if (report->parsed()) return cmd_report(report_path, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace edufed::cli
