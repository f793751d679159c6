#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "edufed/attn_gru.hpp"
#include "edufed/dataset_io.hpp"
#include "edufed/errors.hpp"
#include "edufed/experiment.hpp"
#include "oracles.hpp"

using namespace edufed;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_spec(int population) {
  json row = {0.4, 0.2, 0.1, 0.05, 0.1, 0.05, 0.1};
  json transition = json::array();
  for (int i = 0; i < 7; ++i) transition.push_back(row);
  auto profile = [&](const char* name, double w_forum) {
    return json{{"name", name},
                {"population", population},
                {"transition", transition},
                {"video_access", "uniform"},
                {"quiz_correct_prob", 0.6},
                {"length", {{"mean", 8}, {"dispersion", 2.0}}},
                {"pass_model",
                 {{"intercept", -2.0},
                  {"weight_on_correct_fraction", 4.0},
                  {"weight_on_forum_fraction", w_forum}}}};
  };
  return json{{"n_videos", 6},
              {"quiz_videos", "all"},
              {"demographic_variable", "G"},
              {"profiles", {profile("M", 2.0), profile("F", -2.0)}}};
}

json tiny_config(int population = 30) {
  return json{{"schema_version", 1},
              {"dataset", {{"generate", {{"spec", tiny_spec(population)}, {"seed", 3}}}}},
              {"variable", "G"},
              {"strategies", {"FedAvg", "PerFedAttn"}},
              {"schedule", {{"rounds", 1}, {"local_epochs", 1}}},
              {"model", {{"hidden", 4}}},
              {"pretrain", {{"enabled", true}, {"epochs", 1}}},
              {"folds", 2},
              {"seeds", {0, 1}}};
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  write_report_csv(out, r);
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<StudentRecord> labelled_group(std::size_t n, Gender g) {
  std::vector<StudentRecord> out = oracle::toy_cohort(n, 4, 11, g == Gender::M ? "m" : "f");
  for (auto& r : out) r.demographics.gender = g;
  return out;
}

}  // namespace

TEST_CASE("config defaults follow the reference grid") {
  const json j = {{"schema_version", 1},
                  {"dataset", {{"generate", {{"spec", tiny_spec(10)}}}}}};
  const ExperimentConfig cfg = parse_experiment_config(j, ".");
  const auto& f = cfg.federation;
  CHECK(f.schedule.rounds == 10);
  CHECK(f.schedule.local_epochs == 5);
  CHECK(f.training.batch_size == 8);
  CHECK(f.training.optimizer.kind == OptimizerKind::Adam);
  CHECK(f.training.optimizer.lr == 1e-3);
  CHECK(f.training.optimizer.decay == 1e-3);
  CHECK(f.training.dropout == 0.5);
  CHECK(f.shape.hidden_dim == 48);
  CHECK(f.meta.inner_step == 0.01);
  CHECK(f.meta.outer_step == 1e-3);
  CHECK(cfg.folds * static_cast<int>(cfg.seeds.size()) == 25);
  CHECK(cfg.strategies == std::vector<Strategy>{Strategy::PerFedAttn});
}

TEST_CASE("config parsing is strict") {
  json j = tiny_config();
  j["optimiser"] = {{"lr", 0.1}};
  CHECK_THROWS_AS(parse_experiment_config(j, "."), ConfigError);
  j = tiny_config();
  j["schema_version"] = 2;
  CHECK_THROWS_AS(parse_experiment_config(j, "."), ConfigError);
  j = tiny_config();
  j["strategies"] = {"FedAvg", "FedProx"};
  CHECK_THROWS_AS(parse_experiment_config(j, "."), ConfigError);
  j = tiny_config();
  j["dataset"]["generate"]["spec"] = "no/such/spec.json";
  CHECK_THROWS_WITH_AS(parse_experiment_config(j, "."), doctest::Contains("no/such/spec.json"),
                       ConfigError);
  j = tiny_config();
  j["folds"] = 0;
  CHECK_THROWS_AS(parse_experiment_config(j, "."), ConfigError);
  j = tiny_config();
  j["schedule"]["local_epochs"] = 0;
  CHECK_THROWS_AS(parse_experiment_config(j, "."), ConfigError);
}

TEST_CASE("resolved config round-trips") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config(), ".");
  const json once = config_to_json(cfg);
  const json twice = config_to_json(parse_experiment_config(once, "."));
  CHECK(once == twice);
}

TEST_CASE("stratified folds") {
  auto records = labelled_group(100, Gender::M);
  const auto more = labelled_group(37, Gender::F);
  records.insert(records.end(), more.begin(), more.end());
  const SubgroupMap groups = build_subgroups(records, DemographicVariable::Gender, false);
  const auto folds = make_folds(records, groups, 5, 0);
  REQUIRE(folds.size() == 5);
  for (const auto& [key, ids] : groups) {
    std::multiset<std::size_t> tested;
    std::vector<int> positives;
    for (const auto& fold : folds) {
      const SubgroupFold& sf = fold.at(key);
      const double share = static_cast<double>(sf.test.size()) / ids.size();
      CHECK(share == doctest::Approx(0.2).epsilon(0.05));
      CHECK(sf.train.size() + sf.val.size() + sf.test.size() == ids.size());
      std::set<std::size_t> all(sf.train.begin(), sf.train.end());
      all.insert(sf.val.begin(), sf.val.end());
      all.insert(sf.test.begin(), sf.test.end());
      CHECK(all.size() == ids.size());
      CHECK(sf.val.size() == (sf.train.size() + sf.val.size()) / 5);
      tested.insert(sf.test.begin(), sf.test.end());
      int pos = 0;
      for (auto i : sf.test) pos += records[i].label;
      positives.push_back(pos);
    }
    CHECK(tested.size() == ids.size());
    CHECK(std::set<std::size_t>(tested.begin(), tested.end()).size() == ids.size());
    const auto [lo, hi] = std::minmax_element(positives.begin(), positives.end());
    CHECK(*hi - *lo <= 1);
  }

  const auto holdout = make_folds(records, groups, 1, 0);
  REQUIRE(holdout.size() == 1);
  CHECK(holdout[0].at({DemographicVariable::Gender, "M"}).test.size() == 20);
  CHECK(make_folds(records, groups, 5, 0)[2].at({DemographicVariable::Gender, "F"}).test ==
        folds[2].at({DemographicVariable::Gender, "F"}).test);
  CHECK(make_folds(records, groups, 5, 1)[2].at({DemographicVariable::Gender, "M"}).test !=
        folds[2].at({DemographicVariable::Gender, "M"}).test);
  CHECK_THROWS_AS(make_folds(records, groups, 0, 0), DomainError);
}

TEST_CASE("cross validation end to end") {
  const ExperimentConfig cfg = parse_experiment_config(tiny_config(), ".");
  const Dataset data = load_dataset(cfg);
  REQUIRE(data.records.size() == 60);
  const ExperimentResult a = cross_validate(cfg, data, 1);
  const ExperimentResult b = cross_validate(cfg, data, 2);
  CHECK(report_csv(a.report) == report_csv(b.report));
  REQUIRE(a.runs.size() == 8);
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    CHECK(a.runs[i].federation.global == b.runs[i].federation.global);
    CHECK(a.runs[i].pretrain_losses.size() == 1);
  }
  CHECK(count_test_reads(a) == 0);
  CHECK(a.access.size() == 4);

  std::set<std::pair<std::string, std::string>> rows;
  for (const auto& row : a.report.rows) {
    rows.insert({std::string(to_string(row.strategy)), row.subgroup.group});
    CHECK(row.n_runs <= 4);
  }
  for (auto s : {"FedAvg", "PerFedAttn"}) {
    for (auto g : {"M", "F"}) CHECK(rows.count({s, g}) == 1);
  }
}

TEST_CASE("single run report has zero spread") {
  json j = tiny_config();
  j["seeds"] = {7};
  j["folds"] = 1;
  j["strategies"] = {"FedAvg"};
  const ExperimentConfig cfg = parse_experiment_config(j, ".");
  const ExperimentResult r = cross_validate(cfg, load_dataset(cfg), 1);
  CHECK(r.runs.size() == 1);
  for (const auto& row : r.report.rows) {
    CHECK(row.n_runs == 1);
    CHECK(row.std_auc == 0.0);
  }
}

TEST_CASE("report aggregation and CSV") {
  const SubgroupKey m{DemographicVariable::Gender, "M"};
  const SubgroupKey f{DemographicVariable::Gender, "F"};
  std::vector<RunResult> runs(3);
  runs[0].test_auc = {{m, 0.6}, {f, std::nullopt}};
  runs[1].test_auc = {{m, 0.8}, {f, 0.7}};
  runs[2].strategy = Strategy::Local;
  runs[2].test_auc = {{m, 0.5}, {f, 0.5}};
  std::vector<std::string> warnings;
  const EvalReport r =
      build_report(runs, {Strategy::FedAvg, Strategy::Local}, {m, f}, &warnings);
  REQUIRE(r.rows.size() == 4);
  CHECK(r.rows[0].mean_auc == doctest::Approx(0.7));
  CHECK(r.rows[0].std_auc == doctest::Approx(std::sqrt(0.02)));
  CHECK(r.rows[0].n_runs == 2);
  CHECK(r.rows[1].n_runs == 1);
  CHECK(r.rows[1].std_auc == 0.0);
  CHECK(warnings.size() == 1);

  std::istringstream in(report_csv(r));
  const auto table = read_report_csv(in);
  REQUIRE(table.size() == 5);
  CHECK(table[0] == std::vector<std::string>{"strategy", "variable", "subgroup", "mean_auc",
                                             "std_auc", "n_runs"});
  CHECK(table[1][3] == "0.700000");
  CHECK(format_report_table(table).find("FedAvg") != std::string::npos);
  std::istringstream bad("strategy,auc\nFedAvg,0.5\n");
  CHECK_THROWS_AS(read_report_csv(bad), FormatError);
}

TEST_CASE("embedding export") {
  const auto students = labelled_group(6, Gender::F);
  Rng rng(4);
  const ModelParams m = oracle::random_model(rng, 11, 5);
  std::ostringstream a;
  export_embeddings(a, m, students, DemographicVariable::Gender);
  std::ostringstream b;
  export_embeddings(b, m, students, DemographicVariable::Gender);
  CHECK(a.str() == b.str());
  std::istringstream lines(a.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    CHECK(parse_csv_line(line).size() == 7);
    if (n > 0) CHECK(line.rfind(students[n - 1].student_id + ",G:F,", 0) == 0);
    ++n;
  }
  CHECK(n == 7);

  std::ostringstream z;
  export_embeddings(z, make_attn_gru(ModelShape{11, 5}), students, DemographicVariable::Gender);
  std::istringstream zl(z.str());
  std::getline(zl, line);
  while (std::getline(zl, line)) {
    const auto fields = parse_csv_line(line);
    for (std::size_t i = 2; i < fields.size(); ++i) CHECK(std::stod(fields[i]) == 0.0);
  }

  std::ostringstream empty;
  export_embeddings(empty, m, {}, DemographicVariable::Gender);
  CHECK(empty.str() == "student_id,subgroup,h_1,h_2,h_3,h_4,h_5\n");
  CHECK_THROWS_AS(export_embeddings(empty, oracle::random_model(rng, 12, 5), students,
                                    DemographicVariable::Gender),
                  ShapeError);
}

TEST_CASE("output artifacts are reproducible") {
  const fs::path root = fs::temp_directory_path() / "edufed_test_outputs";
  fs::remove_all(root);
  json j = tiny_config();
  j["folds"] = 2;
  j["seeds"] = {0};
  ExperimentConfig cfg = parse_experiment_config(j, ".");
  const Dataset data = load_dataset(cfg);
  std::vector<fs::path> dirs{root / "a", root / "b"};
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    cfg.output_dir = dirs[i];
    write_outputs(cfg, cross_validate(cfg, data, static_cast<unsigned>(i + 1)));
  }
  CHECK(fs::exists(dirs[0] / "report.csv"));
  CHECK(fs::exists(dirs[0] / "manifest.json"));
  CHECK(fs::exists(dirs[0] / "split_f0.csv"));
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const auto name = entry.path().filename();
    if (name == "manifest.json") continue;
    REQUIRE(fs::exists(dirs[1] / name));
    CHECK(slurp(entry.path()) == slurp(dirs[1] / name));
    ++compared;
  }
  CHECK(compared >= 9);
  const json manifest = json::parse(slurp(dirs[0] / "manifest.json"));
  CHECK(manifest.contains("artifacts"));
  fs::remove_all(root);
}
