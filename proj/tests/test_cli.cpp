#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "edufed/attn_gru.hpp"
#include "edufed/model_params.hpp"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "edufed");
  std::ostringstream out, err;
  const int code = edufed::cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

json spec() {
  json row = {0.4, 0.2, 0.1, 0.05, 0.1, 0.05, 0.1};
  json transition = json::array();
  for (int i = 0; i < 7; ++i) transition.push_back(row);
  auto profile = [&](const char* name) {
    return json{{"name", name},
                {"population", 20},
                {"transition", transition},
                {"video_access", "uniform"},
                {"quiz_correct_prob", 0.6},
                {"length", {{"mean", 6}}},
                {"pass_model",
                 {{"intercept", -1.0},
                  {"weight_on_correct_fraction", 3.0},
                  {"weight_on_forum_fraction", 0.0}}}};
  };
  return json{{"n_videos", 5},
              {"quiz_videos", "all"},
              {"demographic_variable", "G"},
              {"profiles", {profile("M"), profile("F")}}};
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / "edufed_cli_test") {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

TEST_CASE("generate writes a reproducible cohort") {
  TempDir tmp;
  write(tmp.path() / "spec.json", spec().dump());
  const auto a = cli({"generate", "--spec", (tmp.path() / "spec.json").string(), "--seed", "4",
                      "--out", (tmp.path() / "a").string()});
  CHECK(a.code == 0);
  CHECK(fs::exists(tmp.path() / "a" / "events.csv"));
  CHECK(fs::exists(tmp.path() / "a" / "students.csv"));
  const auto b = cli({"generate", "--spec", (tmp.path() / "spec.json").string(), "--seed", "4",
                      "--out", (tmp.path() / "b").string()});
  CHECK(b.code == 0);
  CHECK(slurp(tmp.path() / "a" / "events.csv") == slurp(tmp.path() / "b" / "events.csv"));
  CHECK(slurp(tmp.path() / "a" / "students.csv") == slurp(tmp.path() / "b" / "students.csv"));

  const std::string missing = (tmp.path() / "nope.json").string();
  const auto m = cli({"generate", "--spec", missing, "--out", (tmp.path() / "c").string()});
  CHECK(m.code == 2);
  CHECK(m.err.find(missing) != std::string::npos);

  write(tmp.path() / "bad.json", R"({"n_videos": 0, "profiles": []})");
  const auto bad = cli({"generate", "--spec", (tmp.path() / "bad.json").string(), "--out",
                        (tmp.path() / "d").string()});
  CHECK(bad.code == 2);
}

TEST_CASE("run, report and dump-embeddings") {
  TempDir tmp;
  write(tmp.path() / "spec.json", spec().dump());
  const json cfg = {{"schema_version", 1},
                    {"dataset", {{"generate", {{"spec", "spec.json"}, {"seed", 2}}}}},
                    {"strategies", {"FedAvg", "PerFedAttn"}},
                    {"schedule", {{"rounds", 1}, {"local_epochs", 1}}},
                    {"model", {{"hidden", 3}}},
                    {"folds", 1},
                    {"seeds", {7}},
                    {"output_dir", "out"}};
  write(tmp.path() / "exp.json", cfg.dump());
  const auto r = cli({"run", "--config", (tmp.path() / "exp.json").string(), "--jobs", "1"});
  REQUIRE(r.code == 0);
  const fs::path report = tmp.path() / "out" / "report.csv";
  REQUIRE(fs::exists(report));
  const std::string csv = slurp(report);
  for (auto s : {"FedAvg,G,M,", "FedAvg,G,F,", "PerFedAttn,G,M,", "PerFedAttn,G,F,"}) {
    CHECK(csv.find(s) != std::string::npos);
  }
  CHECK(csv.find(",1\n") != std::string::npos);

  const auto shown = cli({"report", report.string()});
  CHECK(shown.code == 0);
  CHECK(shown.out.find("PerFedAttn") != std::string::npos);
  CHECK(cli({"report", (tmp.path() / "none.csv").string()}).code != 0);

  // A model and a CSV cohort to embed.
  CHECK(cli({"generate", "--spec", (tmp.path() / "spec.json").string(), "--out",
             (tmp.path() / "cohort").string()})
            .code == 0);
  fs::path model;
  for (const auto& e : fs::directory_iterator(tmp.path() / "out")) {
    if (e.path().extension() == ".bin") model = e.path();
  }
  REQUIRE(!model.empty());
  const fs::path emb = tmp.path() / "emb.csv";
  const auto d = cli({"dump-embeddings", "--model", model.string(), "--events",
                      (tmp.path() / "cohort" / "events.csv").string(), "--students",
                      (tmp.path() / "cohort" / "students.csv").string(), "--variable", "G",
                      "--out", emb.string()});
  CHECK(d.code == 0);
  std::istringstream lines(slurp(emb));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "student_id,subgroup,h_1,h_2,h_3");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 40);

  // Empty student list gives a header-only dump.
  write(tmp.path() / "nobody.csv", "student_id,gender,continent,birth_year,label\n");
  const auto e = cli({"dump-embeddings", "--model", model.string(), "--events",
                      (tmp.path() / "cohort" / "events.csv").string(), "--students",
                      (tmp.path() / "nobody.csv").string(), "--variable", "G", "--out", "-"});
  CHECK(e.code == 0);
  CHECK(e.out == "student_id,subgroup,h_1,h_2,h_3\n");

  std::string bytes = slurp(model);
  bytes.replace(bytes.find(' ') + 1, 1, "7");
  write(tmp.path() / "broken.bin", bytes);
  const auto c = cli({"dump-embeddings", "--model", (tmp.path() / "broken.bin").string(),
                      "--events", (tmp.path() / "cohort" / "events.csv").string(), "--students",
                      (tmp.path() / "cohort" / "students.csv").string(), "--out", "-"});
  CHECK(c.code == 1);
  CHECK(c.err.find("version") != std::string::npos);
}

TEST_CASE("usage errors exit with the config code") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"run"}).code == 2);
  CHECK(cli({"run", "--config", "/nonexistent/exp.json"}).code == 2);
  CHECK(cli({"generate", "--seed", "x", "--spec", "a.json"}).code == 2);
}
