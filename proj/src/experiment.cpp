#include "edufed/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "edufed/dataset_io.hpp"
#include "edufed/errors.hpp"
#include "edufed/metrics.hpp"
#include "edufed/rng.hpp"
#include "edufed/synthgen.hpp"

namespace edufed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in '" + where + "'");
    }
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j, const fs::path& base_dir) {
  reject_unknown(j, {"schema_version", "dataset", "variable", "include_unspecified", "strategies",
                     "schedule", "optimizer", "model", "meta", "attn_agg", "pretrain", "irt",
                     "folds", "seeds", "split_seed", "output_dir"},
                 "config");
  int version = 0;
  read_opt(j, "schema_version", version, "config");
  require(version == kConfigSchemaVersion,
          "config schema_version must be " + std::to_string(kConfigSchemaVersion));

  ExperimentConfig cfg;
  require(j.contains("dataset"), "config needs a 'dataset' section");
  const json& d = j.at("dataset");
  reject_unknown(d, {"generate", "events", "students", "n_videos"}, "dataset");
  if (d.contains("generate")) {
    require(!d.contains("events") && !d.contains("students"),
            "dataset takes either 'generate' or 'events'/'students', not both");
    const json& g = d.at("generate");
    reject_unknown(g, {"spec", "seed"}, "dataset.generate");
    require(g.contains("spec"), "dataset.generate needs 'spec'");
    if (g.at("spec").is_string()) {
      cfg.dataset.spec_path = resolve(base_dir, g.at("spec").get<std::string>());
      require(fs::exists(*cfg.dataset.spec_path),
              "cohort spec not found: " + cfg.dataset.spec_path->string());
      cfg.dataset.spec = json::parse(std::ifstream(*cfg.dataset.spec_path), nullptr, false);
      require(!cfg.dataset.spec->is_discarded(),
              "cohort spec is not valid JSON: " + cfg.dataset.spec_path->string());
    } else {
      cfg.dataset.spec = g.at("spec");
    }
    try {
      cohort_spec_from_json(*cfg.dataset.spec);
    } catch (const ValidationError& e) {
      throw ConfigError(e.what());
    }
    read_opt(g, "seed", cfg.dataset.generate_seed, "dataset.generate");
  } else {
    std::string events;
    std::string students;
    read_opt(d, "events", events, "dataset");
    read_opt(d, "students", students, "dataset");
    read_opt(d, "n_videos", cfg.dataset.n_videos, "dataset");
    require(!events.empty() && !students.empty(),
            "dataset needs 'generate' or both 'events' and 'students'");
    cfg.dataset.events = resolve(base_dir, events);
    cfg.dataset.students = resolve(base_dir, students);
    require(fs::exists(cfg.dataset.events), "events file not found: " + cfg.dataset.events.string());
    require(fs::exists(cfg.dataset.students),
            "students file not found: " + cfg.dataset.students.string());
    if (cfg.dataset.n_videos == 0) {
      const fs::path meta = cfg.dataset.events.parent_path() / "cohort.json";
      if (fs::exists(meta)) {
        const json m = json::parse(std::ifstream(meta), nullptr, false);
        if (!m.is_discarded() && m.contains("n_videos")) read_opt(m, "n_videos", cfg.dataset.n_videos, "cohort");
      }
    }
    require(cfg.dataset.n_videos >= 1, "dataset.n_videos must be given and positive");
  }

  std::string variable = "G";
  read_opt(j, "variable", variable, "config");
  try {
    cfg.variable = parse_variable(variable);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  read_opt(j, "include_unspecified", cfg.include_unspecified, "config");

  std::vector<std::string> strategies{"PerFedAttn"};
  read_opt(j, "strategies", strategies, "config");
  require(!strategies.empty(), "at least one strategy is required");
  std::set<Strategy> seen;
  for (const auto& s : strategies) {
    const Strategy st = parse_strategy(s);
    require(seen.insert(st).second, "strategy " + s + " listed twice");
    cfg.strategies.push_back(st);
  }

  FederationConfig& fed = cfg.federation;
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"rounds", "local_epochs"}, "schedule");
    read_opt(s, "rounds", fed.schedule.rounds, "schedule");
    read_opt(s, "local_epochs", fed.schedule.local_epochs, "schedule");
  }
  require(fed.schedule.rounds >= 0, "schedule.rounds must be non-negative");
  require(fed.schedule.local_epochs >= 1, "schedule.local_epochs must be at least 1");

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"kind", "lr", "decay", "batch_size", "dropout"}, "optimizer");
    std::string kind = "adam";
    read_opt(o, "kind", kind, "optimizer");
    fed.training.optimizer.kind = parse_optimizer(lower(kind));
    read_opt(o, "lr", fed.training.optimizer.lr, "optimizer");
    read_opt(o, "decay", fed.training.optimizer.decay, "optimizer");
    read_opt(o, "batch_size", fed.training.batch_size, "optimizer");
    read_opt(o, "dropout", fed.training.dropout, "optimizer");
  }
  require(fed.training.optimizer.lr >= 0.0, "optimizer.lr must be non-negative");
  require(fed.training.optimizer.decay >= 0.0, "optimizer.decay must be non-negative");
  require(fed.training.batch_size >= 1, "optimizer.batch_size must be at least 1");
  require(fed.training.dropout >= 0.0 && fed.training.dropout < 1.0,
          "optimizer.dropout must lie in [0, 1)");

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"hidden", "max_sequence_length"}, "model");
    read_opt(m, "hidden", fed.shape.hidden_dim, "model");
    read_opt(m, "max_sequence_length", cfg.max_sequence_length, "model");
  }
  require(fed.shape.hidden_dim >= 1, "model.hidden must be positive");

  fed.meta.outer_step = fed.training.optimizer.lr;
  if (j.contains("meta")) {
    const json& m = j.at("meta");
    reject_unknown(m, {"inner_step", "outer_step", "mode", "hessian_delta"}, "meta");
    read_opt(m, "inner_step", fed.meta.inner_step, "meta");
    read_opt(m, "outer_step", fed.meta.outer_step, "meta");
    std::string mode = "first_order";
    read_opt(m, "mode", mode, "meta");
    fed.meta.mode = parse_meta_mode(mode);
    read_opt(m, "hessian_delta", fed.meta.hessian_delta, "meta");
  }
  require(fed.meta.inner_step > 0.0, "meta.inner_step must be positive");
  require(fed.meta.outer_step > 0.0, "meta.outer_step must be positive");
  require(fed.meta.hessian_delta > 0.0, "meta.hessian_delta must be positive");

  if (j.contains("attn_agg")) {
    const json& a = j.at("attn_agg");
    reject_unknown(a, {"epsilon", "weight_mode"}, "attn_agg");
    read_opt(a, "epsilon", fed.attn.epsilon, "attn_agg");
    std::string mode = "per_layer";
    read_opt(a, "weight_mode", mode, "attn_agg");
    fed.attn.mode = parse_attn_weight_mode(mode);
  }
  require(fed.attn.epsilon > 0.0, "attn_agg.epsilon must be positive");

  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    reject_unknown(p, {"enabled", "epochs"}, "pretrain");
    read_opt(p, "enabled", cfg.pretrain.enabled, "pretrain");
    read_opt(p, "epochs", cfg.pretrain.epochs, "pretrain");
  }
  require(cfg.pretrain.epochs >= 0, "pretrain.epochs must be non-negative");

  if (j.contains("irt")) {
    const json& i = j.at("irt");
    reject_unknown(i, {"max_iters", "tol", "prior"}, "irt");
    read_opt(i, "max_iters", fed.irt.max_iters, "irt");
    read_opt(i, "tol", fed.irt.tol, "irt");
    read_opt(i, "prior", fed.irt.prior, "irt");
  }
  require(fed.irt.max_iters >= 0 && fed.irt.tol > 0.0 && fed.irt.prior > 0.0,
          "irt settings out of range");

  read_opt(j, "folds", cfg.folds, "config");
  require(cfg.folds >= 1, "folds must be at least 1");
  read_opt(j, "seeds", cfg.seeds, "config");
  require(!cfg.seeds.empty(), "at least one seed is required");
  read_opt(j, "split_seed", cfg.split_seed, "config");
  std::string out = "out";
  read_opt(j, "output_dir", out, "config");
  cfg.output_dir = resolve(base_dir, out);
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return parse_experiment_config(j, path.parent_path());
}

json config_to_json(const ExperimentConfig& cfg) {
  const FederationConfig& f = cfg.federation;
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  if (cfg.dataset.spec) {
    j["dataset"]["generate"] = {{"spec", *cfg.dataset.spec}, {"seed", cfg.dataset.generate_seed}};
  } else {
    j["dataset"] = {{"events", cfg.dataset.events.string()},
                    {"students", cfg.dataset.students.string()},
                    {"n_videos", cfg.dataset.n_videos}};
  }
  j["variable"] = std::string(1, to_char(cfg.variable));
  j["include_unspecified"] = cfg.include_unspecified;
  j["strategies"] = json::array();
  for (Strategy s : cfg.strategies) j["strategies"].push_back(std::string(to_string(s)));
  j["schedule"] = {{"rounds", f.schedule.rounds}, {"local_epochs", f.schedule.local_epochs}};
  j["optimizer"] = {{"kind", std::string(to_string(f.training.optimizer.kind))},
                    {"lr", f.training.optimizer.lr},
                    {"decay", f.training.optimizer.decay},
                    {"batch_size", f.training.batch_size},
                    {"dropout", f.training.dropout}};
  j["model"] = {{"hidden", f.shape.hidden_dim}, {"max_sequence_length", cfg.max_sequence_length}};
  j["meta"] = {{"inner_step", f.meta.inner_step},
               {"outer_step", f.meta.outer_step},
               {"mode", std::string(to_string(f.meta.mode))},
               {"hessian_delta", f.meta.hessian_delta}};
  j["attn_agg"] = {{"epsilon", f.attn.epsilon},
                   {"weight_mode", std::string(to_string(f.attn.mode))}};
  j["pretrain"] = {{"enabled", cfg.pretrain.enabled}, {"epochs", cfg.pretrain.epochs}};
  j["irt"] = {{"max_iters", f.irt.max_iters}, {"tol", f.irt.tol}, {"prior", f.irt.prior}};
  j["folds"] = cfg.folds;
  j["seeds"] = cfg.seeds;
  j["split_seed"] = cfg.split_seed;
  return j;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  Dataset out;
  if (cfg.dataset.spec) {
    const CohortSpec spec = cohort_spec_from_json(*cfg.dataset.spec);
    Cohort cohort = generate_cohort(spec, cfg.dataset.generate_seed);
    out.n_videos = cohort.n_videos;
    out.records = std::move(cohort.records);
    for (auto& r : out.records) cap_sequence(r, cfg.max_sequence_length);
  } else {
    out.n_videos = cfg.dataset.n_videos;
    const auto events = read_events_csv(cfg.dataset.events);
    const auto students = read_students_csv(cfg.dataset.students);
    out.records = assemble_records(events, students, out.n_videos, cfg.max_sequence_length);
  }
  return out;
}

std::vector<FoldSplit> make_folds(const std::vector<StudentRecord>& records,
                                  const SubgroupMap& groups, int folds, std::uint64_t split_seed) {
  if (folds < 1) throw DomainError("folds must be at least 1");
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < records.size(); ++i) index_of[records[i].student_id] = i;
  const int parts = folds == 1 ? 5 : folds;
  std::vector<FoldSplit> out(static_cast<std::size_t>(folds));
  std::uint64_t group_no = 0;
  for (const auto& [key, ids] : groups) {
    ++group_no;
    if (ids.empty()) continue;
    if (ids.size() < 2) {
      throw SplitError("subgroup " + key.label() +
                       " has a single student; cannot form both train and test sets");
    }
    // Label strata, each shuffled, laid end to end; fold = position mod parts.
    std::vector<std::size_t> order;
    for (int label : {0, 1}) {
      std::vector<std::size_t> stratum;
      for (const auto& id : ids) {
        const std::size_t idx = index_of.at(id);
        if (records[idx].label == label) stratum.push_back(idx);
      }
      Rng rng = make_rng({split_seed, group_no, static_cast<std::uint64_t>(label), 0xf01dULL});
      std::shuffle(stratum.begin(), stratum.end(), rng);
      order.insert(order.end(), stratum.begin(), stratum.end());
    }
    for (int f = 0; f < folds; ++f) {
      SubgroupFold& sf = out[static_cast<std::size_t>(f)][key];
      std::vector<std::size_t> rest;
      for (std::size_t p = 0; p < order.size(); ++p) {
        (static_cast<int>(p % static_cast<std::size_t>(parts)) == f ? sf.test : rest)
            .push_back(order[p]);
      }
      // `rest` keeps the stratum order, so every fifth element is a
      // stratified validation draw.
      for (std::size_t p = 0; p < rest.size(); ++p) {
        (p % 5 == 4 ? sf.val : sf.train).push_back(rest[p]);
      }
      if (sf.val.empty() && sf.train.size() >= 2) {
        sf.val.push_back(sf.train.back());
        sf.train.pop_back();
      }
      std::sort(sf.train.begin(), sf.train.end());
      std::sort(sf.val.begin(), sf.val.end());
      std::sort(sf.test.begin(), sf.test.end());
    }
  }
  return out;
}

DatasetSplit to_dataset_split(const FoldSplit& fold, const std::vector<StudentRecord>& records) {
  DatasetSplit split;
  for (const auto& [key, f] : fold) {
    SubgroupSplit& s = split.groups[key];
    for (std::size_t i : f.train) s.train.push_back(records[i].student_id);
    for (std::size_t i : f.val) s.val.push_back(records[i].student_id);
    for (std::size_t i : f.test) s.test.push_back(records[i].student_id);
  }
  return split;
}

namespace {

struct Job {
  int fold = 0;
  std::uint64_t seed = 0;
};

std::uint64_t run_seed(const Job& job) {
  return derive_seed({job.seed, static_cast<std::uint64_t>(job.fold), 0x5eedULL});
}

std::vector<RunResult> run_job(const ExperimentConfig& cfg, const Dataset& data,
                               const FoldSplit& fold, const Job& job, AccessLog& log) {
  const std::uint64_t seed = run_seed(job);
  FederationConfig fed = cfg.federation;
  fed.shape.input_dim = static_cast<std::size_t>(data.n_videos + kNumActivityKinds);

  std::map<SubgroupKey, SubgroupData> clients;
  std::vector<std::size_t> pretrain_pool;
  for (const auto& [key, f] : fold) {
    if (f.train.empty()) continue;
    clients[key] = SubgroupData{DataView(&data.records, f.train, AccessPhase::Train, &log),
                                DataView(&data.records, f.val, AccessPhase::Validate, &log)};
    pretrain_pool.insert(pretrain_pool.end(), f.train.begin(), f.train.end());
  }

  std::optional<ModelParams> pretrained;
  std::vector<double> pretrain_losses;
  if (cfg.pretrain.enabled) {
    ModelParams model = initial_model(fed.shape, derive_seed({seed, 0x9e7aULL}), nullptr);
    PretrainConfig pc;
    pc.epochs = cfg.pretrain.epochs;
    pc.batch_size = fed.training.batch_size;
    pc.optimizer = fed.training.optimizer;
    const DataView corpus(&data.records, pretrain_pool, AccessPhase::Pretrain, &log);
    pretrain_losses = pretrain(model, corpus, pc, seed);
    pretrained = std::move(model);
  }

  std::vector<RunResult> out;
  for (Strategy s : cfg.strategies) {
    fed.schedule.strategy = s;
    RunResult r;
    r.strategy = s;
    r.fold = job.fold;
    r.seed = job.seed;
    r.pretrain_losses = pretrain_losses;
    r.federation = run_federation(fed, clients, seed, pretrained ? &*pretrained : nullptr);
    for (const auto& [key, f] : fold) {
      auto it = r.federation.eval_models.find(key);
      if (it == r.federation.eval_models.end() || f.test.empty()) {
        r.test_auc[key] = std::nullopt;
        continue;
      }
      const DataView test(&data.records, f.test, AccessPhase::Test, &log);
      r.test_auc[key] = try_auc(it->second, test, key);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

ExperimentResult cross_validate(const ExperimentConfig& cfg, const Dataset& data, unsigned jobs) {
  if (cfg.strategies.empty()) throw ConfigError("no strategies to run");
  const SubgroupMap groups = build_subgroups(data.records, cfg.variable, cfg.include_unspecified);
  ExperimentResult result;
  result.folds = make_folds(data.records, groups, cfg.folds, cfg.split_seed);
  for (const FoldSplit& f : result.folds) result.splits.push_back(to_dataset_split(f, data.records));

  std::vector<Job> work;
  for (int f = 0; f < cfg.folds; ++f) {
    for (std::uint64_t s : cfg.seeds) work.push_back(Job{f, s});
  }
  std::vector<std::vector<RunResult>> slots(work.size());
  std::vector<std::string> errors(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) result.access.push_back(std::make_unique<AccessLog>());

  unsigned threads = jobs == 0 ? std::max(1u, std::thread::hardware_concurrency()) : jobs;
  threads = std::min<unsigned>(threads, static_cast<unsigned>(work.size()));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(work.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      try {
        slots[i] = run_job(cfg, data, result.folds[static_cast<std::size_t>(work[i].fold)],
                           work[i], *result.access[i]);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  for (auto& s : slots) {
    for (auto& r : s) result.runs.push_back(std::move(r));
  }

  std::vector<SubgroupKey> keys;
  for (const auto& [key, ids] : groups) {
    if (!ids.empty()) keys.push_back(key);
  }
  result.report = build_report(result.runs, cfg.strategies, keys, &result.warnings);
  result.report.seeds = cfg.seeds;
  result.report.folds = cfg.folds;
  result.report.rounds = cfg.federation.schedule.rounds;
  result.report.local_epochs = cfg.federation.schedule.local_epochs;
  return result;
}

std::size_t count_test_reads(const ExperimentResult& result) {
  std::size_t leaks = 0;
  std::size_t job = 0;
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    std::set<std::size_t> test;
    for (const auto& [key, sf] : result.folds[f]) test.insert(sf.test.begin(), sf.test.end());
    const std::size_t per_fold = result.access.size() / result.folds.size();
    for (std::size_t s = 0; s < per_fold; ++s, ++job) {
      for (AccessPhase phase : {AccessPhase::Pretrain, AccessPhase::Train, AccessPhase::Validate}) {
        for (std::size_t idx : result.access[job]->reads(phase)) leaks += test.count(idx);
      }
    }
  }
  return leaks;
}

EvalReport build_report(const std::vector<RunResult>& runs, const std::vector<Strategy>& strategies,
                        const std::vector<SubgroupKey>& subgroups,
                        std::vector<std::string>* warnings) {
  EvalReport report;
  for (Strategy s : strategies) {
    for (const SubgroupKey& key : subgroups) {
      std::vector<double> values;
      for (const RunResult& r : runs) {
        if (r.strategy != s) continue;
        auto it = r.test_auc.find(key);
        if (it != r.test_auc.end() && it->second) {
          values.push_back(*it->second);
        } else if (warnings) {
          warnings->push_back("undefined test AUC for " + std::string(to_string(s)) + " " +
                              key.label() + " (fold " + std::to_string(r.fold) + ", seed " +
                              std::to_string(r.seed) + "); excluded from the mean");
        }
      }
      ReportRow row;
      row.strategy = s;
      row.subgroup = key;
      row.n_runs = static_cast<int>(values.size());
      if (!values.empty()) {
        const MeanStd ms = mean_std(values);
        row.mean_auc = ms.mean;
        row.std_auc = ms.std;
      }
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  out << "strategy,variable,subgroup,mean_auc,std_auc,n_runs\n";
  char buf[64];
  for (const ReportRow& r : report.rows) {
    out << to_string(r.strategy) << ',' << to_char(r.subgroup.variable) << ','
        << csv_escape(r.subgroup.group) << ',';
    if (r.mean_auc) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", *r.mean_auc, r.std_auc);
      out << buf;
    } else {
      out << ',';
    }
    out << ',' << r.n_runs << '\n';
  }
}

std::vector<std::vector<std::string>> read_report_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_csv_line(line));
  }
  if (rows.empty() || rows.front() != std::vector<std::string>{"strategy", "variable", "subgroup",
                                                                "mean_auc", "std_auc", "n_runs"}) {
    throw FormatError("not a report.csv: unexpected header");
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 6) {
      throw FormatError("report.csv line " + std::to_string(i + 1) + " has " +
                        std::to_string(rows[i].size()) + " fields, expected 6");
    }
  }
  return rows;
}

std::string format_report_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      const std::string cell = rows[i][c].empty() ? "-" : rows[i][c];
      if (c) os << "  ";
      os << std::left << std::setw(static_cast<int>(width[c])) << cell;
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

void export_embeddings(std::ostream& out, const ModelParams& model,
                       const std::vector<StudentRecord>& students, DemographicVariable variable) {
  const ModelShape shape = shape_of(model);
  out << "student_id,subgroup";
  for (std::size_t i = 1; i <= shape.hidden_dim; ++i) out << ",h_" << i;
  out << '\n';
  char buf[32];
  for (const StudentRecord& r : students) {
    if (!r.sequence.empty() &&
        static_cast<std::size_t>(r.sequence.front().width()) != shape.input_dim) {
      throw ShapeError("student " + r.student_id + " encoding width " +
                       std::to_string(r.sequence.front().width()) +
                       " does not match model input width " + std::to_string(shape.input_dim));
    }
    const auto group = group_of(r.demographics, variable);
    const SubgroupKey key{variable, group ? *group : std::string(kUnspecified)};
    out << csv_escape(r.student_id) << ',' << csv_escape(key.label());
    const Vec h = embed(model, r.sequence);
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", h(i));
      out << ',' << buf;
    }
    out << '\n';
  }
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class OutputWriter {
 public:
  explicit OutputWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir_ / name).string());
    out << bytes;
    if (!out) throw FormatError("failed writing " + (dir_ / name).string());
    artifacts_[name] = hex64(fnv1a(bytes));
  }

  const std::map<std::string, std::string>& artifacts() const { return artifacts_; }

 private:
  fs::path dir_;
  std::map<std::string, std::string> artifacts_;
};

std::string file_tag(const std::string& group) {
  std::string out;
  for (char c : group) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

}  // namespace

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& result) {
  OutputWriter w(cfg.output_dir);
  {
    std::ostringstream os;
    write_report_csv(os, result.report);
    w.write("report.csv", os.str());
  }
  for (std::size_t f = 0; f < result.splits.size(); ++f) {
    std::ostringstream os;
    write_split_csv(os, result.splits[f]);
    w.write("split_f" + std::to_string(f) + ".csv", os.str());
  }
  for (const RunResult& r : result.runs) {
    const std::string tag = std::string(to_string(r.strategy)) + "_f" + std::to_string(r.fold) +
                            "_s" + std::to_string(r.seed);
    std::ostringstream metrics;
    write_round_metrics(metrics, r.federation.metrics);
    w.write("metrics_" + tag + ".csv", metrics.str());
    if (r.strategy == Strategy::Local) {
      for (const auto& [key, model] : r.federation.eval_models) {
        std::ostringstream os;
        save_params(os, model);
        w.write("model_Local_" + file_tag(key.group) + "_f" + std::to_string(r.fold) + "_s" +
                    std::to_string(r.seed) + ".bin",
                os.str());
      }
    } else {
      std::ostringstream os;
      save_params(os, r.federation.global);
      w.write("model_" + tag + ".bin", os.str());
    }
  }
  json manifest;
  manifest["config"] = config_to_json(cfg);
  manifest["seeds"] = cfg.seeds;
  manifest["folds"] = cfg.folds;
  manifest["artifacts"] = w.artifacts();
  manifest["warnings"] = result.warnings;
  std::ofstream out(cfg.output_dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

}  // namespace edufed
