#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edufed/data_model.hpp"
#include "edufed/federation.hpp"
#include "edufed/pretrain.hpp"
#include "edufed/training.hpp"

namespace edufed {

inline constexpr int kConfigSchemaVersion = 1;

struct DatasetSource {
  // Either a cohort spec to generate from...
  std::optional<nlohmann::json> spec;
  std::optional<std::filesystem::path> spec_path;
  std::uint64_t generate_seed = 0;
  // ...or ingest CSVs.
  std::filesystem::path events;
  std::filesystem::path students;
  int n_videos = 0;
};

struct PretrainSettings {
  bool enabled = false;
  int epochs = 10;
};

struct ExperimentConfig {
  DatasetSource dataset;
  DemographicVariable variable = DemographicVariable::Gender;
  bool include_unspecified = false;
  std::vector<Strategy> strategies;
  FederationConfig federation;  // schedule.strategy is set per run
  std::size_t max_sequence_length = kDefaultMaxSequenceLength;
  PretrainSettings pretrain;
  int folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t split_seed = 0;
  std::filesystem::path output_dir = "out";
};

/// Strict parse: unknown keys and out-of-range values raise ConfigError.
/// Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
/// Fully resolved config, defaults filled in.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct Dataset {
  int n_videos = 0;
  std::vector<StudentRecord> records;  // sequences capped
};

Dataset load_dataset(const ExperimentConfig& cfg);

/// Pool indices of each subgroup's fit / validation / test students.
struct SubgroupFold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};
using FoldSplit = std::map<SubgroupKey, SubgroupFold>;

/// Stratified by subgroup and label. With folds >= 2 this is ordinary k-fold
/// cross-validation; folds = 1 is a single holdout of one fifth. A stratified
/// fifth of each remaining train part becomes validation (at least one
/// student when the train part has two or more).
std::vector<FoldSplit> make_folds(const std::vector<StudentRecord>& records,
                                  const SubgroupMap& groups, int folds, std::uint64_t split_seed);

DatasetSplit to_dataset_split(const FoldSplit& fold, const std::vector<StudentRecord>& records);

struct RunResult {
  Strategy strategy = Strategy::FedAvg;
  int fold = 0;
  std::uint64_t seed = 0;
  FederationResult federation;
  std::map<SubgroupKey, std::optional<double>> test_auc;
  std::vector<double> pretrain_losses;
};

struct ReportRow {
  Strategy strategy = Strategy::FedAvg;
  SubgroupKey subgroup;
  std::optional<double> mean_auc;
  double std_auc = 0.0;
  int n_runs = 0;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  std::vector<std::uint64_t> seeds;
  int folds = 0;
  int rounds = 0;
  int local_epochs = 0;
};

struct ExperimentResult {
  std::vector<FoldSplit> folds;
  std::vector<DatasetSplit> splits;  // the same folds by student id
  std::vector<RunResult> runs;  // ordered by (fold, seed, strategy)
  // One log per (fold, seed) job.
  std::vector<std::unique_ptr<AccessLog>> access;
  EvalReport report;
  std::vector<std::string> warnings;
};

/// Every (fold, seed) pair is an independent job; up to `jobs` run at once
/// (0 = hardware threads). Results do not depend on `jobs`.
ExperimentResult cross_validate(const ExperimentConfig& cfg, const Dataset& data,
                                unsigned jobs = 0);

/// Number of test-split students read in the pretraining, training or
/// validation phase, summed over jobs. Zero for a leak-free run.
std::size_t count_test_reads(const ExperimentResult& result);

/// Mean and sample std over runs with a defined test AUC.
EvalReport build_report(const std::vector<RunResult>& runs, const std::vector<Strategy>& strategies,
                        const std::vector<SubgroupKey>& subgroups,
                        std::vector<std::string>* warnings = nullptr);

/// strategy,variable,subgroup,mean_auc,std_auc,n_runs
void write_report_csv(std::ostream& out, const EvalReport& report);
std::vector<std::vector<std::string>> read_report_csv(std::istream& in);
/// Aligned plain-text table of report.csv rows (header included).
std::string format_report_table(const std::vector<std::vector<std::string>>& rows);

/// student_id,subgroup,h_1..h_k from the pooled representation, dropout off.
void export_embeddings(std::ostream& out, const ModelParams& model,
                       const std::vector<StudentRecord>& students, DemographicVariable variable);

/// Writes report.csv, per-run metrics and models, split files and a manifest
/// into cfg.output_dir.
void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& result);

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace edufed
