#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "edufed/data_model.hpp"

namespace edufed {

using KindDistribution = std::array<double, kNumActivityKinds>;

struct PassModel {
  double intercept = 0.0;
  double weight_on_correct_fraction = 0.0;
  double weight_on_forum_fraction = 0.0;
};

/// Sequence length is 1 + NegBin(mean - 1, dispersion); dispersion 1 gives the
/// geometric distribution.
struct LengthDist {
  double mean = 40.0;
  double dispersion = 1.0;
};

struct SubgroupProfile {
  std::string name;  // subgroup tag of the cohort's demographic variable
  int population = 0;
  std::array<KindDistribution, kNumActivityKinds> transition{};
  KindDistribution initial{};  // distribution of the first activity
  std::vector<double> video_access;
  double quiz_correct_prob = 0.5;
  LengthDist length;
  PassModel pass_model;
};

struct CohortSpec {
  int n_videos = 26;
  std::vector<int> quiz_videos;
  std::vector<SubgroupProfile> profiles;
  DemographicVariable demographic_variable = DemographicVariable::Gender;
  double unspecified_fraction = 0.0;
};

/// All invariant violations of a spec, empty when valid.
std::vector<std::string> spec_violations(const CohortSpec& spec);
/// Throws ValidationError listing every violation.
void validate_spec(const CohortSpec& spec);

// JSON schema (all keys required unless marked):
//   n_videos: int
//   quiz_videos: [int] | "all"
//   demographic_variable: "G" | "C" | "Y"
//   unspecified_fraction: real                      (optional, default 0)
//   profiles: [{
//     name, population,
//     transition: 7x7 rows in activity-kind order,
//     initial: [7]                                  (optional, default uniform)
//     video_access: [n] | "uniform",
//     quiz_correct_prob,
//     length: {mean, dispersion}                    (dispersion optional, default 1)
//     pass_model: {intercept, weight_on_correct_fraction, weight_on_forum_fraction}
//   }]
// Unknown keys are errors.
CohortSpec cohort_spec_from_json(const nlohmann::json& j);
CohortSpec load_cohort_spec(const std::filesystem::path& path);
nlohmann::json cohort_spec_to_json(const CohortSpec& spec);

struct Cohort {
  int n_videos = 0;
  std::vector<StudentRecord> records;  // uncapped sequences
  std::vector<EventRow> events;
  std::vector<StudentInfo> students;
};

/// Deterministic in (spec, seed). Each student draws from its own stream
/// derived from (seed, profile index, student index).
Cohort generate_cohort(const CohortSpec& spec, std::uint64_t seed);

/// Share of first-attempt quiz answers that were correct (0 with none), and
/// share of forum activities in the sequence.
double correct_fraction(const StudentRecord& record);
double forum_fraction(const StudentRecord& record);

/// Mean total-variation distance over transition rows plus the total-variation
/// distance of video_access. In [0, 2].
double profile_divergence(const SubgroupProfile& a, const SubgroupProfile& b);

/// Per-time-step kind frequencies: row t holds the share of students with at
/// least t + 1 activities whose activity t is of each kind.
using ActivityHeatmap = std::vector<KindDistribution>;
ActivityHeatmap activity_heatmap(const std::vector<const StudentRecord*>& records,
                                 std::size_t max_steps);
/// Sum of absolute differences over the common time steps.
double heatmap_l1(const ActivityHeatmap& a, const ActivityHeatmap& b);

/// Writes events.csv, students.csv and cohort.json (n_videos) into `dir`.
void write_cohort(const std::filesystem::path& dir, const Cohort& cohort);

}  // namespace edufed
