#pragma once

#include <span>
#include <string>
#include <vector>

#include "edufed/data_model.hpp"

namespace edufed {

struct ScoredStudent {
  std::string student_id;
  double pass_probability = 0.5;
  int label = 0;
  SubgroupKey subgroup;
};

/// Mann-Whitney AUC with midranks for tied scores. Throws UndefinedAucError
/// when only one class is present.
double auc(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const ScoredStudent> scored);

/// Mean and sample standard deviation (0 for fewer than two values).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace edufed
