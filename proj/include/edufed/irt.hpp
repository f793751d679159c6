#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "edufed/data_model.hpp"

namespace edufed {

/// Students x items, entries 1 (correct), 0 (incorrect), -1 (missing).
/// Every row and every column has at least one observed entry.
class ResponseMatrix {
 public:
  ResponseMatrix(std::vector<std::string> students, std::vector<int> items,
                 std::vector<std::int8_t> entries);

  /// Builds from per-student first-attempt responses, dropping students with
  /// no responses. Items are the union of answered quiz videos.
  static ResponseMatrix from_responses(
      const std::vector<std::pair<std::string, std::map<int, int>>>& responses);

  std::size_t num_students() const { return students_.size(); }
  std::size_t num_items() const { return items_.size(); }
  const std::vector<std::string>& students() const { return students_; }
  const std::vector<int>& items() const { return items_; }
  int at(std::size_t s, std::size_t i) const { return entries_[s * items_.size() + i]; }
  std::size_t num_observed() const;

 private:
  std::vector<std::string> students_;
  std::vector<int> items_;
  std::vector<std::int8_t> entries_;
};

inline constexpr double kRaschPrior = 0.01;

struct RaschFit {
  std::vector<std::string> students;
  std::vector<int> items;
  std::vector<double> abilities;
  std::vector<double> difficulties;
  double mean_log_likelihood = 0.0;  // per observed response, no prior term
  bool converged = false;
  int iterations = 0;
  // Values after each sweep; trace[0] is the starting point.
  std::vector<double> objective_trace;       // penalized
  std::vector<double> log_likelihood_trace;  // unpenalized
};

double rasch_probability(double ability, double difficulty);

/// Alternating damped Newton on abilities then difficulties, L2 prior on
/// both, plus the closed-form common shift after each sweep. Coordinate
/// steps are halved until the penalized objective does not decrease.
/// Difficulties are re-centred to mean zero at the end.
RaschFit fit_rasch(const ResponseMatrix& matrix, int max_iters = 200, double tol = 1e-6,
                   double prior = kRaschPrior);

/// Penalized and plain log-likelihood of (abilities, difficulties).
double rasch_log_likelihood(const ResponseMatrix& matrix, const std::vector<double>& abilities,
                            const std::vector<double>& difficulties);

/// exp(mean log-likelihood) per subgroup, normalized to sum 1.
std::map<SubgroupKey, double> irt_confidence(const std::map<SubgroupKey, RaschFit>& fits);

/// CSV rows: entity,kind,value with kind in {ability, difficulty}.
void write_rasch_csv(std::ostream& out, const RaschFit& fit);

}  // namespace edufed
