#include "edufed/irt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "edufed/dataset_io.hpp"
#include "edufed/errors.hpp"

namespace edufed {

namespace {

// log sigma(x) and log(1 - sigma(x)) without overflow.
double log_sigmoid(double x) {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double response_log_lik(int y, double logit) {
  return y == 1 ? log_sigmoid(logit) : log_sigmoid(-logit);
}

}  // namespace

ResponseMatrix::ResponseMatrix(std::vector<std::string> students, std::vector<int> items,
                               std::vector<std::int8_t> entries)
    : students_(std::move(students)), items_(std::move(items)), entries_(std::move(entries)) {
  if (entries_.size() != students_.size() * items_.size()) {
    throw ShapeError("response matrix entries do not match students x items");
  }
  if (students_.empty() || items_.empty()) {
    throw ValidationError("response matrix needs at least one student and one item");
  }
  std::vector<bool> col_seen(items_.size(), false);
  for (std::size_t s = 0; s < students_.size(); ++s) {
    bool row_seen = false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const int v = at(s, i);
      if (v != -1 && v != 0 && v != 1) {
        throw ValidationError("response entries must be 1, 0 or -1 (missing)");
      }
      if (v != -1) {
        row_seen = true;
        col_seen[i] = true;
      }
    }
    if (!row_seen) throw ValidationError("student " + students_[s] + " has no observed response");
  }
  for (std::size_t i = 0; i < items_.size(); ++i) {
    if (!col_seen[i]) {
      throw ValidationError("item " + std::to_string(items_[i]) + " has no observed response");
    }
  }
}

ResponseMatrix ResponseMatrix::from_responses(
    const std::vector<std::pair<std::string, std::map<int, int>>>& responses) {
  std::set<int> item_set;
  std::vector<std::string> students;
  for (const auto& [id, answers] : responses) {
    if (answers.empty()) continue;
    students.push_back(id);
    for (const auto& [item, score] : answers) item_set.insert(item);
  }
  std::vector<int> items(item_set.begin(), item_set.end());
  std::vector<std::int8_t> entries(students.size() * items.size(), -1);
  std::size_t row = 0;
  for (const auto& [id, answers] : responses) {
    if (answers.empty()) continue;
    for (const auto& [item, score] : answers) {
      const auto col = static_cast<std::size_t>(
          std::lower_bound(items.begin(), items.end(), item) - items.begin());
      entries[row * items.size() + col] = static_cast<std::int8_t>(score != 0 ? 1 : 0);
    }
    ++row;
  }
  return ResponseMatrix(std::move(students), std::move(items), std::move(entries));
}

std::size_t ResponseMatrix::num_observed() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](std::int8_t v) { return v >= 0; }));
}

double rasch_probability(double ability, double difficulty) {
  return 1.0 / (1.0 + std::exp(-(ability - difficulty)));
}

double rasch_log_likelihood(const ResponseMatrix& m, const std::vector<double>& theta,
                            const std::vector<double>& b) {
  double ll = 0.0;
  for (std::size_t s = 0; s < m.num_students(); ++s) {
    for (std::size_t i = 0; i < m.num_items(); ++i) {
      const int y = m.at(s, i);
      if (y >= 0) ll += response_log_lik(y, theta[s] - b[i]);
    }
  }
  return ll;
}

namespace {

double penalty(const std::vector<double>& theta, const std::vector<double>& b, double prior) {
  double sq = 0.0;
  for (double t : theta) sq += t * t;
  for (double v : b) sq += v * v;
  return 0.5 * prior * sq;
}

// Damped Newton step on one coordinate of a separable concave objective.
// `value(x)` is the coordinate's share of the penalized objective;
// (grad, hess) are its first and second derivatives at x (hess < 0).
template <typename F>
double newton_coordinate(double x, double grad, double hess, F&& value) {
  double step = -grad / hess;
  const double base = value(x);
  for (int half = 0; half < 40; ++half) {
    const double cand = x + step;
    if (value(cand) >= base) return cand;
    step *= 0.5;
  }
  return x;
}

}  // namespace

RaschFit fit_rasch(const ResponseMatrix& m, int max_iters, double tol, double prior) {
  if (max_iters < 0) throw ValidationError("max_iters must be non-negative");
  if (!(tol > 0.0)) throw ValidationError("tolerance must be positive");
  if (!(prior > 0.0)) throw ValidationError("prior weight must be positive");
  const std::size_t S = m.num_students();
  const std::size_t I = m.num_items();
  std::vector<double> theta(S, 0.0);
  std::vector<double> b(I, 0.0);

  RaschFit fit;
  fit.students = m.students();
  fit.items = m.items();
  fit.log_likelihood_trace.push_back(rasch_log_likelihood(m, theta, b));
  fit.objective_trace.push_back(fit.log_likelihood_trace.back());

  for (int iter = 0; iter < max_iters; ++iter) {
    const std::vector<double> theta_prev = theta;
    const std::vector<double> b_prev = b;
    double max_change = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      auto value = [&](double t) {
        double v = -0.5 * prior * t * t;
        for (std::size_t i = 0; i < I; ++i) {
          const int y = m.at(s, i);
          if (y >= 0) v += response_log_lik(y, t - b[i]);
        }
        return v;
      };
      double g = -prior * theta[s];
      double h = -prior;
      for (std::size_t i = 0; i < I; ++i) {
        const int y = m.at(s, i);
        if (y < 0) continue;
        const double p = rasch_probability(theta[s], b[i]);
        g += y - p;
        h -= p * (1.0 - p);
      }
      const double next = newton_coordinate(theta[s], g, h, value);
      max_change = std::max(max_change, std::abs(next - theta[s]));
      theta[s] = next;
    }
    for (std::size_t i = 0; i < I; ++i) {
      auto value = [&](double d) {
        double v = -0.5 * prior * d * d;
        for (std::size_t s = 0; s < S; ++s) {
          const int y = m.at(s, i);
          if (y >= 0) v += response_log_lik(y, theta[s] - d);
        }
        return v;
      };
      double g = -prior * b[i];
      double h = -prior;
      for (std::size_t s = 0; s < S; ++s) {
        const int y = m.at(s, i);
        if (y < 0) continue;
        const double p = rasch_probability(theta[s], b[i]);
        g += p - y;
        h -= p * (1.0 - p);
      }
      const double next = newton_coordinate(b[i], g, h, value);
      max_change = std::max(max_change, std::abs(next - b[i]));
      b[i] = next;
    }
    // Common shift of theta and b: the likelihood is flat along it, so the
    // prior alone fixes the optimum in closed form.
    double total = 0.0;
    for (double t : theta) total += t;
    for (double v : b) total += v;
    const double shift = -total / static_cast<double>(S + I);
    for (double& t : theta) t += shift;
    for (double& v : b) v += shift;
    max_change = std::max(max_change, std::abs(shift));
    const double ll = rasch_log_likelihood(m, theta, b);
    const double objective = ll - penalty(theta, b, prior);
    if (objective < fit.objective_trace.back()) {
      // Only rounding is left at this point.
      theta = theta_prev;
      b = b_prev;
      fit.converged = true;
      break;
    }
    fit.log_likelihood_trace.push_back(ll);
    fit.objective_trace.push_back(objective);
    fit.iterations = iter + 1;
    if (!std::isfinite(fit.objective_trace.back())) {
      throw NumericError("Rasch fit produced a non-finite objective");
    }
    if (max_change < tol) {
      fit.converged = true;
      break;
    }
  }

  double mean_b = 0.0;
  for (double v : b) mean_b += v;
  mean_b /= static_cast<double>(I);
  for (double& v : b) v -= mean_b;
  for (double& t : theta) t -= mean_b;

  fit.abilities = std::move(theta);
  fit.difficulties = std::move(b);
  fit.mean_log_likelihood = rasch_log_likelihood(m, fit.abilities, fit.difficulties) /
                            static_cast<double>(m.num_observed());
  return fit;
}

std::map<SubgroupKey, double> irt_confidence(const std::map<SubgroupKey, RaschFit>& fits) {
  if (fits.empty()) throw ValidationError("IRT confidence needs at least one subgroup fit");
  // Shift by the max so the exponentials stay in range; the ratio is unchanged.
  double top = -std::numeric_limits<double>::infinity();
  for (const auto& [key, fit] : fits) top = std::max(top, fit.mean_log_likelihood);
  std::map<SubgroupKey, double> out;
  double total = 0.0;
  for (const auto& [key, fit] : fits) {
    const double raw = std::exp(fit.mean_log_likelihood - top);
    out[key] = raw;
    total += raw;
  }
  for (auto& [key, w] : out) w /= total;
  return out;
}

void write_rasch_csv(std::ostream& out, const RaschFit& fit) {
  out << "entity,kind,value\n";
  out.precision(17);
  for (std::size_t s = 0; s < fit.students.size(); ++s) {
    out << csv_escape(fit.students[s]) << ",ability," << fit.abilities[s] << "\n";
  }
  for (std::size_t i = 0; i < fit.items.size(); ++i) {
    out << fit.items[i] << ",difficulty," << fit.difficulties[i] << "\n";
  }
}

}  // namespace edufed
