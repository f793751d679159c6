#include <cmath>
#include <sstream>

#include "doctest.h"
#include "edufed/errors.hpp"
#include "edufed/irt.hpp"
#include "oracles.hpp"

using namespace edufed;
using oracle::correlation;
using oracle::simulate_rasch;

TEST_CASE("rasch probability") {
  CHECK(rasch_probability(0.7, 0.7) == 0.5);
  CHECK(rasch_probability(1.0, 0.0) > rasch_probability(0.5, 0.0));
  CHECK(rasch_probability(0.0, 1.0) < rasch_probability(0.0, 0.5));
  CHECK(rasch_probability(2.5, 1.0) == doctest::Approx(rasch_probability(3.5, 2.0)).epsilon(1e-15));
}

TEST_CASE("response matrix validation") {
  CHECK_THROWS_AS(ResponseMatrix({"a", "b"}, {0, 1}, {1, 0, -1, -1}), ValidationError);
  CHECK_THROWS_AS(ResponseMatrix({"a", "b"}, {0, 1}, {1, -1, 0, -1}), ValidationError);
  CHECK_THROWS_AS(ResponseMatrix({"a"}, {0, 1}, {1}), ShapeError);
  CHECK_THROWS_AS(ResponseMatrix({"a"}, {0}, {2}), ValidationError);
  const auto m = ResponseMatrix::from_responses(
      {{"a", {{3, 1}, {7, 0}}}, {"b", {}}, {"c", {{7, 1}}}});
  CHECK(m.num_students() == 2);
  CHECK(m.items() == std::vector<int>{3, 7});
  CHECK(m.at(1, 0) == -1);
  CHECK(m.at(1, 1) == 1);
  CHECK(m.num_observed() == 3);
}

TEST_CASE("all-correct student keeps a finite ability") {
  const ResponseMatrix m({"perfect", "mixed", "weak"}, {0, 1, 2},
                         {1, 1, 1, 1, 0, 1, 0, 0, 1});
  const RaschFit fit = fit_rasch(m, 500, 1e-10);
  CHECK(fit.converged);
  CHECK(std::isfinite(fit.abilities[0]));
  for (double b : fit.difficulties) CHECK(rasch_probability(fit.abilities[0], b) < 1.0);
  double mean_b = 0;
  for (double b : fit.difficulties) mean_b += b;
  CHECK(std::abs(mean_b) <= 1e-12);
}

TEST_CASE("rasch recovery on simulated data") {
  const Synthetic syn = simulate_rasch(200, 20, 77);
  const RaschFit fit = fit_rasch(syn.matrix, 200, 1e-8);
  CHECK(fit.converged);
  std::vector<double> truth = syn.b;
  double m = 0;
  for (double v : truth) m += v;
  m /= static_cast<double>(truth.size());
  double sq = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] -= m;
    sq += (truth[i] - fit.difficulties[i]) * (truth[i] - fit.difficulties[i]);
  }
  CHECK(correlation(truth, fit.difficulties) >= 0.9);
  CHECK(std::sqrt(sq / static_cast<double>(truth.size())) <= 0.3);
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t) {
    CHECK(fit.objective_trace[t] >= fit.objective_trace[t - 1]);
  }
}

TEST_CASE("penalized objective never decreases, with missing entries") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Synthetic syn = simulate_rasch(40, 8, seed, 0.3);
    const RaschFit fit = fit_rasch(syn.matrix, 100, 1e-12);
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t) {
      CHECK(fit.objective_trace[t] >= fit.objective_trace[t - 1]);
    }
  }
}

TEST_CASE("anchoring leaves probabilities unchanged") {
  const Synthetic syn = simulate_rasch(30, 6, 9);
  const RaschFit fit = fit_rasch(syn.matrix);
  std::vector<double> theta = fit.abilities;
  std::vector<double> b = fit.difficulties;
  for (double& t : theta) t += 1.75;
  for (double& v : b) v += 1.75;
  CHECK(rasch_log_likelihood(syn.matrix, theta, b) ==
        doctest::Approx(rasch_log_likelihood(syn.matrix, fit.abilities, fit.difficulties))
            .epsilon(1e-13));
  CHECK(fit.mean_log_likelihood < 0.0);
}

TEST_CASE("irt confidence") {
  RaschFit a;
  a.mean_log_likelihood = -0.4;
  RaschFit b;
  b.mean_log_likelihood = -0.8;
  const SubgroupKey ka{DemographicVariable::Gender, "M"};
  const SubgroupKey kb{DemographicVariable::Gender, "F"};
  auto w = irt_confidence({{ka, a}, {kb, b}});
  const double ea = std::exp(-0.4);
  const double eb = std::exp(-0.8);
  CHECK(w[ka] == doctest::Approx(ea / (ea + eb)).epsilon(1e-14));
  CHECK(w[ka] == doctest::Approx(0.599).epsilon(1e-3));
  CHECK(w[kb] == doctest::Approx(0.401).epsilon(1e-3));

  w = irt_confidence({{ka, a}, {kb, a}});
  CHECK(w[ka] == 0.5);
  CHECK(w[kb] == 0.5);

  RaschFit far;
  far.mean_log_likelihood = -900.0;
  w = irt_confidence({{ka, a}, {kb, far}});
  CHECK(std::abs(w[ka] + w[kb] - 1.0) <= 1e-9);
  CHECK_THROWS_AS(irt_confidence({}), ValidationError);
}

TEST_CASE("rasch csv export") {
  const ResponseMatrix m({"x,1", "y"}, {4}, {1, 0});
  const RaschFit fit = fit_rasch(m);
  std::ostringstream os;
  write_rasch_csv(os, fit);
  const std::string s = os.str();
  CHECK(s.rfind("entity,kind,value\n", 0) == 0);
  CHECK(s.find("\"x,1\",ability,") != std::string::npos);
  CHECK(s.find("4,difficulty,") != std::string::npos);
}
