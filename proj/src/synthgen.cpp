#include "edufed/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "edufed/dataset_io.hpp"
#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

using nlohmann::json;

namespace {

constexpr double kRowTolerance = 1e-9;

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

void check_distribution(std::span<const double> dist, const std::string& what,
                        std::vector<std::string>& out) {
  double total = 0.0;
  for (double p : dist) {
    if (!is_probability(p)) {
      out.push_back(what + " has an entry outside [0, 1]");
      return;
    }
    total += p;
  }
  if (std::abs(total - 1.0) > kRowTolerance) out.push_back(what + " does not sum to 1");
}

std::pair<int, int> band_years(const std::string& band) {
  if (band == "~80") return {1950, 1980};
  if (band == "80~90") return {1981, 1990};
  return {1991, 2005};
}

}  // namespace

std::vector<std::string> spec_violations(const CohortSpec& spec) {
  std::vector<std::string> out;
  if (spec.n_videos < 1) out.push_back("n_videos must be at least 1");
  std::set<int> seen_quiz;
  for (int v : spec.quiz_videos) {
    if (v < 0 || v >= spec.n_videos) {
      out.push_back("quiz video " + std::to_string(v) + " outside [0, n_videos)");
    }
    if (!seen_quiz.insert(v).second) out.push_back("quiz video " + std::to_string(v) + " repeated");
  }
  if (!(spec.unspecified_fraction >= 0.0 && spec.unspecified_fraction < 1.0)) {
    out.push_back("unspecified_fraction must lie in [0, 1)");
  }
  if (spec.profiles.empty()) out.push_back("at least one profile is required");
  const auto tags = named_groups(spec.demographic_variable);
  std::set<std::string> names;
  for (std::size_t p = 0; p < spec.profiles.size(); ++p) {
    const SubgroupProfile& prof = spec.profiles[p];
    const std::string where = "profile '" + prof.name + "'";
    if (!names.insert(prof.name).second) out.push_back(where + " is defined twice");
    if (std::find(tags.begin(), tags.end(), prof.name) == tags.end()) {
      out.push_back(where + " is not a group of variable " +
                    std::string(1, to_char(spec.demographic_variable)));
    }
    if (prof.population < 1) out.push_back(where + " population must be at least 1");
    for (int r = 0; r < kNumActivityKinds; ++r) {
      check_distribution(prof.transition[static_cast<std::size_t>(r)],
                         where + " transition row " +
                             std::string(to_string(static_cast<ActivityKind>(r))),
                         out);
    }
    check_distribution(prof.initial, where + " initial distribution", out);
    if (static_cast<int>(prof.video_access.size()) != spec.n_videos) {
      out.push_back(where + " video_access must have n_videos entries");
    } else {
      check_distribution(prof.video_access, where + " video_access", out);
    }
    if (!is_probability(prof.quiz_correct_prob)) {
      out.push_back(where + " quiz_correct_prob must lie in [0, 1]");
    }
    if (!(prof.length.mean >= 1.0)) out.push_back(where + " length mean must be at least 1");
    if (!(prof.length.dispersion > 0.0)) out.push_back(where + " length dispersion must be positive");
    for (double w : {prof.pass_model.intercept, prof.pass_model.weight_on_correct_fraction,
                     prof.pass_model.weight_on_forum_fraction}) {
      if (!std::isfinite(w)) {
        out.push_back(where + " pass_model coefficients must be finite");
        break;
      }
    }
  }
  return out;
}

void validate_spec(const CohortSpec& spec) {
  const auto v = spec_violations(spec);
  if (v.empty()) return;
  std::string msg = "invalid cohort spec: ";
  for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? "; " : "") + v[i];
  throw ValidationError(msg);
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

KindDistribution kind_distribution(const json& j, const std::string& where) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kNumActivityKinds) throw ConfigError(where + " must have 7 entries");
  KindDistribution out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

SubgroupProfile profile_from_json(const json& j, int n_videos) {
  const std::string where = "profile";
  reject_unknown(j, {"name", "population", "transition", "initial", "video_access",
                     "quiz_correct_prob", "length", "pass_model"},
                 where);
  SubgroupProfile p;
  p.name = required<std::string>(j, "name", where);
  const std::string here = "profile '" + p.name + "'";
  p.population = required<int>(j, "population", here);
  try {
    const json& t = j.at("transition");
    if (!t.is_array() || t.size() != kNumActivityKinds) {
      throw ConfigError(here + " transition must have 7 rows");
    }
    for (std::size_t r = 0; r < kNumActivityKinds; ++r) {
      p.transition[r] = kind_distribution(t[r], here + " transition row");
    }
    if (j.contains("initial")) {
      p.initial = kind_distribution(j.at("initial"), here + " initial");
    } else {
      p.initial.fill(1.0 / kNumActivityKinds);
    }
    const json& va = j.at("video_access");
    if (va.is_string()) {
      if (va.get<std::string>() != "uniform") {
        throw ConfigError(here + " video_access must be a list or \"uniform\"");
      }
      p.video_access.assign(static_cast<std::size_t>(std::max(n_videos, 0)),
                            1.0 / std::max(n_videos, 1));
    } else {
      p.video_access = va.get<std::vector<double>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(here + ": " + e.what());
  }
  p.quiz_correct_prob = required<double>(j, "quiz_correct_prob", here);
  const json& len = j.at("length");
  reject_unknown(len, {"mean", "dispersion"}, here + " length");
  p.length.mean = required<double>(len, "mean", here + " length");
  if (len.contains("dispersion")) p.length.dispersion = required<double>(len, "dispersion", here);
  const json& pm = j.at("pass_model");
  reject_unknown(pm, {"intercept", "weight_on_correct_fraction", "weight_on_forum_fraction"},
                 here + " pass_model");
  p.pass_model.intercept = required<double>(pm, "intercept", here + " pass_model");
  p.pass_model.weight_on_correct_fraction =
      required<double>(pm, "weight_on_correct_fraction", here + " pass_model");
  p.pass_model.weight_on_forum_fraction =
      required<double>(pm, "weight_on_forum_fraction", here + " pass_model");
  return p;
}

}  // namespace

CohortSpec cohort_spec_from_json(const json& j) {
  reject_unknown(j, {"n_videos", "quiz_videos", "demographic_variable", "unspecified_fraction",
                     "profiles"},
                 "cohort spec");
  CohortSpec spec;
  spec.n_videos = required<int>(j, "n_videos", "cohort spec");
  if (!j.contains("quiz_videos")) throw ConfigError("missing key 'quiz_videos' in cohort spec");
  const json& q = j.at("quiz_videos");
  if (q.is_string() && q.get<std::string>() == "all") {
    spec.quiz_videos.resize(static_cast<std::size_t>(std::max(spec.n_videos, 0)));
    std::iota(spec.quiz_videos.begin(), spec.quiz_videos.end(), 0);
  } else {
    spec.quiz_videos = required<std::vector<int>>(j, "quiz_videos", "cohort spec");
  }
  try {
    spec.demographic_variable =
        parse_variable(required<std::string>(j, "demographic_variable", "cohort spec"));
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (j.contains("unspecified_fraction")) {
    spec.unspecified_fraction = required<double>(j, "unspecified_fraction", "cohort spec");
  }
  if (!j.contains("profiles") || !j.at("profiles").is_array()) {
    throw ConfigError("cohort spec needs a 'profiles' list");
  }
  for (const json& p : j.at("profiles")) spec.profiles.push_back(profile_from_json(p, spec.n_videos));
  validate_spec(spec);
  return spec;
}

CohortSpec load_cohort_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open cohort spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cohort spec " + path.string() + " is not valid JSON: " + e.what());
  }
  return cohort_spec_from_json(j);
}

json cohort_spec_to_json(const CohortSpec& spec) {
  json j;
  j["n_videos"] = spec.n_videos;
  j["quiz_videos"] = spec.quiz_videos;
  j["demographic_variable"] = std::string(1, to_char(spec.demographic_variable));
  j["unspecified_fraction"] = spec.unspecified_fraction;
  j["profiles"] = json::array();
  for (const SubgroupProfile& p : spec.profiles) {
    json t = json::array();
    for (const auto& row : p.transition) t.push_back(row);
    j["profiles"].push_back({
        {"name", p.name},
        {"population", p.population},
        {"transition", t},
        {"initial", p.initial},
        {"video_access", p.video_access},
        {"quiz_correct_prob", p.quiz_correct_prob},
        {"length", {{"mean", p.length.mean}, {"dispersion", p.length.dispersion}}},
        {"pass_model",
         {{"intercept", p.pass_model.intercept},
          {"weight_on_correct_fraction", p.pass_model.weight_on_correct_fraction},
          {"weight_on_forum_fraction", p.pass_model.weight_on_forum_fraction}}},
    });
  }
  return j;
}

double correct_fraction(const StudentRecord& record) {
  if (record.quiz_responses.empty()) return 0.0;
  int correct = 0;
  for (const auto& [video, score] : record.quiz_responses) correct += score;
  return static_cast<double>(correct) / static_cast<double>(record.quiz_responses.size());
}

double forum_fraction(const StudentRecord& record) {
  if (record.sequence.empty()) return 0.0;
  std::size_t forum = 0;
  for (const auto& a : record.sequence) {
    if (a.kind() && !is_watch(*a.kind())) ++forum;
  }
  return static_cast<double>(forum) / static_cast<double>(record.sequence.size());
}

namespace {

template <typename Dist>
int sample_index(const Dist& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(last);
}

std::size_t sample_length(const LengthDist& len, Rng& rng) {
  const double extra = len.mean - 1.0;
  if (extra <= 0.0) return 1;
  std::gamma_distribution<double> gamma(len.dispersion, extra / len.dispersion);
  const double rate = gamma(rng);
  std::poisson_distribution<long long> poisson(rate);
  return 1 + static_cast<std::size_t>(poisson(rng));
}

constexpr std::int64_t kCohortStart = 1'600'000'000;

}  // namespace

Cohort generate_cohort(const CohortSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  const std::set<int> quiz(spec.quiz_videos.begin(), spec.quiz_videos.end());
  Cohort cohort;
  cohort.n_videos = spec.n_videos;
  int serial = 0;
  for (std::size_t p = 0; p < spec.profiles.size(); ++p) {
    const SubgroupProfile& prof = spec.profiles[p];
    for (int s = 0; s < prof.population; ++s) {
      Rng rng = make_rng({seed, p, static_cast<std::uint64_t>(s), 0x5e9ULL});
      StudentRecord rec;
      char id[16];
      std::snprintf(id, sizeof id, "u%06d", serial++);
      rec.student_id = id;
      rec.generating_profile = static_cast<int>(p);

      const std::size_t length = sample_length(prof.length, rng);
      std::int64_t clock = kCohortStart + static_cast<std::int64_t>(rng() % 86'400);
      auto state = static_cast<ActivityKind>(sample_index(prof.initial, rng));
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0) {
          state = static_cast<ActivityKind>(
              sample_index(prof.transition[static_cast<std::size_t>(state)], rng));
          clock += 30 + static_cast<std::int64_t>(rng() % 3600);
        }
        EventRow row;
        row.event.student_id = rec.student_id;
        row.event.timestamp = clock;
        if (!is_watch(state)) {
          row.event.kind = state;
          rec.sequence.push_back(EncodedActivity::forum(spec.n_videos, state));
        } else {
          const int video = sample_index(prof.video_access, rng);
          row.event.video_index = video;
          ActivityKind kind = ActivityKind::WatchNoQuiz;
          if (quiz.count(video)) {
            auto answered = rec.quiz_responses.find(video);
            if (answered != rec.quiz_responses.end()) {
              kind = answered->second ? ActivityKind::WatchCorrect : ActivityKind::WatchIncorrect;
            } else if (state == ActivityKind::WatchNoAnswer) {
              kind = ActivityKind::WatchNoAnswer;
            } else {
              const int score = uniform01(rng) < prof.quiz_correct_prob ? 1 : 0;
              rec.quiz_responses[video] = score;
              kind = score ? ActivityKind::WatchCorrect : ActivityKind::WatchIncorrect;
            }
            if (kind != ActivityKind::WatchNoAnswer) {
              row.outcome = QuizOutcome{kind == ActivityKind::WatchCorrect ? 1.0 : 0.0, 1.0};
            }
          }
          row.event.kind = kind;
          rec.sequence.push_back(EncodedActivity::watch(spec.n_videos, video, kind));
        }
        // The state follows the realized activity.
        state = row.event.kind;
        cohort.events.push_back(std::move(row));
      }

      const PassModel& pm = prof.pass_model;
      const double logit = pm.intercept + pm.weight_on_correct_fraction * correct_fraction(rec) +
                           pm.weight_on_forum_fraction * forum_fraction(rec);
      rec.label = uniform01(rng) < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;

      Demographics& d = rec.demographics;
      d.gender = static_cast<Gender>(rng() % 2);
      d.continent = static_cast<Continent>(rng() % 5);
      d.birth_year = 1950 + static_cast<int>(rng() % 56);
      switch (spec.demographic_variable) {
        case DemographicVariable::Gender: d.gender = parse_gender(prof.name); break;
        case DemographicVariable::Continent: d.continent = parse_continent(prof.name); break;
        case DemographicVariable::BirthYear: {
          const auto [lo, hi] = band_years(prof.name);
          d.birth_year = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
          break;
        }
      }
      if (uniform01(rng) < spec.unspecified_fraction) {
        switch (spec.demographic_variable) {
          case DemographicVariable::Gender: d.gender.reset(); break;
          case DemographicVariable::Continent: d.continent.reset(); break;
          case DemographicVariable::BirthYear: d.birth_year.reset(); break;
        }
      }
      cohort.students.push_back(StudentInfo{rec.student_id, rec.demographics, rec.label});
      cohort.records.push_back(std::move(rec));
    }
  }
  return cohort;
}

double profile_divergence(const SubgroupProfile& a, const SubgroupProfile& b) {
  if (a.video_access.size() != b.video_access.size()) {
    throw ShapeError("profiles have different numbers of videos");
  }
  double rows = 0.0;
  for (std::size_t r = 0; r < kNumActivityKinds; ++r) {
    double tv = 0.0;
    for (std::size_t c = 0; c < kNumActivityKinds; ++c) {
      tv += std::abs(a.transition[r][c] - b.transition[r][c]);
    }
    rows += 0.5 * tv;
  }
  double video = 0.0;
  for (std::size_t v = 0; v < a.video_access.size(); ++v) {
    video += std::abs(a.video_access[v] - b.video_access[v]);
  }
  return rows / kNumActivityKinds + 0.5 * video;
}

ActivityHeatmap activity_heatmap(const std::vector<const StudentRecord*>& records,
                                 std::size_t max_steps) {
  ActivityHeatmap map;
  for (std::size_t t = 0; t < max_steps; ++t) {
    KindDistribution row{};
    std::size_t present = 0;
    for (const StudentRecord* r : records) {
      if (t >= r->sequence.size()) continue;
      const auto kind = r->sequence[t].kind();
      if (!kind) continue;
      row[static_cast<std::size_t>(*kind)] += 1.0;
      ++present;
    }
    if (present == 0) break;
    for (double& v : row) v /= static_cast<double>(present);
    map.push_back(row);
  }
  return map;
}

double heatmap_l1(const ActivityHeatmap& a, const ActivityHeatmap& b) {
  double total = 0.0;
  for (std::size_t t = 0; t < std::min(a.size(), b.size()); ++t) {
    for (std::size_t k = 0; k < kNumActivityKinds; ++k) total += std::abs(a[t][k] - b[t][k]);
  }
  return total;
}

void write_cohort(const std::filesystem::path& dir, const Cohort& cohort) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw FormatError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("events.csv");
    write_events_csv(out, cohort.events);
  }
  {
    auto out = open("students.csv");
    write_students_csv(out, cohort.students);
  }
  auto out = open("cohort.json");
  out << json{{"n_videos", cohort.n_videos}}.dump(2) << "\n";
}

}  // namespace edufed
