#include "edufed/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "edufed/errors.hpp"
#include "edufed/rng.hpp"

namespace edufed {

namespace {

constexpr std::string_view kKindNames[kNumActivityKinds] = {
    "watch_noquiz", "watch_correct", "watch_incorrect", "watch_noanswer",
    "forum_post",   "forum_reply",   "forum_view",
};

}  // namespace

std::string_view to_string(ActivityKind kind) {
  return kKindNames[static_cast<int>(kind)];
}

ActivityKind parse_activity_kind(std::string_view text) {
  for (int i = 0; i < kNumActivityKinds; ++i) {
    if (kKindNames[i] == text) return static_cast<ActivityKind>(i);
  }
  throw EncodingError("unknown activity kind '" + std::string(text) + "'");
}

bool QuizOutcome::first_attempt_score() const {
  return score_first_attempt(points, max_points) == 1;
}

int score_first_attempt(double points, double max_points) {
  if (!(max_points > 0.0)) {
    throw DomainError("max_points must be positive");
  }
  if (!(points >= 0.0) || points > max_points) {
    throw DomainError("points must lie in [0, max_points]");
  }
  return points == max_points ? 1 : 0;
}

EncodedActivity EncodedActivity::zero(int n_videos) {
  return EncodedActivity(n_videos, -1, -1);
}

EncodedActivity EncodedActivity::watch(int n_videos, int video_index, ActivityKind kind) {
  if (!is_watch(kind)) throw EncodingError("watch encoding needs a watch_* kind");
  if (video_index < 0 || video_index >= n_videos) {
    throw EncodingError("video index " + std::to_string(video_index) +
                        " outside [0, " + std::to_string(n_videos) + ")");
  }
  return EncodedActivity(n_videos, video_index, n_videos + static_cast<int>(kind));
}

EncodedActivity EncodedActivity::forum(int n_videos, ActivityKind kind) {
  if (is_watch(kind)) throw EncodingError("forum encoding needs a forum_* kind");
  return EncodedActivity(n_videos, -1, n_videos + static_cast<int>(kind));
}

std::optional<ActivityKind> EncodedActivity::kind() const {
  if (kind_bit_ < 0) return std::nullopt;
  return static_cast<ActivityKind>(kind_bit_ - n_videos_);
}

std::optional<int> EncodedActivity::video_index() const {
  if (video_bit_ < 0) return std::nullopt;
  return video_bit_;
}

int EncodedActivity::num_active() const {
  return (video_bit_ >= 0 ? 1 : 0) + (kind_bit_ >= 0 ? 1 : 0);
}

int EncodedActivity::active(int i) const {
  if (video_bit_ >= 0) return i == 0 ? video_bit_ : kind_bit_;
  return kind_bit_;
}

std::vector<std::uint8_t> EncodedActivity::bits() const {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(width()), 0);
  if (video_bit_ >= 0) out[static_cast<std::size_t>(video_bit_)] = 1;
  if (kind_bit_ >= 0) out[static_cast<std::size_t>(kind_bit_)] = 1;
  return out;
}

EncodedActivity encode_event(const ActivityEvent& event,
                             const std::optional<QuizOutcome>& outcome, int n_videos) {
  if (n_videos < 1) throw EncodingError("number of videos must be positive");
  if (!is_watch(event.kind)) {
    if (outcome) throw EncodingError("quiz outcome supplied for a forum event");
    if (event.video_index) throw EncodingError("forum event carries a video index");
    return EncodedActivity::forum(n_videos, event.kind);
  }
  if (!event.video_index) throw EncodingError("watch event without a video index");
  ActivityKind kind = event.kind;
  if (outcome) {
    kind = outcome->first_attempt_score() ? ActivityKind::WatchCorrect
                                          : ActivityKind::WatchIncorrect;
  }
  return EncodedActivity::watch(n_videos, *event.video_index, kind);
}

namespace {
constexpr std::string_view kGenderNames[] = {"M", "F"};
constexpr std::string_view kContinentNames[] = {"AS", "AF", "EU", "NA", "SA"};
}  // namespace

std::string_view to_string(Gender g) { return kGenderNames[static_cast<int>(g)]; }
std::string_view to_string(Continent c) { return kContinentNames[static_cast<int>(c)]; }

std::optional<Gender> parse_gender(std::string_view text) {
  for (int i = 0; i < 2; ++i) {
    if (kGenderNames[i] == text) return static_cast<Gender>(i);
  }
  return std::nullopt;
}

std::optional<Continent> parse_continent(std::string_view text) {
  for (int i = 0; i < 5; ++i) {
    if (kContinentNames[i] == text) return static_cast<Continent>(i);
  }
  return std::nullopt;
}

void cap_sequence(StudentRecord& record, std::size_t max_length) {
  if (max_length == 0 || record.sequence.size() <= max_length) return;
  const auto drop = static_cast<std::ptrdiff_t>(record.sequence.size() - max_length);
  record.sequence.erase(record.sequence.begin(), record.sequence.begin() + drop);
}

std::vector<StudentRecord> assemble_records(std::span<const EventRow> events,
                                            std::span<const StudentInfo> students,
                                            int n_videos, std::size_t max_length) {
  std::unordered_map<std::string, std::vector<std::size_t>> by_student;
  for (std::size_t i = 0; i < events.size(); ++i) {
    by_student[events[i].event.student_id].push_back(i);
  }
  std::vector<StudentRecord> records;
  records.reserve(students.size());
  for (const StudentInfo& info : students) {
    auto it = by_student.find(info.student_id);
    if (it == by_student.end()) continue;
    std::vector<std::size_t>& rows = it->second;
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return events[a].event.timestamp < events[b].event.timestamp;
    });
    StudentRecord rec;
    rec.student_id = info.student_id;
    rec.demographics = info.demographics;
    rec.label = info.label;
    rec.sequence.reserve(rows.size());
    for (std::size_t row : rows) {
      const EventRow& e = events[row];
      rec.sequence.push_back(encode_event(e.event, e.outcome, n_videos));
      if (e.outcome && e.event.video_index) {
        rec.quiz_responses.try_emplace(*e.event.video_index,
                                       e.outcome->first_attempt_score() ? 1 : 0);
      }
    }
    cap_sequence(rec, max_length);
    records.push_back(std::move(rec));
  }
  return records;
}

char to_char(DemographicVariable v) {
  switch (v) {
    case DemographicVariable::Gender: return 'G';
    case DemographicVariable::Continent: return 'C';
    case DemographicVariable::BirthYear: return 'Y';
  }
  return '?';
}

DemographicVariable parse_variable(std::string_view text) {
  if (text == "G") return DemographicVariable::Gender;
  if (text == "C") return DemographicVariable::Continent;
  if (text == "Y") return DemographicVariable::BirthYear;
  throw ValidationError("demographic variable must be one of G, C, Y (got '" +
                        std::string(text) + "')");
}

std::string SubgroupKey::label() const {
  return std::string(1, to_char(variable)) + ":" + group;
}

std::string birth_year_band(int year) {
  if (year <= 1980) return "~80";
  if (year <= 1990) return "80~90";
  return "90~";
}

std::optional<std::string> group_of(const Demographics& d, DemographicVariable variable) {
  switch (variable) {
    case DemographicVariable::Gender:
      if (d.gender) return std::string(to_string(*d.gender));
      break;
    case DemographicVariable::Continent:
      if (d.continent) return std::string(to_string(*d.continent));
      break;
    case DemographicVariable::BirthYear:
      if (d.birth_year) return birth_year_band(*d.birth_year);
      break;
  }
  return std::nullopt;
}

std::vector<std::string> named_groups(DemographicVariable variable) {
  switch (variable) {
    case DemographicVariable::Gender: return {"M", "F"};
    case DemographicVariable::Continent: return {"AS", "AF", "EU", "NA", "SA"};
    case DemographicVariable::BirthYear: return {"~80", "80~90", "90~"};
  }
  return {};
}

SubgroupMap build_subgroups(std::span<const StudentRecord> records,
                            DemographicVariable variable, bool include_unspecified) {
  SubgroupMap groups;
  for (const std::string& name : named_groups(variable)) {
    groups[SubgroupKey{variable, name}];
  }
  if (include_unspecified) groups[SubgroupKey{variable, std::string(kUnspecified)}];
  for (const StudentRecord& rec : records) {
    auto tag = group_of(rec.demographics, variable);
    if (tag) {
      groups[SubgroupKey{variable, *tag}].push_back(rec.student_id);
    } else if (include_unspecified) {
      groups[SubgroupKey{variable, std::string(kUnspecified)}].push_back(rec.student_id);
    }
  }
  return groups;
}

std::pair<std::size_t, std::size_t> train_test_sizes(std::size_t n, double train_fraction) {
  if (n < 2) return {n, 0};
  auto train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  train = std::clamp<std::size_t>(train, 1, n - 1);
  return {train, n - train};
}

std::size_t validation_size(std::size_t n_train, double val_fraction) {
  if (n_train < 2) return 0;
  auto val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n_train)));
  return std::clamp<std::size_t>(val, 1, n_train - 1);
}

DatasetSplit split_train_test(const SubgroupMap& groups, std::uint64_t seed,
                              double train_fraction, double val_fraction) {
  DatasetSplit split;
  std::uint64_t group_index = 0;
  for (const auto& [key, ids] : groups) {
    ++group_index;
    if (ids.empty()) continue;
    if (ids.size() < 2) {
      throw SplitError("subgroup " + key.label() +
                       " has a single student; cannot form both train and test sets");
    }
    std::vector<std::string> shuffled = ids;
    Rng rng = make_rng({seed, group_index, 0x5b1fULL});
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto [n_train, n_test] = train_test_sizes(shuffled.size(), train_fraction);
    const std::size_t n_val = validation_size(n_train, val_fraction);
    SubgroupSplit& out = split.groups[key];
    auto it = shuffled.begin();
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train - n_val));
    it += static_cast<std::ptrdiff_t>(n_train - n_val);
    out.val.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    out.test.assign(it, shuffled.end());
    (void)n_test;
  }
  return split;
}

}  // namespace edufed
