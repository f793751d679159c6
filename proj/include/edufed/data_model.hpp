#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edufed {

/// Clickstream activity types. The four watch kinds are tied to a lecture
/// video; the three forum kinds are not.
enum class ActivityKind : std::uint8_t {
  WatchNoQuiz = 0,
  WatchCorrect,
  WatchIncorrect,
  WatchNoAnswer,
  ForumPost,
  ForumReply,
  ForumView,
};

inline constexpr int kNumActivityKinds = 7;
inline constexpr int kNumWatchKinds = 4;
inline constexpr int kNumForumKinds = 3;

constexpr bool is_watch(ActivityKind kind) {
  return static_cast<int>(kind) < kNumWatchKinds;
}

std::string_view to_string(ActivityKind kind);
ActivityKind parse_activity_kind(std::string_view text);

struct ActivityEvent {
  std::string student_id;
  std::int64_t timestamp = 0;
  ActivityKind kind = ActivityKind::ForumView;
  std::optional<int> video_index;
  // Opaque forum text. Stored if present, never read by any model.
  std::optional<std::string> text;
};

struct QuizOutcome {
  double points = 0.0;
  double max_points = 1.0;

  bool first_attempt_score() const;
};

/// 1 iff the first attempt earned full credit.
int score_first_attempt(double points, double max_points);

/// One encoded time step: (video one-hot | watch-kind one-hot | forum-kind
/// one-hot), width n + 7. Stored by the positions of its set bits; the
/// all-zero vector (used to mask a position) has neither slot set.
class EncodedActivity {
 public:
  EncodedActivity() = default;

  static EncodedActivity zero(int n_videos);
  static EncodedActivity watch(int n_videos, int video_index, ActivityKind kind);
  static EncodedActivity forum(int n_videos, ActivityKind kind);

  int width() const { return n_videos_ + kNumActivityKinds; }
  int n_videos() const { return n_videos_; }
  bool is_zero() const { return kind_bit_ < 0; }
  std::optional<ActivityKind> kind() const;
  std::optional<int> video_index() const;

  // Indices of set bits in ascending order (0, 1 or 2 entries).
  int num_active() const;
  int active(int i) const;

  std::vector<std::uint8_t> bits() const;

  friend bool operator==(const EncodedActivity&, const EncodedActivity&) = default;

 private:
  EncodedActivity(int n, int video_bit, int kind_bit)
      : n_videos_(n), video_bit_(video_bit), kind_bit_(kind_bit) {}

  int n_videos_ = 0;
  int video_bit_ = -1;
  int kind_bit_ = -1;
};

/// Encodes one event. A watch event carrying a quiz outcome is resolved to
/// watch_correct / watch_incorrect from the first-attempt score; without an
/// outcome the event's own watch kind is kept.
EncodedActivity encode_event(const ActivityEvent& event,
                             const std::optional<QuizOutcome>& outcome,
                             int n_videos);

enum class Gender : std::uint8_t { M, F };
enum class Continent : std::uint8_t { AS, AF, EU, NA, SA };

struct Demographics {
  std::optional<Gender> gender;
  std::optional<Continent> continent;
  std::optional<int> birth_year;
};

std::string_view to_string(Gender g);
std::string_view to_string(Continent c);
std::optional<Gender> parse_gender(std::string_view text);
std::optional<Continent> parse_continent(std::string_view text);

struct StudentRecord {
  std::string student_id;
  Demographics demographics;
  std::vector<EncodedActivity> sequence;
  std::map<int, int> quiz_responses;  // video index -> first-attempt score
  int label = 0;                       // 1 = pass
  int generating_profile = -1;         // synthetic cohorts only; diagnostics
};

inline constexpr std::size_t kDefaultMaxSequenceLength = 256;

/// Keeps the most recent `max_length` events.
void cap_sequence(StudentRecord& record, std::size_t max_length);

/// Builds student records from events in file order. Events are stably sorted
/// by timestamp, so ties keep their input order. Students listed in
/// `students` but without events get no record.
struct StudentInfo {
  std::string student_id;
  Demographics demographics;
  int label = 0;
};
struct EventRow {
  ActivityEvent event;
  std::optional<QuizOutcome> outcome;
};
std::vector<StudentRecord> assemble_records(std::span<const EventRow> events,
                                            std::span<const StudentInfo> students,
                                            int n_videos,
                                            std::size_t max_length = kDefaultMaxSequenceLength);

enum class DemographicVariable : std::uint8_t { Gender, Continent, BirthYear };

char to_char(DemographicVariable v);
DemographicVariable parse_variable(std::string_view text);

inline constexpr std::string_view kUnspecified = "unspecified";

struct SubgroupKey {
  DemographicVariable variable = DemographicVariable::Gender;
  std::string group;

  std::string label() const;  // e.g. "G:M"
  friend auto operator<=>(const SubgroupKey&, const SubgroupKey&) = default;
};

/// Birth-year band tag: "~80" (Y <= 1980), "80~90" (1980 < Y <= 1990), "90~".
std::string birth_year_band(int year);

/// Group tag of a student for `variable`, or nullopt when not provided.
std::optional<std::string> group_of(const Demographics& d, DemographicVariable variable);

/// Subgroup tags in canonical order for a variable (named groups only).
std::vector<std::string> named_groups(DemographicVariable variable);

using SubgroupMap = std::map<SubgroupKey, std::vector<std::string>>;

SubgroupMap build_subgroups(std::span<const StudentRecord> records,
                            DemographicVariable variable, bool include_unspecified);

struct SubgroupSplit {
  std::vector<std::string> train;  // fit set
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct DatasetSplit {
  std::map<SubgroupKey, SubgroupSplit> groups;
};

/// Per-subgroup 4:1 train/test split, then 20% of train carved out as
/// validation. Sizes are floored with a minimum of one per non-empty bucket.
DatasetSplit split_train_test(const SubgroupMap& groups, std::uint64_t seed,
                              double train_fraction = 0.8, double val_fraction = 0.2);

/// Sizes of the (train, test) buckets for a group of size n.
std::pair<std::size_t, std::size_t> train_test_sizes(std::size_t n, double train_fraction);
/// Validation size carved from a train bucket of size n.
std::size_t validation_size(std::size_t n_train, double val_fraction);

}  // namespace edufed
