#include "edufed/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "edufed/errors.hpp"

namespace edufed {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw FormatError("unterminated quoted CSV field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

namespace {

class CsvTable {
 public:
  CsvTable(std::istream& in, const std::vector<std::string>& required) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV input (missing header)");
    const auto header = parse_csv_line(line);
    for (std::size_t i = 0; i < header.size(); ++i) columns_[header[i]] = i;
    for (const auto& name : required) {
      if (!columns_.count(name)) throw FormatError("CSV header lacks column '" + name + "'");
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      auto row = parse_csv_line(line);
      if (row.size() != header.size()) {
        throw FormatError("CSV line " + std::to_string(line_no) + " has " +
                          std::to_string(row.size()) + " fields, expected " +
                          std::to_string(header.size()));
      }
      rows_.push_back(std::move(row));
      line_numbers_.push_back(line_no);
    }
  }

  std::size_t size() const { return rows_.size(); }
  bool has(const std::string& column) const { return columns_.count(column) > 0; }
  const std::string& get(std::size_t row, const std::string& column) const {
    return rows_[row][columns_.at(column)];
  }
  std::size_t line(std::size_t row) const { return line_numbers_[row]; }

 private:
  std::unordered_map<std::string, std::size_t> columns_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::size_t> line_numbers_;
};

template <typename T>
T parse_number(const std::string& text, std::size_t line, const char* what) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw FormatError("line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<EventRow> read_events_csv(std::istream& in) {
  CsvTable table(in, {"student_id", "unix_timestamp", "kind", "video_index", "points",
                      "max_points"});
  std::vector<EventRow> out;
  out.reserve(table.size());
  const bool has_text = table.has("text");
  for (std::size_t r = 0; r < table.size(); ++r) {
    const std::size_t line = table.line(r);
    EventRow row;
    row.event.student_id = table.get(r, "student_id");
    row.event.timestamp =
        parse_number<std::int64_t>(table.get(r, "unix_timestamp"), line, "timestamp");
    try {
      row.event.kind = parse_activity_kind(table.get(r, "kind"));
    } catch (const EncodingError& e) {
      throw FormatError("line " + std::to_string(line) + ": " + e.what());
    }
    if (const auto& v = table.get(r, "video_index"); !v.empty()) {
      row.event.video_index = parse_number<int>(v, line, "video_index");
    }
    const auto& pts = table.get(r, "points");
    const auto& maxp = table.get(r, "max_points");
    if (!pts.empty() || !maxp.empty()) {
      if (pts.empty() || maxp.empty()) {
        throw FormatError("line " + std::to_string(line) +
                          ": points and max_points must be given together");
      }
      row.outcome = QuizOutcome{parse_number<double>(pts, line, "points"),
                                parse_number<double>(maxp, line, "max_points")};
    }
    if (has_text && !table.get(r, "text").empty()) row.event.text = table.get(r, "text");
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<StudentInfo> read_students_csv(std::istream& in) {
  CsvTable table(in, {"student_id", "gender", "continent", "birth_year", "label"});
  std::vector<StudentInfo> out;
  out.reserve(table.size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    const std::size_t line = table.line(r);
    StudentInfo info;
    info.student_id = table.get(r, "student_id");
    if (const auto& g = table.get(r, "gender"); !g.empty()) {
      info.demographics.gender = parse_gender(g);
      if (!info.demographics.gender) {
        throw FormatError("line " + std::to_string(line) + ": bad gender '" + g + "'");
      }
    }
    if (const auto& c = table.get(r, "continent"); !c.empty()) {
      info.demographics.continent = parse_continent(c);
      if (!info.demographics.continent) {
        throw FormatError("line " + std::to_string(line) + ": bad continent '" + c + "'");
      }
    }
    if (const auto& y = table.get(r, "birth_year"); !y.empty()) {
      info.demographics.birth_year = parse_number<int>(y, line, "birth_year");
    }
    info.label = parse_number<int>(table.get(r, "label"), line, "label");
    if (info.label != 0 && info.label != 1) {
      throw FormatError("line " + std::to_string(line) + ": label must be 0 or 1");
    }
    out.push_back(std::move(info));
  }
  return out;
}

void write_events_csv(std::ostream& out, const std::vector<EventRow>& events) {
  bool any_text = false;
  for (const auto& e : events) any_text = any_text || e.event.text.has_value();
  out << "student_id,unix_timestamp,kind,video_index,points,max_points"
      << (any_text ? ",text" : "") << '\n';
  for (const auto& e : events) {
    out << csv_escape(e.event.student_id) << ',' << e.event.timestamp << ','
        << to_string(e.event.kind) << ',';
    if (e.event.video_index) out << *e.event.video_index;
    out << ',';
    if (e.outcome) out << format_double(e.outcome->points);
    out << ',';
    if (e.outcome) out << format_double(e.outcome->max_points);
    if (any_text) out << ',' << csv_escape(e.event.text.value_or(""));
    out << '\n';
  }
}

void write_students_csv(std::ostream& out, const std::vector<StudentInfo>& students) {
  out << "student_id,gender,continent,birth_year,label\n";
  for (const auto& s : students) {
    out << csv_escape(s.student_id) << ',';
    if (s.demographics.gender) out << to_string(*s.demographics.gender);
    out << ',';
    if (s.demographics.continent) out << to_string(*s.demographics.continent);
    out << ',';
    if (s.demographics.birth_year) out << *s.demographics.birth_year;
    out << ',' << s.label << '\n';
  }
}

std::vector<EventRow> read_events_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open events file " + path.string());
  return read_events_csv(in);
}

std::vector<StudentInfo> read_students_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open students file " + path.string());
  return read_students_csv(in);
}

void write_split_csv(std::ostream& out, const DatasetSplit& split) {
  out << "student_id,subgroup,role\n";
  for (const auto& [key, s] : split.groups) {
    const std::string label = csv_escape(key.label());
    for (const auto& id : s.train) out << csv_escape(id) << ',' << label << ",train\n";
    for (const auto& id : s.val) out << csv_escape(id) << ',' << label << ",val\n";
    for (const auto& id : s.test) out << csv_escape(id) << ',' << label << ",test\n";
  }
}

DatasetSplit read_split_csv(std::istream& in) {
  CsvTable table(in, {"student_id", "subgroup", "role"});
  DatasetSplit split;
  for (std::size_t r = 0; r < table.size(); ++r) {
    const std::string& label = table.get(r, "subgroup");
    const auto colon = label.find(':');
    if (colon != 1) throw FormatError("bad subgroup label '" + label + "'");
    SubgroupKey key{parse_variable(label.substr(0, 1)), label.substr(2)};
    const std::string& role = table.get(r, "role");
    auto& g = split.groups[key];
    const std::string& id = table.get(r, "student_id");
    if (role == "train") {
      g.train.push_back(id);
    } else if (role == "val") {
      g.val.push_back(id);
    } else if (role == "test") {
      g.test.push_back(id);
    } else {
      throw FormatError("line " + std::to_string(table.line(r)) + ": bad role '" + role + "'");
    }
  }
  return split;
}

}  // namespace edufed
