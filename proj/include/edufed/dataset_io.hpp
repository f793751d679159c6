#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "edufed/data_model.hpp"

namespace edufed {

// events.csv:   student_id,unix_timestamp,kind,video_index,points,max_points[,text]
// students.csv: student_id,gender,continent,birth_year,label
// split CSV:    student_id,subgroup,role    (role in train|val|test)
// Empty fields denote absent optional values.

std::vector<std::string> parse_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

std::vector<EventRow> read_events_csv(std::istream& in);
std::vector<StudentInfo> read_students_csv(std::istream& in);
void write_events_csv(std::ostream& out, const std::vector<EventRow>& events);
void write_students_csv(std::ostream& out, const std::vector<StudentInfo>& students);

std::vector<EventRow> read_events_csv(const std::filesystem::path& path);
std::vector<StudentInfo> read_students_csv(const std::filesystem::path& path);

void write_split_csv(std::ostream& out, const DatasetSplit& split);
DatasetSplit read_split_csv(std::istream& in);

}  // namespace edufed
