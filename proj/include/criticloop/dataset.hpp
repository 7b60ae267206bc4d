#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace criticloop {

// One evaluation question. gold is the reference final answer; the optional
// reference solution feeds hinted critique prompts and difficulty counting.
struct Question {
  std::string id;
  std::string problem;
  std::string gold;
  std::optional<std::string> reference_solution;
  std::optional<int> level;  // 1..5 when the dataset ships one
};

class DatasetError : public std::runtime_error {
 public:
  explicit DatasetError(const std::string& what) : std::runtime_error(what) {}
};

// Reads a questions file: one JSON object per line with required fields
// id/problem/gold and optional reference_solution/level. Throws DatasetError
// on missing fields, duplicate ids, or unparsable lines.
std::vector<Question> load_questions(const std::string& path);

// Atomically writes `content` to `path` (temp file + rename) so readers never
// observe a partially written artifact.
void atomic_write_file(const std::string& path, const std::string& content);

// Reads a whole file; throws DatasetError when it cannot be opened.
std::string read_file(const std::string& path);

}  // namespace criticloop
