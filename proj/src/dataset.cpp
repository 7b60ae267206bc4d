#include "criticloop/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace criticloop {

using nlohmann::json;

std::vector<Question> load_questions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset: " + path);

  std::vector<Question> questions;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    Question q;
    try {
      q.id = j.at("id").get<std::string>();
      q.problem = j.at("problem").get<std::string>();
      q.gold = j.at("gold").get<std::string>();
    } catch (const json::exception& e) {
      throw DatasetError(path + ":" + std::to_string(lineno) + ": missing field: " + e.what());
    }
    if (q.id.empty() || q.gold.empty())
      throw DatasetError(path + ":" + std::to_string(lineno) + ": id and gold must be non-empty");
    if (!seen.insert(q.id).second)
      throw DatasetError(path + ":" + std::to_string(lineno) + ": duplicate question id " + q.id);
    if (j.contains("reference_solution")) q.reference_solution = j["reference_solution"].get<std::string>();
    if (j.contains("level")) {
      int level = j["level"].get<int>();
      if (level < 1 || level > 5)
        throw DatasetError(path + ":" + std::to_string(lineno) + ": level out of range: " + std::to_string(level));
      q.level = level;
    }
    questions.push_back(std::move(q));
  }
  return questions;
}

void atomic_write_file(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot open for writing: " + tmp);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DatasetError("short write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DatasetError("rename failed: " + tmp + " -> " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace criticloop
