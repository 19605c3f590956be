#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nelscope/errors.hpp"

namespace nelscope {

using Json = nlohmann::json;

// Append-only JSON-lines sink. One object per line, flushed per append so a
// crash loses at most the line being written.
class JsonlWriter {
 public:
  JsonlWriter() = default;

  explicit JsonlWriter(const std::string& path) : out_(path, std::ios::app) {
    if (!out_.is_open()) throw ConfigError("cannot open for append: " + path);
  }

  bool is_open() const { return out_.is_open(); }

  void append(const Json& obj) {
    if (!out_.is_open()) return;
    out_ << obj.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw ConfigError("cannot open: " + path);
  std::vector<Json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(Json::parse(line));
  }
  return rows;
}

}  // namespace nelscope
