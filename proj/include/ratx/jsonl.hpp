#pragma once

#include <fstream>
#include <functional>
#include <string>

#include "json.hpp"
#include "ratx/common.hpp"

namespace ratx {

using Json = nlohmann::json;

// Streams a JSON Lines file, invoking fn(record, line_number) per non-empty
// line. Line numbers are 1-based. Malformed JSON raises ParseError.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json rec = Json::parse(line, nullptr, false);
    if (rec.is_discarded()) throw ParseError("malformed JSON in " + path, lineno);
    fn(rec, lineno);
  }
}

inline std::string require_string(const Json& rec, const char* key, std::size_t lineno) {
  if (!rec.contains(key) || !rec[key].is_string())
    throw ParseError(std::string("missing or non-string field \"") + key + "\"", lineno);
  return rec[key].get<std::string>();
}

inline std::size_t require_uint(const Json& rec, const char* key, std::size_t lineno) {
  if (!rec.contains(key) || !rec[key].is_number_unsigned())
    throw ParseError(std::string("missing or non-integer field \"") + key + "\"", lineno);
  return rec[key].get<std::size_t>();
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path);
  }

  void write(const Json& rec) { out_ << rec.dump() << "\n"; }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

}  // namespace ratx
