#pragma once

#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "eventface/events.hpp"

// Manifest CSV: header "sample_id,identity,file", one row per sequence.
namespace eventface::manifest {

struct Row {
  std::string sample_id;
  std::size_t identity = 0;
  std::string file;

  bool operator==(const Row&) const = default;
};

inline std::string write_manifest(const std::vector<Row>& rows) {
  std::string out = "sample_id,identity,file\n";
  for (const auto& r : rows) out += r.sample_id + "," + std::to_string(r.identity) + "," + r.file + "\n";
  return out;
}

inline std::vector<Row> parse_manifest(std::string_view text) {
  std::vector<Row> rows;
  std::size_t start = 0, line = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view row = text.substr(start, end - start);
    start = end + 1;
    ++line;
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (line == 1) {
      if (row != "sample_id,identity,file")
        throw events::EventParseError(line, "manifest: expected header 'sample_id,identity,file'");
      continue;
    }
    if (row.empty()) continue;
    const auto fields = events::detail::split_commas(row);
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty())
      throw events::EventParseError(line, "manifest: expected 3 non-empty fields");
    const std::string id(fields[1]);
    char* endp = nullptr;
    const unsigned long long v = std::strtoull(id.c_str(), &endp, 10);
    if (id.empty() || *endp != '\0' || id[0] == '-') throw events::EventParseError(line, "manifest: bad identity '" + id + "'");
    rows.push_back({std::string(fields[0]), static_cast<std::size_t>(v), std::string(fields[2])});
  }
  if (line == 0) throw events::EventParseError(1, "manifest: empty file");
  return rows;
}

}  // namespace eventface::manifest
