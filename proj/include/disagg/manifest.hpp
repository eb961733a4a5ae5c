#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace disagg {

// Reproducibility record written atomically next to every output artifact.
struct RunManifest {
  std::string command_line;
  std::string tool_version;
  std::uint64_t seed = 0;
  bool seeded = false;
  std::vector<std::pair<std::string, std::string>> input_checksums;  // path -> fnv1a hex
  std::string started_at;   // ISO-8601 UTC
  std::string finished_at;

  void add_input(const std::string& path);  // hashes the file now
  void write(const std::string& dir, const std::string& name = "manifest.json") const;
};

std::string file_checksum_hex(const std::string& path);
std::string iso8601_now();

}  // namespace disagg
