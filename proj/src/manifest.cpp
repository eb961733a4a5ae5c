#include "disagg/manifest.hpp"

#include "disagg/types.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace disagg {

std::string file_checksum_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file for checksum: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::add_input(const std::string& path) {
  input_checksums.emplace_back(path, file_checksum_hex(path));
}

void RunManifest::write(const std::string& dir, const std::string& name) const {
  nlohmann::json j;
  j["command_line"] = command_line;
  j["tool_version"] = tool_version;
  if (seeded) j["seed"] = seed;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  nlohmann::json inputs = nlohmann::json::object();
  for (const auto& [path, sum] : input_checksums) inputs[path] = sum;
  j["input_checksums"] = inputs;

  std::filesystem::create_directories(dir);
  const auto target = std::filesystem::path(dir) / name;
  const auto tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write manifest: " + tmp);
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace disagg
