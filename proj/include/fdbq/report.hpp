#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace fdbq::report {

inline constexpr int schema_version = 1;

// Everything that determines a run's result. Wall-clock time is kept out of
// the report (see write) so that replaying a config reproduces the report
// byte for byte.
struct Report {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json metrics = nlohmann::json::object();
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const Report& r);
// Rejects documents whose schema_version differs from this build's.
Report from_json(const nlohmann::json& j);

// Canonical text form: sorted keys, two-space indent, trailing newline.
std::string dump(const Report& r);

// Writes the report to `path` and the run's wall-clock seconds to
// "<path>.timing.json".
void write(const std::filesystem::path& path, const Report& r, double wall_seconds);
Report read(const std::filesystem::path& path);

std::filesystem::path timing_path(const std::filesystem::path& report_path);

}  // namespace fdbq::report
