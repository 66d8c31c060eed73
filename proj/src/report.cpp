#include "fdbq/report.hpp"

#include "fdbq/corpus.hpp"
#include "fdbq/error.hpp"

namespace fdbq::report {

using nlohmann::json;

json to_json(const Report& r) {
    return json{{"schema_version", schema_version},
                {"command", r.command},
                {"config", r.config},
                {"metrics", r.metrics},
                {"seed", r.seed}};
}

Report from_json(const json& j) {
    try {
        const int v = j.at("schema_version").get<int>();
        if (v != schema_version)
            throw Error(ErrorKind::format, "report: schema_version " + std::to_string(v) + " is not supported (expected " +
                                               std::to_string(schema_version) + ")");
        Report r;
        r.command = j.at("command").get<std::string>();
        r.config = j.at("config");
        r.metrics = j.at("metrics");
        r.seed = j.at("seed").get<std::uint64_t>();
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, std::string("report: ") + e.what());
    }
}

std::string dump(const Report& r) { return to_json(r).dump(2) + "\n"; }

std::filesystem::path timing_path(const std::filesystem::path& report_path) {
    return std::filesystem::path(report_path.string() + ".timing.json");
}

void write(const std::filesystem::path& path, const Report& r, double wall_seconds) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    corpus::write_text_file(path, dump(r));
    corpus::write_text_file(timing_path(path), json{{"wall_clock_seconds", wall_seconds}}.dump(2) + "\n");
}

Report read(const std::filesystem::path& path) {
    const std::string text = corpus::read_text_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::format, "report '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

}  // namespace fdbq::report
