#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "fdbq/error.hpp"

namespace fdbq::cli {

// Process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_internal = 1,
    exit_usage = 2,    // bad flags, config keys or values
    exit_io = 3,       // unreadable or unwritable files
    exit_data = 4,     // malformed checkpoint/report, shape mismatch
    exit_numeric = 5,  // divergence, non-finite values
};

int exit_code_for(ErrorKind kind) noexcept;

// Environment variable naming the default report directory.
inline constexpr const char* report_dir_env = "FDBQ_REPORT_DIR";

// Runs one command. args excludes the program name. Diagnostics go to `err`
// as "error[<category>]: <message>".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fdbq::cli
