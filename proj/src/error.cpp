#include "fdbq/error.hpp"

namespace fdbq {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::shape_mismatch: return "shape_mismatch";
        case ErrorKind::io: return "io";
        case ErrorKind::format: return "format";
        case ErrorKind::numeric: return "numeric";
    }
    return "unknown";
}

}  // namespace fdbq
