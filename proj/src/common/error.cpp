#include "odsurv/common/error.hpp"

namespace odsurv {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Ingest: return "ingest";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Parse: return "parse";
        case ErrorKind::Configuration: return "configuration";
        case ErrorKind::Split: return "split";
        case ErrorKind::Training: return "training";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Transport: return "transport";
        case ErrorKind::Stage: return "stage";
    }
    return "unknown";
}

}  // namespace odsurv
