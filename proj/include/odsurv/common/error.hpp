#pragma once

#include <stdexcept>
#include <string>

namespace odsurv {

// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorKind {
    Ingest,
    Validation,
    Parse,
    Configuration,
    Split,
    Training,
    Shape,
    Transport,
    Stage,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct IngestError : Error {
    explicit IngestError(const std::string& m) : Error(ErrorKind::Ingest, m) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error(ErrorKind::Validation, m) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error(ErrorKind::Parse, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::Configuration, m) {}
};
struct SplitError : Error {
    explicit SplitError(const std::string& m) : Error(ErrorKind::Split, m) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& m) : Error(ErrorKind::Training, m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::Shape, m) {}
};
struct TransportError : Error {
    explicit TransportError(const std::string& m) : Error(ErrorKind::Transport, m) {}
};
struct StageError : Error {
    explicit StageError(const std::string& m) : Error(ErrorKind::Stage, m) {}
};

}  // namespace odsurv
