#pragma once

#include <stdexcept>
#include <string>

namespace pgla {

enum class ErrorKind {
    Parameter,       // out-of-range or inconsistent numeric argument
    Shape,           // tensor length/shape mismatch
    Layout,          // layer layout mismatch
    UndefinedMetric, // e.g. cosine of a zero vector
    Spec,            // incomposable model specification
    Input,           // bad runtime input (label out of range, empty dataset)
    Structure,       // unrecognizable gradient shape pattern
    Format,          // malformed file
    Usage,           // API misuse (missing condition, bad subcommand)
    Config,          // invalid experiment configuration (exit code 2)
    MissingArtifact, // required input file absent (exit code 3)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Parameter: return "parameter";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Layout: return "layout";
        case ErrorKind::UndefinedMetric: return "undefined-metric";
        case ErrorKind::Spec: return "spec";
        case ErrorKind::Input: return "input";
        case ErrorKind::Structure: return "structure";
        case ErrorKind::Format: return "format";
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Config: return "config";
        case ErrorKind::MissingArtifact: return "missing-artifact";
    }
    return "unknown";
}

} // namespace pgla
