#ifndef PROCGT_ERRORS_HPP
#define PROCGT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace procgt {

// Exit-code classes used by the CLI: 1 usage, 2 data, 3 numeric.
enum class ErrorKind {
    Usage,
    MissingColumn,
    UnparseableTimestamp,
    EmptyLog,
    MalformedXml,
    MissingMandatoryAttribute,
    TraceTooShort,
    TooFewCases,
    DegenerateStat,
    Io,
    SchemaVersionMismatch,
    ShapeMismatch,
    LengthMismatch,
    PrefixTooShort,
    NonFiniteOutput,
    NonFiniteGradient,
    Diverged,
};

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return "Usage";
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::UnparseableTimestamp: return "UnparseableTimestamp";
        case ErrorKind::EmptyLog: return "EmptyLog";
        case ErrorKind::MalformedXml: return "MalformedXml";
        case ErrorKind::MissingMandatoryAttribute: return "MissingMandatoryAttribute";
        case ErrorKind::TraceTooShort: return "TraceTooShort";
        case ErrorKind::TooFewCases: return "TooFewCases";
        case ErrorKind::DegenerateStat: return "DegenerateStat";
        case ErrorKind::Io: return "Io";
        case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::PrefixTooShort: return "PrefixTooShort";
        case ErrorKind::NonFiniteOutput: return "NonFiniteOutput";
        case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorKind::Diverged: return "Diverged";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
            case ErrorKind::Usage:
                return 1;
            case ErrorKind::NonFiniteOutput:
            case ErrorKind::NonFiniteGradient:
            case ErrorKind::Diverged:
                return 3;
            default:
                return 2;
        }
    }

private:
    ErrorKind kind_;
};

} // namespace procgt

#endif
