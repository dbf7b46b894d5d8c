#pragma once

#include <stdexcept>
#include <string>

namespace tapsense {

enum class ErrorKind {
    FileNotFound,
    UnsupportedEncoding,
    EmptyAudio,
    Io,
    Precondition,
    MalformedInput,
    NoSignal,
    DegenerateTemplate,
    MissingChannel,
    InsufficientHead,
    DimensionMismatch,
    Config,
    UnsupportedVersion,
};

inline const char * to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::FileNotFound:        return "file not found";
        case ErrorKind::UnsupportedEncoding: return "unsupported encoding";
        case ErrorKind::EmptyAudio:          return "empty audio";
        case ErrorKind::Io:                  return "i/o error";
        case ErrorKind::Precondition:        return "precondition violated";
        case ErrorKind::MalformedInput:      return "malformed input";
        case ErrorKind::NoSignal:            return "no signal";
        case ErrorKind::DegenerateTemplate:  return "degenerate template";
        case ErrorKind::MissingChannel:      return "missing channel";
        case ErrorKind::InsufficientHead:    return "insufficient head";
        case ErrorKind::DimensionMismatch:   return "dimension mismatch";
        case ErrorKind::Config:              return "config error";
        case ErrorKind::UnsupportedVersion:  return "unsupported version";
    }
    return "unknown";
}

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can dispatch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string & message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string & message) {
    if (!condition) fail(ErrorKind::Precondition, message);
}

} // namespace tapsense
