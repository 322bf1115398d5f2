#pragma once

#include <stdexcept>
#include <string>

namespace ecdm {

enum class ErrorKind { io, config, precondition, numeric };

/// Base of every error thrown by the library. The kind decides the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class PreconditionError : public Error {
public:
    explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

inline int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::io:
    case ErrorKind::config: return 2;
    case ErrorKind::precondition: return 3;
    case ErrorKind::numeric: return 4;
    }
    return 1;
}

} // namespace ecdm
